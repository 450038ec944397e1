//! File adapters for feature maps, RoI lists and masks.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};
use crate::types::{FeatureMap, InstanceMask, PartFeatureMatrix, Roi};

pub fn feature_map_from_tensor(t: &Tensor) -> Result<FeatureMap> {
    match *t.dims() {
        [h, w, c] => FeatureMap::new(h, w, c, t.to_f64()),
        _ => Err(Error::shape(format!(
            "feature tensor must have dims [H, W, C], got {:?}",
            t.dims()
        ))),
    }
}

pub fn feature_map_to_tensor(x: &FeatureMap) -> Result<Tensor> {
    Tensor::from_f64(vec![x.height(), x.width(), x.channels()], x.data())
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    feature_map_from_tensor(&read_tensor(path)?)
}

pub fn write_feature_map(path: impl AsRef<Path>, x: &FeatureMap) -> Result<()> {
    write_tensor(path, &feature_map_to_tensor(x)?)
}

pub fn read_rois(path: impl AsRef<Path>) -> Result<Vec<Roi>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rois: Vec<Roi> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    for (i, roi) in rois.iter().enumerate() {
        roi.validate()
            .map_err(|e| Error::invalid(format!("RoI #{i} in {}: {e}", path.display())))?;
    }
    Ok(rois)
}

pub fn write_rois(path: impl AsRef<Path>, rois: &[Roi]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(rois).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads either a single `[H, W]` mask or a stack `[N, H, W]`, one per RoI.
pub fn read_masks(path: impl AsRef<Path>) -> Result<Vec<InstanceMask>> {
    let t = read_tensor(path)?;
    let values = t.to_f64();
    match *t.dims() {
        [h, w] => Ok(vec![InstanceMask::from_values(h, w, &values)?]),
        [n, h, w] => (0..n)
            .map(|i| InstanceMask::from_values(h, w, &values[i * h * w..(i + 1) * h * w]))
            .collect(),
        _ => Err(Error::shape(format!(
            "mask tensor must have dims [H, W] or [N, H, W], got {:?}",
            t.dims()
        ))),
    }
}

pub fn write_mask(path: impl AsRef<Path>, mask: &InstanceMask) -> Result<()> {
    write_tensor(
        path,
        &Tensor::from_f64(vec![mask.height(), mask.width()], &mask.to_values())?,
    )
}

/// Stacks per-RoI outputs into an `[N, K, C_f]` tensor.
pub fn stack_part_features(outputs: &[PartFeatureMatrix]) -> Result<Tensor> {
    let (k, c) = outputs
        .first()
        .map(|y| (y.parts(), y.channels()))
        .unwrap_or((0, 0));
    let mut data = Vec::with_capacity(outputs.len() * k * c);
    for y in outputs {
        if y.parts() != k || y.channels() != c {
            return Err(Error::shape("per-RoI outputs disagree in shape"));
        }
        data.extend_from_slice(y.data());
    }
    Tensor::from_f64(vec![outputs.len(), k, c], &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rois.json");
        fs::write(&path, r#"[{"x1":0,"y1":0.5,"x2":4,"y2":4.25}]"#).unwrap();
        let rois = read_rois(&path).unwrap();
        assert_eq!(rois, vec![Roi::new(0.0, 0.5, 4.0, 4.25).unwrap()]);
        write_rois(&path, &rois).unwrap();
        assert_eq!(read_rois(&path).unwrap(), rois);
    }

    #[test]
    fn roi_json_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rois.json");
        fs::write(&path, r#"[{"x1":0,"y1":0}]"#).unwrap();
        assert!(matches!(read_rois(&path), Err(Error::Json { .. })));
        fs::write(&path, r#"[{"x1":3,"y1":0,"x2":1,"y2":1}]"#).unwrap();
        assert!(matches!(read_rois(&path), Err(Error::Invalid(_))));
        assert!(matches!(
            read_rois(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn feature_map_needs_rank_three() {
        let t = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(feature_map_from_tensor(&t).is_err());
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = feature_map_from_tensor(&t).unwrap();
        assert_eq!(x.cell(1, 0), &[3.0, 4.0]);
        assert_eq!(feature_map_to_tensor(&x).unwrap(), t);
    }

    #[test]
    fn mask_stacks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rft");
        write_tensor(
            &path,
            &Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let masks = read_masks(&path).unwrap();
        assert_eq!(masks.len(), 2);
        assert!(masks[0].get(0, 0) && masks[1].get(1, 0));
        write_tensor(&path, &Tensor::new(vec![1, 2], vec![1.0, 0.5]).unwrap()).unwrap();
        assert!(read_masks(&path).is_err());
    }
}
