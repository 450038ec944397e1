//! Metrics over learnt weight distributions and grayscale export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{InstanceMask, WeightField};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// `K` weight maps over the full `H x W` grid, each summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeightMap {
    parts: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DenseWeightMap {
    /// Builds a map from raw per-part values, renormalizing every part.
    pub fn new(parts: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != parts * height * width {
            return Err(Error::shape(format!(
                "weight map {parts}x{height}x{width} needs {} values, got {}",
                parts * height * width,
                data.len()
            )));
        }
        if parts == 0 || height == 0 || width == 0 {
            return Err(Error::shape("weight map dimensions must be positive"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let mut map = Self {
            parts,
            height,
            width,
            data,
        };
        let cells = height * width;
        for k in 0..parts {
            let part = &mut map.data[k * cells..(k + 1) * cells];
            let sum: f64 = part.iter().sum();
            if sum <= 0.0 {
                return Err(Error::invalid(format!("part {k} has no mass")));
            }
            part.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(map)
    }

    /// Scatters a sampled weight field onto the grid; unsampled cells get 0.
    pub fn from_weight_field(wf: &WeightField, height: usize, width: usize) -> Result<Self> {
        let cells = height * width;
        let mut data = vec![0.0; wf.parts() * cells];
        for k in 0..wf.parts() {
            for (p, &w) in wf.positions().iter().zip(wf.row(k)) {
                let (u, v) = p.as_cell(width, height).ok_or_else(|| {
                    Error::invalid(format!("position ({}, {}) is not a grid cell", p.u, p.v))
                })?;
                data[k * cells + v * width + u] += w;
            }
        }
        Self::new(wf.parts(), height, width, data)
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn part(&self, k: usize) -> &[f64] {
        let cells = self.height * self.width;
        &self.data[k * cells..(k + 1) * cells]
    }

    /// Per-cell maximum over parts (not normalized).
    pub fn max_pooled(&self) -> Vec<f64> {
        let mut out = self.part(0).to_vec();
        for k in 1..self.parts {
            for (o, &v) in out.iter_mut().zip(self.part(k)) {
                *o = o.max(v);
            }
        }
        out
    }
}

fn normalized(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    values.iter().map(|v| v / sum).collect()
}

fn smoothed(q: &[f64], epsilon: f64) -> Vec<f64> {
    if epsilon == 0.0 {
        return q.to_vec();
    }
    let total: f64 = q.iter().sum::<f64>() + epsilon * q.len() as f64;
    q.iter().map(|v| (v + epsilon) / total).collect()
}

/// `KL(p || q)` with `epsilon` added to `q` and renormalized. Terms with
/// `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "distributions have {} and {} entries",
            p.len(),
            q.len()
        )));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::invalid("epsilon must be finite and non-negative"));
    }
    let q = smoothed(q, epsilon);
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        if pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Average of `KL(P_a || P_b)` over all ordered pairs `a != b`.
pub fn mean_kl_between_parts(wm: &DenseWeightMap, epsilon: f64) -> Result<f64> {
    let k = wm.parts();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 parts, got {k}")));
    }
    let smoothed: Vec<Vec<f64>> = (0..k).map(|b| smoothed(wm.part(b), epsilon)).collect();
    let mut sum = 0.0;
    for a in 0..k {
        for (b, q) in smoothed.iter().enumerate() {
            if a != b {
                sum += kl_divergence(wm.part(a), q, 0.0)?;
            }
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// `KL(mask || max-pooled weights)`, both normalized to sum 1.
pub fn kl_of_mask(wm: &DenseWeightMap, mask: &InstanceMask, epsilon: f64) -> Result<f64> {
    if mask.height() != wm.height() || mask.width() != wm.width() {
        return Err(Error::shape(format!(
            "mask is {}x{} but weight map is {}x{}",
            mask.height(),
            mask.width(),
            wm.height(),
            wm.width()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::invalid("mask is empty"));
    }
    let p = normalized(&mask.to_values());
    let q = normalized(&wm.max_pooled());
    kl_divergence(&p, &q, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartSelector {
    Part(usize),
    MaxPooled,
}

/// Grayscale pixels `floor(255 * w / max + 0.5)`; all zero when the map is.
pub fn weight_map_pixels(wm: &DenseWeightMap, selector: PartSelector) -> Result<Vec<u8>> {
    let values = match selector {
        PartSelector::Part(k) if k < wm.parts() => wm.part(k).to_vec(),
        PartSelector::Part(k) => {
            return Err(Error::invalid(format!(
                "part {k} out of range for {} parts",
                wm.parts()
            )))
        }
        PartSelector::MaxPooled => wm.max_pooled(),
    };
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| (255.0 * v / max + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Encodes a binary PGM (`P5`, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn export_weight_map(
    wm: &DenseWeightMap,
    selector: PartSelector,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let pixels = weight_map_pixels(wm, selector)?;
    fs::write(path, encode_pgm(wm.width(), wm.height(), &pixels)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Position, Roi};

    #[test]
    fn identical_parts_have_zero_divergence() {
        let wm = DenseWeightMap::new(3, 2, 2, [1.0, 2.0, 3.0, 4.0].repeat(3)).unwrap();
        assert!(mean_kl_between_parts(&wm, DEFAULT_EPSILON).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_cell_pair() {
        let wm = DenseWeightMap::new(2, 1, 2, vec![0.75, 0.25, 0.5, 0.5]).unwrap();
        let forward = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        let backward = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * 2.0f64.ln();
        let v = mean_kl_between_parts(&wm, 0.0).unwrap();
        assert!((v - (forward + backward) / 2.0).abs() < 1e-15);
        assert!((v - 0.137_326_536).abs() < 1e-6, "{v}");
    }

    #[test]
    fn single_part_rejected() {
        let wm = DenseWeightMap::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert!(mean_kl_between_parts(&wm, 0.0).is_err());
    }

    #[test]
    fn uniform_weights_against_half_mask() {
        let (h, w) = (4, 6);
        let wm = DenseWeightMap::new(2, h, w, vec![1.0; 2 * h * w]).unwrap();
        let mask = InstanceMask::from_rect(h, w, &Roi::new(0.0, 0.0, 3.0, 4.0).unwrap());
        assert_eq!(mask.count(), 12);
        let v = kl_of_mask(&wm, &mask, DEFAULT_EPSILON).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn proportional_map_gives_zero() {
        let mask = InstanceMask::from_values(2, 2, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let wm = DenseWeightMap::new(1, 2, 2, vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        assert!(kl_of_mask(&wm, &mask, DEFAULT_EPSILON).unwrap() < 1e-7);
    }

    #[test]
    fn concentrating_on_mask_lowers_metric() {
        let mask = InstanceMask::from_values(1, 4, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut last = f64::INFINITY;
        for outside in [1.0, 0.5, 0.2, 0.05, 0.0] {
            let wm = DenseWeightMap::new(1, 1, 4, vec![1.0, 1.0, outside, outside]).unwrap();
            let v = kl_of_mask(&wm, &mask, DEFAULT_EPSILON).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn scatter_from_weight_field() {
        let wf = WeightField::new(
            2,
            vec![Position::cell(0, 0), Position::cell(2, 1)],
            vec![0.25, 0.75, 1.0, 0.0],
        )
        .unwrap();
        let wm = DenseWeightMap::from_weight_field(&wf, 2, 3).unwrap();
        assert_eq!(wm.part(0), &[0.25, 0.0, 0.0, 0.0, 0.0, 0.75]);
        assert_eq!(wm.part(1), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(wm.max_pooled(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.75]);
    }

    #[test]
    fn pixel_values() {
        let two = DenseWeightMap::new(1, 1, 2, vec![0.2, 0.1]).unwrap();
        assert_eq!(
            weight_map_pixels(&two, PartSelector::Part(0)).unwrap(),
            vec![255, 128]
        );
        let one_hot = DenseWeightMap::new(2, 1, 3, vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            weight_map_pixels(&one_hot, PartSelector::Part(0)).unwrap(),
            vec![0, 255, 0]
        );
        assert_eq!(
            weight_map_pixels(&one_hot, PartSelector::Part(1)).unwrap(),
            vec![255; 3]
        );
        assert!(weight_map_pixels(&one_hot, PartSelector::Part(2)).is_err());
        assert_eq!(
            weight_map_pixels(&one_hot, PartSelector::MaxPooled).unwrap(),
            vec![85, 255, 85]
        );
    }

    #[test]
    fn pgm_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.pgm");
        let wm = DenseWeightMap::new(1, 2, 1, vec![0.2, 0.1]).unwrap();
        export_weight_map(&wm, PartSelector::MaxPooled, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"P5\n1 2\n255\n\xff\x80".to_vec());
    }
}
