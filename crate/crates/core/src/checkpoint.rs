//! Parameter checkpoints: one tensor file per weight plus `manifest.json`.
//!
//! ```text
//! manifest.json    {"parts", "channels", "embed_dim", "transform_dim", "wavelength_base"}
//! v_box.rft        [C_E, 4 C_E]
//! w_box_hat.rft    [K, C_g, C_E]
//! w_im.rft         [C_g, 2 C_E]
//! w_app.rft        [K, C_f]
//! offset_weight.rft, offset_bias.rft   optional, [2K, K C_f] and [2K]
//! ```
//!
//! Values are stored as 32-bit floats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, EmbeddingConfig, ParamKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pooling::OffsetPredictorParams;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST: &str = "manifest.json";
const OFFSET_WEIGHT: &str = "offset_weight.rft";
const OFFSET_BIAS: &str = "offset_bias.rft";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub parts: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub transform_dim: usize,
    pub wavelength_base: f64,
}

fn file_name(kind: ParamKind) -> String {
    format!("{}.rft", kind.name())
}

fn tensor_dims(params: &AttentionParams, kind: ParamKind) -> Vec<usize> {
    let cfg = params.config();
    match kind {
        ParamKind::WBoxHat => vec![params.parts(), cfg.transform_dim, cfg.embed_dim],
        _ => {
            let (r, c) = params.expected_shape(kind);
            vec![r, c]
        }
    }
}

pub fn save_params(dir: impl AsRef<Path>, params: &AttentionParams) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = params.config();
    let manifest = Manifest {
        parts: params.parts(),
        channels: params.channels(),
        embed_dim: cfg.embed_dim,
        transform_dim: cfg.transform_dim,
        wavelength_base: cfg.wavelength_base,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    for kind in ParamKind::ALL {
        let t = Tensor::from_f64(tensor_dims(params, kind), params.tensor(kind).data())?;
        write_tensor(dir.join(file_name(kind)), &t)?;
    }
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<AttentionParams> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let config = EmbeddingConfig {
        embed_dim: m.embed_dim,
        transform_dim: m.transform_dim,
        wavelength_base: m.wavelength_base,
    };
    let mut params = AttentionParams::zeros(config, m.parts, m.channels)?;
    for kind in ParamKind::ALL {
        let path = dir.join(file_name(kind));
        let t = read_tensor(&path)?;
        let want = tensor_dims(&params, kind);
        if t.dims() != want.as_slice() {
            return Err(Error::shape(format!(
                "{}: expected dims {want:?}, found {:?}",
                path.display(),
                t.dims()
            )));
        }
        let (r, c) = params.expected_shape(kind);
        *params.tensor_mut(kind) = Matrix::new(r, c, t.to_f64())?;
    }
    // Re-run the constructor checks on the loaded values.
    AttentionParams::new(
        config,
        m.parts,
        m.channels,
        params.v_box().clone(),
        params.w_box_hat().clone(),
        params.w_im().clone(),
        params.w_app().clone(),
    )
}

pub fn save_offset_predictor(dir: impl AsRef<Path>, p: &OffsetPredictorParams) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = p.parts();
    write_tensor(
        dir.join(OFFSET_WEIGHT),
        &Tensor::from_f64(vec![2 * k, k * p.channels()], p.weight())?,
    )?;
    write_tensor(
        dir.join(OFFSET_BIAS),
        &Tensor::from_f64(vec![2 * k], p.bias())?,
    )
}

/// `Ok(None)` when the checkpoint has no offset predictor.
pub fn load_offset_predictor(dir: impl AsRef<Path>) -> Result<Option<OffsetPredictorParams>> {
    let dir = dir.as_ref();
    let weight_path = dir.join(OFFSET_WEIGHT);
    if !weight_path.exists() {
        return Ok(None);
    }
    let weight = read_tensor(&weight_path)?;
    let bias = read_tensor(dir.join(OFFSET_BIAS))?;
    let (rows, cols) = match weight.dims() {
        &[r, c] if r % 2 == 0 && r > 0 => (r, c),
        d => return Err(Error::shape(format!("offset weight dims {d:?}"))),
    };
    let k = rows / 2;
    if cols % k != 0 {
        return Err(Error::shape(format!(
            "offset weight has {cols} columns, not a multiple of K={k}"
        )));
    }
    OffsetPredictorParams::new(k, cols / k, weight.to_f64(), bias.to_f64()).map(Some)
}
