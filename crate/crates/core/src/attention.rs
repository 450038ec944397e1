//! Learnable region feature extraction.
//!
//! Each part `k` weights the sampled support positions `p` by
//! `softmax_p(G_k(b, p) + A_k(x, p))`, where the geometric logit is the inner
//! product of a transformed box embedding and a transformed position embedding,
//! and the appearance logit is a 1x1 convolution of the feature at `p`. The
//! part feature is the weighted sum of the sampled features.
//!
//! The box transform is factored as `W_box_k = W_box_hat_k * V_box` with
//! `V_box` shared by all parts. Position keys `W_im * E_im(p)` and appearance
//! logits depend only on the map, so batch extraction computes them once per
//! cell and shares them across RoIs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::par::{IntoParallelRefIterator, ParallelIterator};
use crate::sampling::{build_plan, SamplingPlan, SupportSpec};
use crate::types::{FeatureMap, PartFeatureMatrix, Position, Roi, WeightField};

pub const DEFAULT_EMBED_DIM: usize = 512;
pub const DEFAULT_TRANSFORM_DIM: usize = 256;
pub const WAVELENGTH_BASE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Sinusoidal embedding size per scalar (`C_E`), even.
    pub embed_dim: usize,
    /// Shared dimension of the transformed box and position embeddings (`C_g`).
    pub transform_dim: usize,
    pub wavelength_base: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            transform_dim: DEFAULT_TRANSFORM_DIM,
            wavelength_base: WAVELENGTH_BASE,
        }
    }
}

impl EmbeddingConfig {
    pub fn new(embed_dim: usize, transform_dim: usize) -> Result<Self> {
        let cfg = Self {
            embed_dim,
            transform_dim,
            wavelength_base: WAVELENGTH_BASE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "embedding dim must be positive and even, got {}",
                self.embed_dim
            )));
        }
        if self.transform_dim == 0 {
            return Err(Error::invalid("transform dim must be positive"));
        }
        if !(self.wavelength_base.is_finite() && self.wavelength_base > 0.0) {
            return Err(Error::invalid("wavelength base must be positive"));
        }
        Ok(())
    }
}

/// Interleaved `[sin(z / base^(2i/C_E)), cos(z / base^(2i/C_E))]` for `i < C_E/2`.
pub fn embed_scalar(z: f64, cfg: &EmbeddingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.embed_dim);
    push_scalar_embedding(z, cfg, &mut out);
    out
}

fn push_scalar_embedding(z: f64, cfg: &EmbeddingConfig, out: &mut Vec<f64>) {
    let c_e = cfg.embed_dim as f64;
    for i in 0..cfg.embed_dim / 2 {
        let arg = z / cfg.wavelength_base.powf(2.0 * i as f64 / c_e);
        out.push(arg.sin());
        out.push(arg.cos());
    }
}

/// `[E(u), E(v)]`, length `2 * C_E`.
pub fn embed_position(p: Position, cfg: &EmbeddingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * cfg.embed_dim);
    push_scalar_embedding(p.u, cfg, &mut out);
    push_scalar_embedding(p.v, cfg, &mut out);
    out
}

/// `[E(x1), E(y1), E(x2), E(y2)]`, length `4 * C_E`.
pub fn embed_box(roi: &Roi, cfg: &EmbeddingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * cfg.embed_dim);
    for z in roi.coords() {
        push_scalar_embedding(z, cfg, &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    VBox,
    WBoxHat,
    WIm,
    WApp,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [Self::VBox, Self::WBoxHat, Self::WIm, Self::WApp];

    pub fn name(self) -> &'static str {
        match self {
            Self::VBox => "v_box",
            Self::WBoxHat => "w_box_hat",
            Self::WIm => "w_im",
            Self::WApp => "w_app",
        }
    }
}

/// Learnable tensors of the extractor.
///
/// | tensor      | shape               |
/// |-------------|---------------------|
/// | `v_box`     | `C_E x 4C_E`        |
/// | `w_box_hat` | `(K * C_g) x C_E`, block `k` is `W_box_hat_k` |
/// | `w_im`      | `C_g x 2C_E`        |
/// | `w_app`     | `K x C_f`           |
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    config: EmbeddingConfig,
    parts: usize,
    channels: usize,
    v_box: Matrix,
    w_box_hat: Matrix,
    w_im: Matrix,
    w_app: Matrix,
}

impl AttentionParams {
    pub fn new(
        config: EmbeddingConfig,
        parts: usize,
        channels: usize,
        v_box: Matrix,
        w_box_hat: Matrix,
        w_im: Matrix,
        w_app: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        if parts == 0 || channels == 0 {
            return Err(Error::invalid("K and C_f must be positive"));
        }
        let params = Self {
            config,
            parts,
            channels,
            v_box,
            w_box_hat,
            w_im,
            w_app,
        };
        for kind in ParamKind::ALL {
            let (rows, cols) = params.expected_shape(kind);
            let m = params.tensor(kind);
            if (m.rows(), m.cols()) != (rows, cols) {
                return Err(Error::shape(format!(
                    "{} must be {rows}x{cols}, got {}x{}",
                    kind.name(),
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(kind.name().into()));
            }
        }
        Ok(params)
    }

    pub fn zeros(config: EmbeddingConfig, parts: usize, channels: usize) -> Result<Self> {
        Self::from_fn(config, parts, channels, |_, _, _| 0.0)
    }

    /// Fills every entry with `f(tensor, row, col)`, tensors in [`ParamKind::ALL`] order.
    pub fn from_fn(
        config: EmbeddingConfig,
        parts: usize,
        channels: usize,
        mut f: impl FnMut(ParamKind, usize, usize) -> f64,
    ) -> Result<Self> {
        config.validate()?;
        let shape = |kind| shape_for(&config, parts, channels, kind);
        let mut build = |kind| {
            let (r, c) = shape(kind);
            Matrix::from_fn(r, c, |i, j| f(kind, i, j))
        };
        let v_box = build(ParamKind::VBox);
        let w_box_hat = build(ParamKind::WBoxHat);
        let w_im = build(ParamKind::WIm);
        let w_app = build(ParamKind::WApp);
        Self::new(config, parts, channels, v_box, w_box_hat, w_im, w_app)
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn expected_shape(&self, kind: ParamKind) -> (usize, usize) {
        shape_for(&self.config, self.parts, self.channels, kind)
    }

    pub fn tensor(&self, kind: ParamKind) -> &Matrix {
        match kind {
            ParamKind::VBox => &self.v_box,
            ParamKind::WBoxHat => &self.w_box_hat,
            ParamKind::WIm => &self.w_im,
            ParamKind::WApp => &self.w_app,
        }
    }

    pub fn tensor_mut(&mut self, kind: ParamKind) -> &mut Matrix {
        match kind {
            ParamKind::VBox => &mut self.v_box,
            ParamKind::WBoxHat => &mut self.w_box_hat,
            ParamKind::WIm => &mut self.w_im,
            ParamKind::WApp => &mut self.w_app,
        }
    }

    pub fn v_box(&self) -> &Matrix {
        &self.v_box
    }

    pub fn w_box_hat(&self) -> &Matrix {
        &self.w_box_hat
    }

    pub fn w_im(&self) -> &Matrix {
        &self.w_im
    }

    pub fn w_app(&self) -> &Matrix {
        &self.w_app
    }

    /// `W_box_hat_k` as its own `C_g x C_E` matrix.
    pub fn w_box_hat_part(&self, k: usize) -> Matrix {
        let (c_g, c_e) = (self.config.transform_dim, self.config.embed_dim);
        Matrix::new(
            c_g,
            c_e,
            self.w_box_hat.data()[k * c_g * c_e..(k + 1) * c_g * c_e].to_vec(),
        )
        .expect("block shape")
    }

    pub fn parameter_count(&self) -> usize {
        ParamKind::ALL
            .iter()
            .map(|&k| self.tensor(k).data().len())
            .sum()
    }

    fn check_map(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::shape(format!(
                "parameters expect C_f = {}, feature map has {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }
}

fn shape_for(
    cfg: &EmbeddingConfig,
    parts: usize,
    channels: usize,
    kind: ParamKind,
) -> (usize, usize) {
    let (c_e, c_g) = (cfg.embed_dim, cfg.transform_dim);
    match kind {
        ParamKind::VBox => (c_e, 4 * c_e),
        ParamKind::WBoxHat => (parts * c_g, c_e),
        ParamKind::WIm => (c_g, 2 * c_e),
        ParamKind::WApp => (parts, channels),
    }
}

/// Box-side intermediates of the geometric term for one RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQuery {
    /// `E_box(b)`, length `4 C_E`.
    pub embedding: Vec<f64>,
    /// `V_box * E_box(b)`, length `C_E`.
    pub reduced: Vec<f64>,
    /// `W_box_hat_k * reduced` for every part, `K x C_g`.
    pub queries: Matrix,
}

pub fn box_query(roi: &Roi, params: &AttentionParams) -> BoxQuery {
    let embedding = embed_box(roi, &params.config);
    let reduced = params.v_box.matvec(&embedding);
    let queries = Matrix::new(
        params.parts,
        params.config.transform_dim,
        params.w_box_hat.matvec(&reduced),
    )
    .expect("query shape");
    BoxQuery {
        embedding,
        reduced,
        queries,
    }
}

/// `W_im * E_im(p)`, length `C_g`.
pub fn position_key(p: Position, params: &AttentionParams) -> Vec<f64> {
    params.w_im.matvec(&embed_position(p, &params.config))
}

fn appearance_column(feature: &[f64], params: &AttentionParams) -> Vec<f64> {
    params.w_app.matvec(feature)
}

fn sampled_feature<'a>(x: &'a FeatureMap, p: &Position) -> Result<&'a [f64]> {
    let (u, v) = p.as_cell(x.width(), x.height()).ok_or_else(|| {
        Error::invalid(format!(
            "position ({}, {}) is not a cell of the {}x{} map",
            p.u,
            p.v,
            x.width(),
            x.height()
        ))
    })?;
    Ok(x.cell(u, v))
}

/// `G[k][j] = <W_box_k E_box(b), W_im E_im(p_j)>` over the plan's positions.
pub fn geometric_logits(
    roi: &Roi,
    plan: &SamplingPlan,
    params: &AttentionParams,
) -> Result<Matrix> {
    let query = box_query(roi, params);
    let keys: Vec<Vec<f64>> = plan
        .positions()
        .iter()
        .map(|&p| position_key(p, params))
        .collect();
    Ok(geometric_from_keys(
        &query.queries,
        keys.iter().map(Vec::as_slice),
    ))
}

fn geometric_from_keys<'a>(
    queries: &Matrix,
    keys: impl ExactSizeIterator<Item = &'a [f64]>,
) -> Matrix {
    let n = keys.len();
    let mut g = Matrix::zeros(queries.rows(), n);
    for (j, key) in keys.enumerate() {
        for k in 0..queries.rows() {
            g.row_mut(k)[j] = dot(queries.row(k), key);
        }
    }
    g
}

/// `A[k][j] = W_app_k . x(p_j)` over the plan's positions.
pub fn appearance_logits(
    x: &FeatureMap,
    plan: &SamplingPlan,
    params: &AttentionParams,
) -> Result<Matrix> {
    params.check_map(x)?;
    let cols = plan
        .positions()
        .iter()
        .map(|p| Ok(appearance_column(sampled_feature(x, p)?, params)))
        .collect::<Result<Vec<_>>>()?;
    Ok(columns_to_matrix(
        params.parts,
        cols.iter().map(Vec::as_slice),
    ))
}

fn columns_to_matrix<'a>(rows: usize, cols: impl ExactSizeIterator<Item = &'a [f64]>) -> Matrix {
    let n = cols.len();
    let mut m = Matrix::zeros(rows, n);
    for (j, col) in cols.enumerate() {
        for (k, &v) in col.iter().enumerate() {
            m.row_mut(k)[j] = v;
        }
    }
    m
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|z| *z *= inv);
}

/// Per-part softmax of `G + A` over the given positions.
pub fn combine_weights(g: &Matrix, a: &Matrix, positions: &[Position]) -> Result<WeightField> {
    if (g.rows(), g.cols()) != (a.rows(), a.cols()) {
        return Err(Error::shape(format!(
            "geometric logits {}x{} vs appearance logits {}x{}",
            g.rows(),
            g.cols(),
            a.rows(),
            a.cols()
        )));
    }
    if g.cols() != positions.len() {
        return Err(Error::shape(format!(
            "{} logit columns for {} positions",
            g.cols(),
            positions.len()
        )));
    }
    if positions.is_empty() {
        return Err(Error::invalid(
            "cannot normalize weights over zero positions",
        ));
    }
    let mut weights: Vec<f64> = g.data().iter().zip(a.data()).map(|(g, a)| g + a).collect();
    if weights.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("attention logits".into()));
    }
    for row in weights.chunks_exact_mut(positions.len()) {
        softmax_in_place(row);
    }
    WeightField::new(g.rows(), positions.to_vec(), weights)
}

/// `y[k] = sum_j w[k][j] * x(p_j)`; each weight scales the whole feature vector.
pub fn aggregate(x: &FeatureMap, wf: &WeightField) -> Result<PartFeatureMatrix> {
    let features = wf
        .positions()
        .iter()
        .map(|p| sampled_feature(x, p))
        .collect::<Result<Vec<_>>>()?;
    aggregate_features(wf.parts(), x.channels(), &features, wf.weights())
}

fn aggregate_features(
    parts: usize,
    channels: usize,
    features: &[&[f64]],
    weights: &[f64],
) -> Result<PartFeatureMatrix> {
    let n = features.len();
    let mut data = vec![0.0; parts * channels];
    for (k, out) in data.chunks_exact_mut(channels).enumerate() {
        for (&w, f) in weights[k * n..(k + 1) * n].iter().zip(features) {
            axpy(w, f, out);
        }
    }
    PartFeatureMatrix::new(parts, channels, data)
}

/// Every intermediate of one RoI's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub plan: SamplingPlan,
    pub query: BoxQuery,
    /// `|plan| x C_g` position keys.
    pub keys: Matrix,
    pub geometric: Matrix,
    pub appearance: Matrix,
    pub weights: WeightField,
    pub output: PartFeatureMatrix,
}

pub fn forward(
    x: &FeatureMap,
    roi: &Roi,
    plan: SamplingPlan,
    params: &AttentionParams,
) -> Result<ForwardPass> {
    params.check_map(x)?;
    let query = box_query(roi, params);
    let positions = plan.positions();
    let features = positions
        .iter()
        .map(|p| sampled_feature(x, p))
        .collect::<Result<Vec<_>>>()?;
    let key_rows: Vec<Vec<f64>> = positions.iter().map(|&p| position_key(p, params)).collect();
    let app_cols: Vec<Vec<f64>> = features
        .iter()
        .map(|f| appearance_column(f, params))
        .collect();
    let geometric = geometric_from_keys(&query.queries, key_rows.iter().map(Vec::as_slice));
    let appearance = columns_to_matrix(params.parts, app_cols.iter().map(Vec::as_slice));
    let weights = combine_weights(&geometric, &appearance, positions)?;
    let output = aggregate_features(params.parts, x.channels(), &features, weights.weights())?;
    let keys = Matrix::new(
        positions.len(),
        params.config.transform_dim,
        key_rows.concat(),
    )?;
    Ok(ForwardPass {
        plan,
        query,
        keys,
        geometric,
        appearance,
        weights,
        output,
    })
}

/// Region feature of one RoI over an explicit plan.
pub fn extract_with_plan(
    x: &FeatureMap,
    roi: &Roi,
    plan: &SamplingPlan,
    params: &AttentionParams,
) -> Result<PartFeatureMatrix> {
    params.check_map(x)?;
    let query = box_query(roi, params);
    let positions = plan.positions();
    let features = positions
        .iter()
        .map(|p| sampled_feature(x, p))
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<Vec<f64>> = positions.iter().map(|&p| position_key(p, params)).collect();
    let app: Vec<Vec<f64>> = features
        .iter()
        .map(|f| appearance_column(f, params))
        .collect();
    finish(
        &query,
        keys.iter().map(Vec::as_slice),
        app.iter().map(Vec::as_slice),
        &features,
        positions,
        params,
        x.channels(),
    )
}

fn finish<'a>(
    query: &BoxQuery,
    keys: impl ExactSizeIterator<Item = &'a [f64]>,
    app: impl ExactSizeIterator<Item = &'a [f64]>,
    features: &[&[f64]],
    positions: &[Position],
    params: &AttentionParams,
    channels: usize,
) -> Result<PartFeatureMatrix> {
    let g = geometric_from_keys(&query.queries, keys);
    let a = columns_to_matrix(params.parts, app);
    let wf = combine_weights(&g, &a, positions)?;
    aggregate_features(params.parts, channels, features, wf.weights())
}

/// Region feature of one RoI: plan, logits, softmax, aggregation.
pub fn extract(
    x: &FeatureMap,
    roi: &Roi,
    params: &AttentionParams,
    spec: &SupportSpec,
) -> Result<PartFeatureMatrix> {
    let plan = build_plan(roi, x.height(), x.width(), spec)?;
    extract_with_plan(x, roi, &plan, params)
}

/// Per-cell position keys and appearance logits for a whole map.
#[derive(Debug, Clone)]
pub struct SharedMaps {
    width: usize,
    keys: Matrix,
    appearance: Matrix,
}

impl SharedMaps {
    pub fn new(x: &FeatureMap, params: &AttentionParams) -> Result<Self> {
        params.check_map(x)?;
        let (w, h) = (x.width(), x.height());
        let mut keys = Matrix::zeros(w * h, params.config.transform_dim);
        let mut appearance = Matrix::zeros(w * h, params.parts);
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                keys.row_mut(i)
                    .copy_from_slice(&position_key(Position::cell(u, v), params));
                appearance
                    .row_mut(i)
                    .copy_from_slice(&appearance_column(x.cell(u, v), params));
            }
        }
        Ok(Self {
            width: w,
            keys,
            appearance,
        })
    }

    fn extract(
        &self,
        x: &FeatureMap,
        roi: &Roi,
        params: &AttentionParams,
        spec: &SupportSpec,
    ) -> Result<PartFeatureMatrix> {
        let plan = build_plan(roi, x.height(), x.width(), spec)?;
        let index: Vec<usize> = plan.cells().map(|(u, v)| v * self.width + u).collect();
        let features: Vec<&[f64]> = plan.cells().map(|(u, v)| x.cell(u, v)).collect();
        finish(
            &box_query(roi, params),
            index.iter().map(|&i| self.keys.row(i)),
            index.iter().map(|&i| self.appearance.row(i)),
            &features,
            plan.positions(),
            params,
            x.channels(),
        )
    }
}

/// Extracts every RoI, in input order, sharing the per-cell precomputation.
/// Runs on the worker pool when the `parallel` feature is enabled.
pub fn extract_batch(
    x: &FeatureMap,
    rois: &[Roi],
    params: &AttentionParams,
    spec: &SupportSpec,
) -> Result<Vec<PartFeatureMatrix>> {
    spec.validate()?;
    let shared = SharedMaps::new(x, params)?;
    rois.par_iter()
        .map(|roi| shared.extract(x, roi, params, spec))
        .collect()
}

/// Sequential counterpart of [`extract_batch`], independent of the feature flag.
pub fn extract_batch_serial(
    x: &FeatureMap,
    rois: &[Roi],
    params: &AttentionParams,
    spec: &SupportSpec,
) -> Result<Vec<PartFeatureMatrix>> {
    spec.validate()?;
    let shared = SharedMaps::new(x, params)?;
    rois.iter()
        .map(|roi| shared.extract(x, roi, params, spec))
        .collect()
}
