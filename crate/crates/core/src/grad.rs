//! Backward pass of the attention extractor and a finite-difference checker.
//!
//! For the scalar loss `L = sum_{k,c} U[k][c] * y[k][c]`:
//!
//! ```text
//! s[k][j]  = U_k . x(p_j)
//! dz[k][j] = w[k][j] * (s[k][j] - sum_j' w[k][j'] s[k][j'])      (softmax)
//! dx(p_j)  = sum_k w[k][j] U_k + sum_k dz[k][j] W_app_k           (value + appearance)
//! dW_app_k = sum_j dz[k][j] x(p_j)
//! dq_k     = sum_j dz[k][j] key_j,   dkey_j = sum_k dz[k][j] q_k
//! ```
//!
//! and the linear maps behind `q` and `key` follow by outer products.
//! Cells outside the sampling plan receive zero gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{embed_position, extract_with_plan, forward, AttentionParams, ParamKind};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::sampling::{build_plan, SamplingPlan, SupportSpec};
use crate::types::{FeatureMap, PartFeatureMatrix, Roi};

pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_x: FeatureMap,
    pub d_params: AttentionParams,
}

fn check_upstream(params: &AttentionParams, upstream: &PartFeatureMatrix) -> Result<()> {
    if upstream.parts() != params.parts() || upstream.channels() != params.channels() {
        return Err(Error::shape(format!(
            "upstream gradient is {}x{}, output is {}x{}",
            upstream.parts(),
            upstream.channels(),
            params.parts(),
            params.channels()
        )));
    }
    Ok(())
}

/// Gradients of `sum(upstream * extract(x, roi))` over a fixed plan.
pub fn backward_with_plan(
    x: &FeatureMap,
    roi: &Roi,
    plan: SamplingPlan,
    params: &AttentionParams,
    upstream: &PartFeatureMatrix,
) -> Result<GradientBundle> {
    check_upstream(params, upstream)?;
    let fwd = forward(x, roi, plan, params)?;
    let (parts, channels) = (params.parts(), params.channels());
    let cells: Vec<(usize, usize)> = fwd.plan.cells().collect();
    let n = cells.len();
    let w = fwd.weights.weights();

    // Softmax backward, one part at a time.
    let mut dz = vec![0.0; parts * n];
    for k in 0..parts {
        let u_k = upstream.part(k);
        let s: Vec<f64> = cells.iter().map(|&(u, v)| dot(u_k, x.cell(u, v))).collect();
        let w_k = &w[k * n..(k + 1) * n];
        let mean = dot(w_k, &s);
        for j in 0..n {
            dz[k * n + j] = w_k[j] * (s[j] - mean);
        }
    }

    let mut d_params = AttentionParams::zeros(*params.config(), parts, channels)?;
    let mut d_x = vec![0.0; x.data().len()];
    let mut d_q = vec![0.0; parts * params.config().transform_dim];
    let c_g = params.config().transform_dim;

    for (j, &(u, v)) in cells.iter().enumerate() {
        let base = (v * x.width() + u) * channels;
        let dx_j = &mut d_x[base..base + channels];
        let feature = x.cell(u, v);
        let key = fwd.keys.row(j);
        let mut d_key = vec![0.0; c_g];
        for k in 0..parts {
            let dz_kj = dz[k * n + j];
            axpy(w[k * n + j], upstream.part(k), dx_j);
            axpy(dz_kj, params.w_app().row(k), dx_j);
            axpy(
                dz_kj,
                feature,
                d_params.tensor_mut(ParamKind::WApp).row_mut(k),
            );
            axpy(dz_kj, key, &mut d_q[k * c_g..(k + 1) * c_g]);
            axpy(dz_kj, fwd.query.queries.row(k), &mut d_key);
        }
        let e_p = embed_position(fwd.plan.positions()[j], params.config());
        d_params.tensor_mut(ParamKind::WIm).add_outer(&d_key, &e_p);
    }

    d_params
        .tensor_mut(ParamKind::WBoxHat)
        .add_outer(&d_q, &fwd.query.reduced);
    let mut d_reduced = vec![0.0; params.config().embed_dim];
    params.w_box_hat().matvec_t_acc(&d_q, &mut d_reduced);
    d_params
        .tensor_mut(ParamKind::VBox)
        .add_outer(&d_reduced, &fwd.query.embedding);

    let d_x = FeatureMap::new(x.height(), x.width(), channels, d_x)?;
    Ok(GradientBundle { d_x, d_params })
}

/// Gradients of `sum(upstream * extract(x, roi, params, spec))`.
pub fn backward_extract(
    x: &FeatureMap,
    roi: &Roi,
    params: &AttentionParams,
    spec: &SupportSpec,
    upstream: &PartFeatureMatrix,
) -> Result<GradientBundle> {
    let plan = build_plan(roi, x.height(), x.width(), spec)?;
    backward_with_plan(x, roi, plan, params, upstream)
}

/// A single-RoI problem for gradient checking.
#[derive(Debug, Clone)]
pub struct GradScene {
    pub x: FeatureMap,
    pub roi: Roi,
    pub params: AttentionParams,
    pub spec: SupportSpec,
}

/// Sizes for [`GradScene::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub parts: usize,
    pub embed_dim: usize,
    pub transform_dim: usize,
    /// Standard deviation of the uniform-random parameter entries.
    pub param_scale: f64,
}

impl Default for SceneDims {
    fn default() -> Self {
        Self {
            height: 6,
            width: 6,
            channels: 3,
            parts: 4,
            embed_dim: 4,
            transform_dim: 3,
            param_scale: 0.5,
        }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    // Uniform on [-sqrt(3), sqrt(3)] has unit variance.
    scale * 3f64.sqrt() * rng.random_range(-1.0..1.0)
}

impl GradScene {
    /// Random map, RoI, and parameters. The RoI always overlaps the map.
    pub fn random(dims: SceneDims, spec: SupportSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = crate::attention::EmbeddingConfig::new(dims.embed_dim, dims.transform_dim)?;
        let (h, w) = (dims.height as f64, dims.width as f64);
        let x = FeatureMap::from_fn(dims.height, dims.width, dims.channels, |_, _, _| {
            rng.random_range(-1.0..1.0)
        })?;
        let x1 = rng.random_range(0.0..w * 0.6);
        let y1 = rng.random_range(0.0..h * 0.6);
        let x2 = rng.random_range(x1 + 1.0..=w);
        let y2 = rng.random_range(y1 + 1.0..=h);
        let roi = Roi::new(x1, y1, x2, y2)?;
        let params = AttentionParams::from_fn(cfg, dims.parts, dims.channels, |_, _, _| {
            symmetric(&mut rng, dims.param_scale)
        })?;
        Ok(Self {
            x,
            roi,
            params,
            spec,
        })
    }

    pub fn plan(&self) -> Result<SamplingPlan> {
        build_plan(&self.roi, self.x.height(), self.x.width(), &self.spec)
    }

    pub fn loss(&self, plan: &SamplingPlan, upstream: &PartFeatureMatrix) -> Result<f64> {
        let y = extract_with_plan(&self.x, &self.roi, plan, &self.params)?;
        Ok(dot(y.data(), upstream.data()))
    }
}

/// Standard normal upstream gradient drawn from `seed`.
pub fn random_upstream(parts: usize, channels: usize, seed: u64) -> PartFeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..parts * channels)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    PartFeatureMatrix::new(parts, channels, data).expect("finite upstream")
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Worst relative error per checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(name, worst error, coordinate count)` for `x` and each parameter tensor.
    pub per_tensor: Vec<(&'static str, f64, usize)>,
}

impl GradCheckReport {
    pub fn to_json(&self) -> serde_json::Value {
        let per: serde_json::Map<String, serde_json::Value> = self
            .per_tensor
            .iter()
            .map(|(name, err, _)| (name.to_string(), serde_json::json!(err)))
            .collect();
        serde_json::json!({
            "max_rel_error": self.max_rel_error,
            "per_tensor": per,
        })
    }
}

/// Compares `grads` against central differences of the scene loss over every
/// coordinate of `x` and of every parameter tensor.
pub fn compare_with_finite_differences(
    scene: &GradScene,
    upstream: &PartFeatureMatrix,
    grads: &GradientBundle,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let plan = scene.plan()?;
    let mut per_tensor = Vec::with_capacity(5);

    let mut probe = scene.clone();
    let mut worst = 0.0f64;
    for i in 0..scene.x.data().len() {
        let orig = scene.x.data()[i];
        probe.x.data_mut()[i] = orig + eps;
        let plus = probe.loss(&plan, upstream)?;
        probe.x.data_mut()[i] = orig - eps;
        let minus = probe.loss(&plan, upstream)?;
        probe.x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(grads.d_x.data()[i], numeric));
    }
    per_tensor.push(("x", worst, scene.x.data().len()));

    for kind in ParamKind::ALL {
        let len = scene.params.tensor(kind).data().len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let orig = scene.params.tensor(kind).data()[i];
            probe.params.tensor_mut(kind).data_mut()[i] = orig + eps;
            let plus = probe.loss(&plan, upstream)?;
            probe.params.tensor_mut(kind).data_mut()[i] = orig - eps;
            let minus = probe.loss(&plan, upstream)?;
            probe.params.tensor_mut(kind).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.d_params.tensor(kind).data()[i];
            worst = worst.max(relative_error(analytic, numeric));
        }
        per_tensor.push((kind.name(), worst, len));
    }

    let max_rel_error = per_tensor.iter().map(|t| t.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
    })
}

/// Checks [`backward_extract`] on `scene` with a random upstream drawn from `seed`.
pub fn finite_diff_check(scene: &GradScene, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let upstream = random_upstream(scene.params.parts(), scene.params.channels(), seed);
    let grads = backward_extract(&scene.x, &scene.roi, &scene.params, &scene.spec, &upstream)?;
    compare_with_finite_differences(scene, &upstream, &grads, eps)
}
