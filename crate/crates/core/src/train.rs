//! Small-scale training loops: distill a pooling operator into the learnable
//! extractor, or fit masked pooling on synthetic object scenes.
//!
//! Every step draws fresh scenes from a seeded stream. Logged metrics are
//! computed on a fixed evaluation set so that runs with `lr = 0` produce a
//! constant log.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{kl_of_mask, mean_kl_between_parts, DenseWeightMap, DEFAULT_EPSILON};
use crate::attention::{forward, AttentionParams, EmbeddingConfig, ParamKind};
use crate::error::{Error, Result};
use crate::grad::backward_with_plan;
use crate::linalg::axpy;
use crate::pooling::{aligned_pool, make_bin_grid, masked_pool, regular_pool, PoolMode};
use crate::sampling::{build_plan, SupportSpec};
use crate::types::{FeatureMap, InstanceMask, PartFeatureMatrix, Roi, WeightField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DistillAligned,
    DistillRegular,
    MaskFit,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::DistillAligned => "distill_aligned",
            Task::DistillRegular => "distill_regular",
            Task::MaskFit => "mask_fit",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distill_aligned" => Ok(Task::DistillAligned),
            "distill_regular" => Ok(Task::DistillRegular),
            "mask_fit" => Ok(Task::MaskFit),
            _ => Err(Error::invalid(format!(
                "unknown task {s:?} (expected distill_aligned, distill_regular or mask_fit)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub task: Task,
    pub base_lr: f64,
    /// Fractions of `steps` after which the rate is multiplied by `lr_decay`.
    pub lr_decay_at: Vec<f64>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub init_sigma: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Part grid is `grid x grid`.
    pub grid: usize,
    pub embed_dim: usize,
    pub transform_dim: usize,
    pub rois_per_step: usize,
    pub eval_scenes: usize,
    pub log_interval: usize,
    /// Mean shift of object cells in `mask_fit` scenes.
    pub object_shift: f64,
    pub support: SupportSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let (height, width) = (20, 20);
        Self {
            seed: 0,
            steps: 2000,
            task: Task::MaskFit,
            base_lr: 2e-3,
            lr_decay_at: vec![2.0 / 3.0],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            init_sigma: 0.01,
            height,
            width,
            channels: 8,
            grid: 3,
            embed_dim: 16,
            transform_dim: 16,
            rois_per_step: 4,
            eval_scenes: 8,
            log_interval: 50,
            object_shift: 2.0,
            support: SupportSpec::dense(crate::sampling::SupportKind::WholeImage, height, width),
        }
    }
}

impl TrainConfig {
    /// Defaults tuned per task. Distillation targets depend on position
    /// only, so the geometric term must escape its small initialization
    /// without help from the appearance term; that needs a larger rate and
    /// batch than mask fitting.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::MaskFit => Self::default(),
            Task::DistillAligned | Task::DistillRegular => Self {
                task,
                base_lr: 1.0,
                rois_per_step: 16,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("grid", self.grid),
            ("rois_per_step", self.rois_per_step),
            ("eval_scenes", self.eval_scenes),
            ("log_interval", self.log_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid("maps must be at least 4x4"));
        }
        if !(self.init_sigma.is_finite() && self.init_sigma > 0.0) {
            return Err(Error::invalid("init_sigma must be positive"));
        }
        let finite_non_negative = [
            ("lr", self.base_lr),
            ("lr_decay", self.lr_decay),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in finite_non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.lr_decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("lr_decay_at fractions must lie in [0, 1]"));
        }
        if !self.object_shift.is_finite() {
            return Err(Error::invalid("object_shift must be finite"));
        }
        self.embedding()?;
        self.support.validate()
    }

    pub fn parts(&self) -> usize {
        self.grid * self.grid
    }

    pub fn embedding(&self) -> Result<EmbeddingConfig> {
        EmbeddingConfig::new(self.embed_dim, self.transform_dim)
    }

    /// Learning rate for the update made at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.base_lr;
        for &f in &self.lr_decay_at {
            if step as f64 >= f * self.steps as f64 {
                lr *= self.lr_decay;
            }
        }
        lr
    }
}

/// Every entry i.i.d. `N(0, sigma^2)`.
pub fn init_params(
    config: EmbeddingConfig,
    parts: usize,
    channels: usize,
    sigma: f64,
    seed: u64,
) -> Result<AttentionParams> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttentionParams::from_fn(config, parts, channels, |_, _, _| normal.sample(&mut rng))
}

/// `v <- m v + (g + wd p)`, `p <- p - lr v`.
pub fn sgd_update(
    p: &mut [f64],
    g: &[f64],
    v: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + (gi + weight_decay * *pi);
        *pi -= lr * *vi;
    }
}

/// Momentum buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: AttentionParams,
}

impl SgdState {
    pub fn new(params: &AttentionParams) -> Result<Self> {
        Ok(Self {
            velocity: AttentionParams::zeros(*params.config(), params.parts(), params.channels())?,
        })
    }

    pub fn velocity(&self) -> &AttentionParams {
        &self.velocity
    }
}

pub fn sgd_step(
    params: &mut AttentionParams,
    grads: &AttentionParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<()> {
    for kind in ParamKind::ALL {
        if params.tensor(kind).data().len() != grads.tensor(kind).data().len()
            || params.tensor(kind).data().len() != state.velocity.tensor(kind).data().len()
        {
            return Err(Error::shape(format!("{} shapes differ", kind.name())));
        }
    }
    for kind in ParamKind::ALL {
        sgd_update(
            params.tensor_mut(kind).data_mut(),
            grads.tensor(kind).data(),
            state.velocity.tensor_mut(kind).data_mut(),
            lr,
            momentum,
            weight_decay,
        );
    }
    Ok(())
}

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct Scene {
    pub x: FeatureMap,
    pub roi: Roi,
    pub target: PartFeatureMatrix,
    pub mask: Option<InstanceMask>,
}

fn standard_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Result<FeatureMap> {
    FeatureMap::from_fn(h, w, c, |_, _, _| StandardNormal.sample(rng))
}

fn random_box(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Roi> {
    let (hf, wf) = (h as f64, w as f64);
    let bw = rng.random_range(3.0..wf * 0.7);
    let bh = rng.random_range(3.0..hf * 0.7);
    let x1 = rng.random_range(0.0..wf - bw);
    let y1 = rng.random_range(0.0..hf - bh);
    Roi::new(x1, y1, x1 + bw, y1 + bh)
}

/// Draws one scene for `cfg.task`.
pub fn generate_scene(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    match cfg.task {
        Task::DistillAligned | Task::DistillRegular => {
            let x = standard_map(rng, h, w, c)?;
            let roi = random_box(rng, h, w)?;
            let grid = make_bin_grid(&roi, cfg.grid, cfg.grid)?;
            let target = if cfg.task == Task::DistillAligned {
                aligned_pool(&x, &grid, 1)?
            } else {
                regular_pool(&x, &grid, PoolMode::Avg)
            };
            Ok(Scene {
                x,
                roi,
                target,
                mask: None,
            })
        }
        Task::MaskFit => {
            let ow = rng.random_range(w / 4..=w / 2);
            let oh = rng.random_range(h / 4..=h / 2);
            let ox = rng.random_range(0..=w - ow);
            let oy = rng.random_range(0..=h - oh);
            let object = Roi::new(ox as f64, oy as f64, (ox + ow) as f64, (oy + oh) as f64)?;
            let mask = InstanceMask::from_rect(h, w, &object);
            let mut x = standard_map(rng, h, w, c)?;
            let shift = cfg.object_shift;
            x = FeatureMap::from_fn(h, w, c, |u, v, ch| {
                x.cell(u, v)[ch] + if mask.get(u, v) { shift } else { 0.0 }
            })?;
            let scale = rng.random_range(1.0..1.3);
            let center = object.center();
            let cx = center.u + rng.random_range(-1.0..1.0);
            let cy = center.v + rng.random_range(-1.0..1.0);
            let (hw, hh) = (object.width() * scale / 2.0, object.height() * scale / 2.0);
            let roi = Roi::new(
                (cx - hw).max(0.0),
                (cy - hh).max(0.0),
                (cx + hw).min(w as f64),
                (cy + hh).min(h as f64),
            )?;
            let grid = make_bin_grid(&roi, cfg.grid, cfg.grid)?;
            let target = masked_pool(&x, &grid, &mask)?;
            Ok(Scene {
                x,
                roi,
                target,
                mask: Some(mask),
            })
        }
    }
}

/// Mean squared error and its gradient with respect to `y`, scaled by `scale`.
fn squared_error(
    y: &PartFeatureMatrix,
    t: &PartFeatureMatrix,
    scale: f64,
) -> Result<(f64, PartFeatureMatrix)> {
    let n = y.data().len() as f64;
    let diff: Vec<f64> = y.data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d * scale / n).collect();
    Ok((loss, PartFeatureMatrix::new(y.parts(), y.channels(), grad)?))
}

/// Mean loss over `scenes` and, when `want_grad`, the accumulated gradient of
/// that mean.
pub fn batch_loss(
    scenes: &[Scene],
    params: &AttentionParams,
    spec: &SupportSpec,
    want_grad: bool,
) -> Result<(f64, Option<AttentionParams>)> {
    let scale = 1.0 / scenes.len() as f64;
    let mut total = 0.0;
    let mut grads = if want_grad {
        Some(AttentionParams::zeros(
            *params.config(),
            params.parts(),
            params.channels(),
        )?)
    } else {
        None
    };
    for s in scenes {
        let plan = build_plan(&s.roi, s.x.height(), s.x.width(), spec)?;
        if let Some(acc) = grads.as_mut() {
            let fwd = forward(&s.x, &s.roi, plan.clone(), params)?;
            let (loss, upstream) = squared_error(&fwd.output, &s.target, scale)?;
            total += loss;
            let g = backward_with_plan(&s.x, &s.roi, plan, params, &upstream)?;
            for kind in ParamKind::ALL {
                axpy(
                    1.0,
                    g.d_params.tensor(kind).data(),
                    acc.tensor_mut(kind).data_mut(),
                );
            }
        } else {
            let fwd = forward(&s.x, &s.roi, plan, params)?;
            total += squared_error(&fwd.output, &s.target, scale)?.0;
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Number of updates applied before this record.
    pub step: usize,
    /// Mean loss on the evaluation set.
    pub loss: f64,
    pub mean_kl_between_parts: f64,
    pub kl_of_mask: Option<f64>,
    /// Share of weight mass on cells whose center lies inside the RoI.
    pub in_roi_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn first(&self) -> Option<&LogRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AttentionParams,
    pub log: TrainLog,
}

fn in_roi_mass(wf: &WeightField, roi: &Roi) -> f64 {
    let inside: Vec<bool> = wf
        .positions()
        .iter()
        .map(|p| {
            let (u, v) = (p.u + 0.5, p.v + 0.5);
            roi.x1 <= u && u < roi.x2 && roi.y1 <= v && v < roi.y2
        })
        .collect();
    let mut mass = 0.0;
    for k in 0..wf.parts() {
        mass += wf
            .row(k)
            .iter()
            .zip(&inside)
            .filter(|(_, &i)| i)
            .map(|(w, _)| w)
            .sum::<f64>();
    }
    mass / wf.parts() as f64
}

/// Loss and weight-map metrics on the evaluation set.
pub fn evaluate(
    step: usize,
    scenes: &[Scene],
    params: &AttentionParams,
    spec: &SupportSpec,
) -> Result<LogRecord> {
    let n = scenes.len() as f64;
    let (mut loss, mut kl_parts, mut kl_mask, mut mass) = (0.0, 0.0, 0.0, 0.0);
    let mut has_mask = false;
    for s in scenes {
        let plan = build_plan(&s.roi, s.x.height(), s.x.width(), spec)?;
        let fwd = forward(&s.x, &s.roi, plan, params)?;
        loss += squared_error(&fwd.output, &s.target, 1.0)?.0;
        let wm = DenseWeightMap::from_weight_field(&fwd.weights, s.x.height(), s.x.width())?;
        if wm.parts() >= 2 {
            kl_parts += mean_kl_between_parts(&wm, DEFAULT_EPSILON)?;
        }
        if let Some(mask) = &s.mask {
            has_mask = true;
            kl_mask += kl_of_mask(&wm, mask, DEFAULT_EPSILON)?;
        }
        mass += in_roi_mass(&fwd.weights, &s.roi);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("evaluation loss at step {step}")));
    }
    Ok(LogRecord {
        step,
        loss: loss / n,
        mean_kl_between_parts: kl_parts / n,
        kl_of_mask: has_mask.then_some(kl_mask / n),
        in_roi_mass: mass / n,
    })
}

/// Seeds of the three independent streams used by a run.
fn stream_seeds(seed: u64) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random(), rng.random())
}

pub fn evaluation_scenes(cfg: &TrainConfig) -> Result<Vec<Scene>> {
    let (_, _, eval_seed) = stream_seeds(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    (0..cfg.eval_scenes)
        .map(|_| generate_scene(cfg, &mut rng))
        .collect()
}

/// Runs the whole schedule. Records are taken before the first update, every
/// `log_interval` updates, and after the last one.
pub fn run_training(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (init_seed, train_seed, _) = stream_seeds(cfg.seed);
    let mut params = init_params(
        cfg.embedding()?,
        cfg.parts(),
        cfg.channels,
        cfg.init_sigma,
        init_seed,
    )?;
    let mut state = SgdState::new(&params)?;
    let eval = evaluation_scenes(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let mut log = TrainLog::default();
    log.records.push(evaluate(0, &eval, &params, &cfg.support)?);
    for step in 0..cfg.steps {
        let scenes = (0..cfg.rois_per_step)
            .map(|_| generate_scene(cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_loss(&scenes, &params, &cfg.support, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        let grads = grads.expect("gradients requested");
        sgd_step(
            &mut params,
            &grads,
            cfg.lr_at(step),
            cfg.momentum,
            cfg.weight_decay,
            &mut state,
        )?;
        if ParamKind::ALL
            .iter()
            .any(|&k| !params.tensor(k).is_finite())
        {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
        let done = step + 1;
        if done % cfg.log_interval == 0 || done == cfg.steps {
            log.records
                .push(evaluate(done, &eval, &params, &cfg.support)?);
        }
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> TrainConfig {
        TrainConfig {
            steps: 20,
            task,
            height: 10,
            width: 10,
            channels: 4,
            grid: 2,
            embed_dim: 8,
            transform_dim: 4,
            rois_per_step: 2,
            eval_scenes: 3,
            log_interval: 5,
            support: SupportSpec::dense(crate::sampling::SupportKind::WholeImage, 10, 10),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let (mut p, mut v) = ([1.0], [0.0]);
        sgd_update(&mut p, &[1.0], &mut v, 0.1, 0.0, 0.0);
        assert!((p[0] - 0.9).abs() < 1e-15);
        let (mut p, mut v) = ([1.0], [0.0]);
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.0, 0.1);
        assert!((p[0] - 0.99).abs() < 1e-15);
        let (mut p, mut v) = ([2.0], [0.5]);
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(v[0], 0.45);
        assert!((p[0] - 1.955).abs() < 1e-15);
    }

    #[test]
    fn init_statistics() {
        let cfg = EmbeddingConfig::new(64, 128).unwrap();
        let a = init_params(cfg, 9, 16, 0.01, 3).unwrap();
        assert_eq!(a, init_params(cfg, 9, 16, 0.01, 3).unwrap());
        let values: Vec<f64> = ParamKind::ALL
            .iter()
            .flat_map(|&k| a.tensor(k).data().to_vec())
            .collect();
        assert!(values.len() >= 100_000, "{}", values.len());
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * 0.01 / n.sqrt(), "{mean}");
        assert!((sd - 0.01).abs() < 0.05 * 0.01, "{sd}");
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig {
            steps: 30,
            base_lr: 1.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(19), 1.0);
        assert!((cfg.lr_at(20) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_keeps_log_constant() {
        for task in [Task::MaskFit, Task::DistillAligned] {
            let cfg = TrainConfig {
                base_lr: 0.0,
                ..small(task)
            };
            let out = run_training(&cfg).unwrap();
            let first = out.log.first().unwrap().clone();
            assert_eq!(out.log.records.len(), 5);
            for r in &out.log.records {
                assert_eq!((r.loss, r.kl_of_mask), (first.loss, first.kl_of_mask));
                assert_eq!(r.mean_kl_between_parts, first.mean_kl_between_parts);
            }
            assert_eq!(first.kl_of_mask.is_some(), task == Task::MaskFit);
        }
    }

    #[test]
    fn first_record_matches_direct_loss() {
        let cfg = small(Task::DistillRegular);
        let out = run_training(&cfg).unwrap();
        let (init_seed, _, _) = stream_seeds(cfg.seed);
        let params =
            init_params(cfg.embedding().unwrap(), 4, 4, cfg.init_sigma, init_seed).unwrap();
        let eval = evaluation_scenes(&cfg).unwrap();
        let (direct, _) = batch_loss(&eval, &params, &cfg.support, false).unwrap();
        assert!((out.log.first().unwrap().loss - direct).abs() < 1e-12);
    }

    #[test]
    fn reproducible() {
        let cfg = small(Task::MaskFit);
        let a = run_training(&cfg).unwrap();
        let b = run_training(&cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.to_json_lines(), b.log.to_json_lines());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            base_lr: 1e200,
            ..small(Task::DistillAligned)
        };
        assert!(matches!(run_training(&cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn batch_gradient_matches_finite_difference() {
        let cfg = small(Task::MaskFit);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scenes: Vec<_> = (0..2)
            .map(|_| generate_scene(&cfg, &mut rng).unwrap())
            .collect();
        let params = init_params(cfg.embedding().unwrap(), 4, 4, 0.3, 1).unwrap();
        let (_, g) = batch_loss(&scenes, &params, &cfg.support, true).unwrap();
        let g = g.unwrap();
        let eps = 1e-5;
        for kind in ParamKind::ALL {
            for i in [0, 3] {
                let mut plus = params.clone();
                plus.tensor_mut(kind).data_mut()[i] += eps;
                let mut minus = params.clone();
                minus.tensor_mut(kind).data_mut()[i] -= eps;
                let lp = batch_loss(&scenes, &plus, &cfg.support, false).unwrap().0;
                let lm = batch_loss(&scenes, &minus, &cfg.support, false).unwrap().0;
                let fd = (lp - lm) / (2.0 * eps);
                let an = g.tensor(kind).data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "{kind:?} {i}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn task_names() {
        for t in [Task::DistillAligned, Task::DistillRegular, Task::MaskFit] {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("detect".parse::<Task>().is_err());
    }
}
