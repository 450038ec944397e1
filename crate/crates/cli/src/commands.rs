use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use regionfeat::analysis::{
    export_weight_map, kl_of_mask, mean_kl_between_parts, DenseWeightMap, PartSelector,
    DEFAULT_EPSILON,
};
use regionfeat::attention::{extract_batch, forward};
use regionfeat::checkpoint::{load_offset_predictor, load_params, save_params};
use regionfeat::cost::{flops as cost_flops, measured_flops, CostBreakdown, CostConfig};
use regionfeat::grad::{finite_diff_check, GradScene, SceneDims};
use regionfeat::io::{read_feature_map, read_masks, read_rois, stack_part_features};
use regionfeat::par::{IntoParallelIterator, ParallelIterator};
use regionfeat::pooling::{
    aligned_pool, center_feature, deformable_pool, make_bin_grid, masked_pool, predict_offsets,
    ps_roi_pool, regular_pool, OffsetField, PoolMode,
};
use regionfeat::sampling::{build_plan, SupportSpec};
use regionfeat::tensor::{read_tensor, write_tensor};
use regionfeat::train::{init_params, run_training, TrainConfig};
use regionfeat::{Error, FeatureMap, InstanceMask, PartFeatureMatrix, Result, Roi};

use crate::{
    AnalyzeArgs, BenchArgs, CliError, ExtractArgs, FlopsArgs, GradcheckArgs, InputArgs, Method,
    Mode, PoolArgs, TrainArgs,
};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Lib(Error::Invalid(msg.into()))
}

fn print(value: &Value) {
    println!("{value}");
}

fn load_inputs(input: &InputArgs) -> Result<(FeatureMap, Vec<Roi>)> {
    if !(input.stride.is_finite() && input.stride > 0.0) {
        return Err(Error::Invalid(format!(
            "--stride must be positive, got {}",
            input.stride
        )));
    }
    let x = read_feature_map(&input.features)?;
    let rois = read_rois(&input.rois)?
        .into_iter()
        .map(|r| r.scaled(input.stride))
        .collect();
    Ok((x, rois))
}

fn write_outputs(path: &Path, outputs: &[PartFeatureMatrix]) -> Result<Value> {
    let tensor = stack_part_features(outputs)?;
    write_tensor(path, &tensor)?;
    Ok(json!({
        "output": path.display().to_string(),
        "dims": tensor.dims(),
    }))
}

/// One mask per RoI, or a single mask shared by all of them.
fn mask_for(masks: &[InstanceMask], i: usize) -> Result<&InstanceMask> {
    match masks.len() {
        1 => Ok(&masks[0]),
        n if i < n => Ok(&masks[i]),
        n => Err(Error::Invalid(format!("{n} masks for RoI #{i}"))),
    }
}

fn check_mask_count(masks: &[InstanceMask], rois: usize) -> Result<(), CliError> {
    if masks.len() != 1 && masks.len() != rois {
        return Err(invalid(format!(
            "got {} masks for {rois} RoIs (need 1 or one per RoI)",
            masks.len()
        )));
    }
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    let (x, rois) = load_inputs(&a.input)?;
    let params = load_params(&a.checkpoint)?;
    let spec = a.support.spec(x.height(), x.width())?;
    let outputs = extract_batch(&x, &rois, &params, &spec)?;
    let mut summary = write_outputs(&a.out, &outputs)?;
    summary["command"] = json!("extract");
    print(&summary);
    Ok(())
}

fn read_offsets(path: &Path, rois: usize, parts: usize) -> Result<Vec<OffsetField>> {
    let t = read_tensor(path)?;
    if t.dims() != [rois, parts, 2] {
        return Err(Error::Shape(format!(
            "{}: offsets must have dims [{rois}, {parts}, 2], got {:?}",
            path.display(),
            t.dims()
        )));
    }
    let values = t.to_f64();
    values
        .chunks(2 * parts)
        .map(OffsetField::from_interleaved)
        .collect()
}

pub fn pool(a: &PoolArgs) -> Result<(), CliError> {
    let (x, rois) = load_inputs(&a.input)?;
    let parts = a.rows * a.cols;
    if parts == 0 {
        return Err(invalid("--rows and --cols must be positive"));
    }
    if a.method == Method::Ps && x.channels() % parts != 0 {
        return Err(invalid(format!(
            "position-sensitive pooling needs C_f ({}) divisible by K ({parts})",
            x.channels()
        )));
    }
    if a.method == Method::Aligned && !matches!(a.samples, 1 | 4) {
        return Err(invalid(format!(
            "--samples must be 1 or 4, got {}",
            a.samples
        )));
    }
    let masks = match (&a.masks, a.method) {
        (Some(p), Method::Masked) => {
            let m = read_masks(p)?;
            check_mask_count(&m, rois.len())?;
            m
        }
        (None, Method::Masked) => return Err(invalid("masked pooling needs --masks")),
        _ => Vec::new(),
    };
    let (offsets, predictor) = if a.method == Method::Deformable {
        match (&a.offsets, &a.checkpoint) {
            (Some(p), _) => (Some(read_offsets(p, rois.len(), parts)?), None),
            (None, Some(dir)) => {
                let pred = load_offset_predictor(dir)?.ok_or_else(|| {
                    Error::Invalid(format!("{} has no offset predictor", dir.display()))
                })?;
                (None, Some(pred))
            }
            (None, None) => {
                return Err(invalid(
                    "deformable pooling needs --offsets or --checkpoint",
                ))
            }
        }
    } else {
        (None, None)
    };
    let mode = match a.mode {
        Mode::Avg => PoolMode::Avg,
        Mode::Max => PoolMode::Max,
    };
    let outputs = (0..rois.len())
        .into_par_iter()
        .map(|i| {
            let roi = &rois[i];
            if a.method == Method::Center {
                return Ok(center_feature(&x, roi));
            }
            let grid = make_bin_grid(roi, a.rows, a.cols)?;
            match a.method {
                Method::Regular => Ok(regular_pool(&x, &grid, mode)),
                Method::Aligned => aligned_pool(&x, &grid, a.samples),
                Method::Deformable => {
                    let field = match (&offsets, &predictor) {
                        (Some(all), _) => all[i].clone(),
                        (None, Some(p)) => predict_offsets(&x, &grid, p)?,
                        (None, None) => unreachable!("checked above"),
                    };
                    deformable_pool(&x, &grid, &field)
                }
                Method::Ps => ps_roi_pool(&x, &grid),
                Method::Masked => masked_pool(&x, &grid, mask_for(&masks, i)?),
                Method::Center => unreachable!("handled above"),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = write_outputs(&a.out, &outputs)?;
    summary["command"] = json!("pool");
    print(&summary);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = TrainConfig::for_task(a.task);
    cfg.seed = a.seed;
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = a.lr {
        cfg.base_lr = lr;
    }
    if let Some(n) = a.rois_per_step {
        cfg.rois_per_step = n;
    }
    cfg.validate()?;
    let outcome = run_training(&cfg)?;
    save_params(&a.out, &outcome.params)?;
    fs::write(&a.log, outcome.log.to_json_lines()).map_err(|e| Error::Io {
        path: a.log.clone(),
        source: e,
    })?;
    print(&json!({
        "command": "train",
        "task": cfg.task.name(),
        "steps": cfg.steps,
        "seed": cfg.seed,
        "base_lr": cfg.base_lr,
        "first": outcome.log.first(),
        "last": outcome.log.last(),
        "checkpoint": a.out.display().to_string(),
        "log": a.log.display().to_string(),
    }));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if a.scenes == 0 {
        return Err(invalid("--scenes must be positive"));
    }
    let dims = SceneDims {
        height: a.height,
        width: a.width,
        channels: a.channels,
        parts: a.parts,
        embed_dim: a.ce,
        transform_dim: a.cg,
        ..SceneDims::default()
    };
    let mut worst = 0.0f64;
    for i in 0..a.scenes {
        let seed = a.seed.wrapping_add(i as u64);
        let scene = GradScene::random(dims, SupportSpec::default(), seed)?;
        let report = finite_diff_check(&scene, a.eps, seed)?;
        worst = worst.max(report.max_rel_error);
        let mut line = report.to_json();
        line["scene"] = json!(i);
        print(&line);
    }
    let passed = worst <= a.tolerance;
    print(&json!({
        "command": "gradcheck",
        "scenes": a.scenes,
        "eps": a.eps,
        "tolerance": a.tolerance,
        "max_rel_error": worst,
        "passed": passed,
    }));
    if !passed {
        return Err(CliError::Numerical(format!(
            "gradient check: relative error {worst:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn breakdown_json(b: &CostBreakdown) -> Value {
    // u128 is not representable in JSON numbers by serde_json's default features.
    json!({
        "p1": b.p1 as u64,
        "p2": b.p2 as u64,
        "p3": b.p3 as u64,
        "p4": b.p4 as u64,
        "p5": b.p5 as u64,
        "total": b.total as u64,
    })
}

pub fn flops(a: &FlopsArgs) -> Result<(), CliError> {
    let cfg = CostConfig {
        n: a.n,
        k: a.k,
        c_e: a.ce,
        c_g: a.cg,
        c_f: a.cf,
        h: a.h,
        w: a.w,
        omega: a.omega,
    };
    let b = cost_flops(&cfg)?;
    if b.total > u64::MAX as u128 {
        return Err(invalid("FLOP count exceeds 64 bits"));
    }
    let mut out = breakdown_json(&b);
    out["config"] = serde_json::to_value(cfg).expect("config serializes");
    print(&out);
    Ok(())
}

fn bench_scene(a: &BenchArgs) -> Result<(FeatureMap, Vec<Roi>)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = FeatureMap::from_fn(a.height, a.width, a.channels, |_, _, _| {
        rng.random_range(-1.0..1.0)
    })?;
    let (h, w) = (a.height as f64, a.width as f64);
    let rois = (0..a.rois)
        .map(|_| {
            let bw = rng.random_range(1.0..=w);
            let bh = rng.random_range(1.0..=h);
            let x1 = rng.random_range(0.0..=w - bw);
            let y1 = rng.random_range(0.0..=h - bh);
            Roi::new(x1, y1, x1 + bw, y1 + bh)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((x, rois))
}

fn time_batch(
    x: &FeatureMap,
    rois: &[Roi],
    params: &regionfeat::attention::AttentionParams,
    spec: &SupportSpec,
    reps: usize,
) -> Result<(f64, Vec<PartFeatureMatrix>)> {
    let mut out = Vec::new();
    let start = Instant::now();
    for _ in 0..reps {
        out = extract_batch(x, rois, params, spec)?;
    }
    Ok((start.elapsed().as_secs_f64() * 1e3 / reps as f64, out))
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.repetitions == 0 {
        return Err(invalid("--repetitions must be at least 1"));
    }
    if a.rois == 0 {
        return Err(invalid("--rois must be at least 1"));
    }
    let (x, rois) = bench_scene(a)?;
    let config = regionfeat::attention::EmbeddingConfig::new(a.ce, a.cg)?;
    let params = init_params(config, a.parts, a.channels, 0.01, a.seed)?;
    let dense_spec = SupportSpec::dense(a.support.support, a.height, a.width);
    let sparse_spec = a.support.spec(a.height, a.width)?;
    let (dense_ms, dense_out) = time_batch(&x, &rois, &params, &dense_spec, a.repetitions)?;
    let (sparse_ms, sparse_out) = time_batch(&x, &rois, &params, &sparse_spec, a.repetitions)?;

    let plans = |spec: &SupportSpec| {
        rois.iter()
            .map(|r| build_plan(r, a.height, a.width, spec))
            .collect::<Result<Vec<_>>>()
    };
    let base = CostConfig {
        n: 1,
        k: a.parts as u64,
        c_e: a.ce as u64,
        c_g: a.cg as u64,
        c_f: a.channels as u64,
        h: a.height as u64,
        w: a.width as u64,
        omega: 1,
    };
    let dense_cost = measured_flops(&plans(&dense_spec)?, &base)?;
    let sparse_cost = measured_flops(&plans(&sparse_spec)?, &base)?;
    let identical = dense_out == sparse_out;
    print(&json!({
        "command": "bench",
        "dense_ms": dense_ms,
        "sparse_ms": sparse_ms,
        "speedup": dense_ms / sparse_ms.max(1e-9),
        "dense_flops": dense_cost.breakdown.total as u64,
        "sparse_flops": sparse_cost.breakdown.total as u64,
        "dense_samples": dense_cost.mean_total,
        "sparse_samples": sparse_cost.mean_total,
        "identical_outputs": identical,
        "parallel": regionfeat::par::is_parallel(),
    }));
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let (x, rois) = load_inputs(&a.input)?;
    let params = load_params(&a.checkpoint)?;
    let spec = a.support.spec(x.height(), x.width())?;
    let masks = match &a.masks {
        Some(p) => {
            let m = read_masks(p)?;
            check_mask_count(&m, rois.len())?;
            m
        }
        None => Vec::new(),
    };
    if let Some(dir) = &a.export_dir {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    for (i, roi) in rois.iter().enumerate() {
        let plan = build_plan(roi, x.height(), x.width(), &spec)?;
        let fwd = forward(&x, roi, plan, &params)?;
        let wm = DenseWeightMap::from_weight_field(&fwd.weights, x.height(), x.width())?;
        let mean_kl = if wm.parts() >= 2 {
            Some(mean_kl_between_parts(&wm, DEFAULT_EPSILON)?)
        } else {
            None
        };
        let mask_kl = if masks.is_empty() {
            None
        } else {
            Some(kl_of_mask(&wm, mask_for(&masks, i)?, DEFAULT_EPSILON)?)
        };
        if let Some(dir) = &a.export_dir {
            export_weight_map(
                &wm,
                PartSelector::MaxPooled,
                dir.join(format!("roi_{i}_max.pgm")),
            )?;
        }
        print(&json!({
            "roi_index": i,
            "mean_kl_parts": mean_kl,
            "kl_of_mask": mask_kl,
        }));
    }
    Ok(())
}
