//! Full-length training runs with pinned outcomes.

use regionfeat::checkpoint::save_params;
use regionfeat::train::{run_training, Task, TrainConfig};

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1e-12)
}

#[test]
fn mask_fit_reproduces_trends() {
    let cfg = TrainConfig::for_task(Task::MaskFit);
    assert_eq!((cfg.seed, cfg.steps, cfg.parts()), (0, 2000, 9));
    let out = run_training(&cfg).unwrap();
    let (first, last) = (out.log.first().unwrap(), out.log.last().unwrap());
    assert_eq!(out.log.records.len(), 41);
    assert!(last.loss <= 0.5 * first.loss);
    assert!(last.mean_kl_between_parts > first.mean_kl_between_parts);
    assert!(last.kl_of_mask.unwrap() < first.kl_of_mask.unwrap());
    assert!(last.in_roi_mass > first.in_roi_mass);

    assert!(rel_close(first.loss, 2.0065097115765695), "{first:?}");
    assert!(rel_close(last.loss, 0.7563309757980521), "{last:?}");
    assert!(rel_close(
        first.mean_kl_between_parts,
        0.0014950141575862837
    ));
    assert!(rel_close(last.mean_kl_between_parts, 0.09114262515207552));
    assert!(rel_close(first.kl_of_mask.unwrap(), 2.1598841986454906));
    assert!(rel_close(last.kl_of_mask.unwrap(), 0.6626635715702117));
}

#[test]
fn distill_aligned_reaches_a_tenth_of_initial_loss() {
    let out = run_training(&TrainConfig::for_task(Task::DistillAligned)).unwrap();
    let (first, last) = (out.log.first().unwrap(), out.log.last().unwrap());
    assert!(last.loss <= 0.1 * first.loss, "{first:?} -> {last:?}");
    assert!(rel_close(first.loss, 0.44120397139461504), "{first:?}");
    assert!(rel_close(last.loss, 0.03527778952859748), "{last:?}");
}

#[test]
fn short_runs_write_identical_checkpoints() {
    let cfg = TrainConfig {
        steps: 60,
        ..TrainConfig::for_task(Task::MaskFit)
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut logs = Vec::new();
    for d in &dirs {
        let out = run_training(&cfg).unwrap();
        save_params(d.path(), &out.params).unwrap();
        logs.push(out.log.to_json_lines());
    }
    assert_eq!(logs[0], logs[1]);
    for name in [
        "manifest.json",
        "v_box.rft",
        "w_box_hat.rft",
        "w_im.rft",
        "w_app.rft",
    ] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
