use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use regionfeat::attention::{AttentionParams, EmbeddingConfig};
use regionfeat::checkpoint::save_params;
use regionfeat::io::{write_feature_map, write_mask, write_rois};
use regionfeat::pooling::{aligned_pool, make_bin_grid};
use regionfeat::sampling::{build_plan, SupportSpec};
use regionfeat::tensor::{read_tensor, write_tensor, Tensor};
use regionfeat::{FeatureMap, InstanceMask, Roi};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regionfeat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("some output")).expect("json line")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    x: FeatureMap,
    rois: Vec<Roi>,
}

impl Fixture {
    /// 12x10 map with 6 channels; values are exact in 32 bits.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let x = FeatureMap::from_fn(12, 10, 6, |u, v, c| {
            ((u * 7 + v * 3 + c * 5) % 17) as f64 * 0.25 - 2.0
        })
        .unwrap();
        let rois = vec![
            Roi::new(1.0, 2.0, 6.5, 9.0).unwrap(),
            Roi::new(0.0, 0.0, 10.0, 12.0).unwrap(),
            Roi::new(4.25, 3.5, 5.0, 4.0).unwrap(),
        ];
        write_feature_map(dir.path().join("x.rft"), &x).unwrap();
        write_rois(dir.path().join("rois.json"), &rois).unwrap();
        Self { dir, x, rois }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn inputs(&self) -> Vec<String> {
        vec![
            "--features".into(),
            self.path("x.rft").display().to_string(),
            "--rois".into(),
            self.path("rois.json").display().to_string(),
        ]
    }

    fn run(&self, head: &[&str], tail: &[&str]) -> Output {
        let inputs = self.inputs();
        let mut args: Vec<&str> = head.to_vec();
        args.extend(inputs.iter().map(String::as_str));
        args.extend_from_slice(tail);
        run(&args)
    }

    fn checkpoint(&self, name: &str, parts: usize, fill: f64) -> PathBuf {
        let cfg = EmbeddingConfig::new(8, 4).unwrap();
        let mut i = 0usize;
        let params = AttentionParams::from_fn(cfg, parts, self.x.channels(), |_, _, _| {
            i += 1;
            fill * ((i % 13) as f64 - 6.0)
        })
        .unwrap();
        let dir = self.path(name);
        save_params(&dir, &params).unwrap();
        dir
    }
}

#[test]
fn extract_writes_part_features() {
    let f = Fixture::new();
    let ckpt = f.checkpoint("ckpt", 4, 0.05);
    let out = f.path("y.rft");
    let res = f.run(&["extract"], &["--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(read_tensor(&out).unwrap().dims(), &[3, 4, 6]);
    assert_eq!(stdout_json(&res)["dims"], serde_json::json!([3, 4, 6]));
}

#[test]
fn missing_input_names_the_path() {
    let f = Fixture::new();
    let ckpt = f.checkpoint("ckpt", 4, 0.05);
    let missing = f.path("nope.rft");
    let res = run(&[
        "extract",
        "--features",
        s(&missing),
        "--rois",
        s(&f.path("rois.json")),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&f.path("y.rft")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.rft"));
}

#[test]
fn zero_parameters_average_the_sampled_cells() {
    let f = Fixture::new();
    let ckpt = f.checkpoint("zero", 3, 0.0);
    let out = f.path("y.rft");
    let res = f.run(&["extract"], &["--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert!(res.status.success());
    let y = read_tensor(&out).unwrap();
    let c = f.x.channels();
    for (n, roi) in f.rois.iter().enumerate() {
        let plan = build_plan(roi, 12, 10, &SupportSpec::default()).unwrap();
        let mut mean = vec![0.0; c];
        for (u, v) in plan.cells() {
            for (m, val) in mean.iter_mut().zip(f.x.cell(u, v)) {
                *m += val / plan.len() as f64;
            }
        }
        for k in 0..3 {
            for (ch, want) in mean.iter().enumerate() {
                let got = y.data()[(n * 3 + k) * c + ch] as f64;
                assert!(
                    (got - want).abs() < 1e-5,
                    "roi {n} part {k}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn pool_aligned_matches_the_library() {
    let f = Fixture::new();
    let out = f.path("a.rft");
    let res = f.run(
        &["pool", "--method", "aligned"],
        &["--rows", "3", "--cols", "2", "--out", s(&out)],
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let got = read_tensor(&out).unwrap();
    let want: Vec<f64> = f
        .rois
        .iter()
        .flat_map(|r| {
            aligned_pool(&f.x, &make_bin_grid(r, 3, 2).unwrap(), 1)
                .unwrap()
                .into_data()
        })
        .collect();
    assert_eq!(got, Tensor::from_f64(vec![3, 6, 6], &want).unwrap());
}

#[test]
fn deformable_with_zero_offsets_is_aligned() {
    let f = Fixture::new();
    let offsets = f.path("off.rft");
    write_tensor(
        &offsets,
        &Tensor::new(vec![3, 4, 2], vec![0.0; 24]).unwrap(),
    )
    .unwrap();
    let (a, d) = (f.path("a.rft"), f.path("d.rft"));
    let grid = ["--rows", "2", "--cols", "2"];
    assert!(f
        .run(
            &["pool", "--method", "aligned"],
            &[&grid[..], &["--out", s(&a)]].concat()
        )
        .status
        .success());
    let res = f.run(
        &["pool", "--method", "deformable"],
        &[&grid[..], &["--offsets", s(&offsets), "--out", s(&d)]].concat(),
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(d).unwrap());
}

#[test]
fn pool_validation_errors_exit_one() {
    let f = Fixture::new();
    let out = f.path("p.rft");
    // 6 channels, 4 parts.
    let ps = f.run(
        &["pool", "--method", "ps"],
        &["--rows", "2", "--cols", "2", "--out", s(&out)],
    );
    assert_eq!(ps.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&ps.stderr).contains("divisible"));
    let ok = f.run(
        &["pool", "--method", "ps"],
        &["--rows", "3", "--cols", "2", "--out", s(&out)],
    );
    assert!(ok.status.success());

    let masked = f.run(&["pool", "--method", "masked"], &["--out", s(&out)]);
    assert_eq!(masked.status.code(), Some(1));
    let deform = f.run(&["pool", "--method", "deformable"], &["--out", s(&out)]);
    assert_eq!(deform.status.code(), Some(1));
    assert_eq!(run(&["pool", "--bogus"]).status.code(), Some(1));
}

#[test]
fn non_finite_input_exits_two() {
    let f = Fixture::new();
    let bad = f.path("nan.rft");
    let mut data = vec![0.5f32; 4 * 4 * 2];
    data[5] = f32::NAN;
    std::fs::write(&bad, Tensor::new(vec![4, 4, 2], data).unwrap().encode()).unwrap();
    let res = run(&[
        "pool",
        "--method",
        "center",
        "--features",
        s(&bad),
        "--rois",
        s(&f.path("rois.json")),
        "--out",
        s(&f.path("o.rft")),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn bench_rejects_zero_repetitions() {
    assert_eq!(run(&["bench", "--repetitions", "0"]).status.code(), Some(1));
}

#[test]
fn bench_reports_cost_and_agreement() {
    let small = [
        "bench",
        "--height",
        "12",
        "--width",
        "14",
        "--channels",
        "4",
        "--rois",
        "4",
        "--parts",
        "4",
        "--repetitions",
        "1",
    ];
    let full = run(&[&small[..], &["--max-in", "168", "--max-out", "168"]].concat());
    assert!(full.status.success());
    let v = stdout_json(&full);
    assert_eq!(v["identical_outputs"], Value::Bool(true));
    assert_eq!(v["dense_flops"], v["sparse_flops"]);

    let res = run(&["bench", "--rois", "8", "--repetitions", "1"]);
    assert!(res.status.success());
    let v = stdout_json(&res);
    for key in [
        "dense_ms",
        "sparse_ms",
        "speedup",
        "dense_flops",
        "sparse_flops",
    ] {
        assert!(v[key].as_f64().unwrap() > 0.0, "{key}");
    }
    let ratio = v["sparse_flops"].as_f64().unwrap() / v["dense_flops"].as_f64().unwrap();
    assert!(ratio < 0.3, "{ratio}");
}

#[test]
fn flops_prints_stage_counts() {
    let res = run(&["flops"]);
    assert!(res.status.success());
    let v = stdout_json(&res);
    assert_eq!(v["p1"], 589_824_000u64);
    assert_eq!(v["p3"], 752_640_000u64);
    assert_eq!(v["total"], 4_364_659_200u64);
    assert_eq!(v["config"]["omega"], 200);
    assert_eq!(run(&["flops", "--k", "0"]).status.code(), Some(1));
}

#[test]
fn analyze_reports_metrics_and_images() {
    let f = Fixture::new();
    let ckpt = f.checkpoint("ckpt", 4, 0.2);
    let mask = f.path("mask.rft");
    write_mask(
        &mask,
        &InstanceMask::from_rect(12, 10, &Roi::new(2.0, 2.0, 7.0, 8.0).unwrap()),
    )
    .unwrap();
    let images = f.path("img");
    let res = f.run(
        &["analyze"],
        &[
            "--checkpoint",
            s(&ckpt),
            "--masks",
            s(&mask),
            "--export-dir",
            s(&images),
        ],
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let lines: Vec<Value> = String::from_utf8_lossy(&res.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["roi_index"], i);
        assert!(l["mean_kl_parts"].as_f64().unwrap() >= 0.0);
        assert!(l["kl_of_mask"].as_f64().unwrap() >= 0.0);
        let pgm = std::fs::read(images.join(format!("roi_{i}_max.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n10 12\n255\n"));
        assert_eq!(pgm.len(), b"P5\n10 12\n255\n".len() + 120);
    }
}

#[test]
fn gradcheck_passes_on_small_scenes() {
    let res = run(&["gradcheck", "--scenes", "2"]);
    assert!(res.status.success());
    let v = stdout_json(&res);
    assert_eq!(v["passed"], Value::Bool(true));
    let tight = run(&["gradcheck", "--scenes", "1", "--tolerance", "0"]);
    assert_eq!(tight.status.code(), Some(2));
}

#[test]
fn training_runs_are_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut stdouts = Vec::new();
    for d in &dirs {
        let res = Command::new(env!("CARGO_BIN_EXE_regionfeat"))
            .args([
                "train",
                "--task",
                "mask_fit",
                "--steps",
                "20",
                "--out",
                "ckpt",
                "--log",
                "log.jsonl",
            ])
            .current_dir(d.path())
            .output()
            .unwrap();
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        stdouts.push(res.stdout);
    }
    assert_eq!(stdouts[0], stdouts[1]);
    let read = |d: &TempDir, name: &str| std::fs::read(d.path().join(name)).unwrap();
    for name in [
        "log.jsonl",
        "ckpt/manifest.json",
        "ckpt/v_box.rft",
        "ckpt/w_box_hat.rft",
        "ckpt/w_im.rft",
        "ckpt/w_app.rft",
    ] {
        assert_eq!(read(&dirs[0], name), read(&dirs[1], name), "{name}");
    }
    assert_eq!(
        run(&["train", "--task", "nope", "--out", "x", "--log", "y"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn thread_count_does_not_change_outputs() {
    let f = Fixture::new();
    let ckpt = f.checkpoint("ckpt", 4, 0.1);
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out = f.path(&format!("y{threads}.rft"));
        let inputs = f.inputs();
        let mut args = vec!["extract"];
        args.extend(inputs.iter().map(String::as_str));
        args.extend(["--checkpoint", s(&ckpt), "--out", s(&out)]);
        let res = Command::new(env!("CARGO_BIN_EXE_regionfeat"))
            .args(&args)
            .env("REGIONFEAT_THREADS", threads)
            .output()
            .unwrap();
        assert!(res.status.success());
        files.push(std::fs::read(out).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let bad = Command::new(env!("CARGO_BIN_EXE_regionfeat"))
        .args(["flops"])
        .env("REGIONFEAT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
