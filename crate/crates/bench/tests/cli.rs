use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deq_bench::backward_bench::SpeedupReport;
use deq_bench::manifest::{RunManifest, RunStatus};
use deq_core::backward::Strategy;

const SMALL_DATA: [&str; 3] = ["dataset.n_train=128", "dataset.n_test=64", "batch_size=32"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deq-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_with_sets(cmd: &str, out: &Path, sets: &[&str]) -> Output {
    let mut args = vec![cmd.to_string(), "--out".into(), out.display().to_string()];
    for s in sets {
        args.push("--set".into());
        args.push((*s).into());
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn train_smoke(dir: &Path, extra: &[&str]) -> Output {
    let mut sets: Vec<&str> = SMALL_DATA.to_vec();
    sets.push("epochs=1");
    sets.extend_from_slice(extra);
    run_with_sets("train", dir, &sets)
}

#[test]
fn one_epoch_train_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_smoke(dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));

    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,wall_s,train_loss,train_acc,test_acc,fwd_iters_mean,bwd_vjps_mean,fwd_conv_rate"
    );
    assert_eq!(lines.count(), 1);
    let probes = std::fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    assert_eq!(
        probes.lines().next().unwrap(),
        "step,strategy,cosine,dot_sign"
    );

    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.command, "train");
    for key in ["curves", "probes", "model", "manifest"] {
        let path = &manifest.outputs[key];
        assert!(std::fs::metadata(path).unwrap().len() > 0, "{key} empty");
    }
    let text = std::fs::read_to_string(&manifest.outputs["manifest"]).unwrap();
    let again: RunManifest =
        serde_json::from_str(&serde_json::to_string(&manifest).unwrap()).unwrap();
    assert_eq!(again, manifest);
    assert!(text.contains("\"learning_rate\""));
}

#[test]
fn seed_flag_lands_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--seed",
        "17",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "epochs=1",
        "--set",
        "dataset.n_train=64",
        "--set",
        "dataset.n_test=32",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 17);
    assert_eq!(manifest.config.seed, 17);
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"epochs": 3, "strategy": {"variant": "npg", "k": 3},
            "dataset": {"kind": "two_spirals", "n_train": 64, "n_test": 32}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "epochs=2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(data_rows(&out_dir.join("curves.csv")).len(), 2);
    let manifest = RunManifest::read(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(
        manifest.config.strategy,
        deq_core::StrategyConfig::Npg { k: 3, lambda: 0.5 }
    );
}

#[test]
fn unknown_strategy_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with_sets("train", dir.path(), &["strategy.variant=broyden2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("broyden2"), "{}", stderr(&out));
}

#[test]
fn bad_field_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with_sets("train", dir.path(), &["solver.max_iter=\"many\""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("solver.max_iter"), "{}", stderr(&out));

    let out = run_with_sets("train", dir.path(), &["batch_size=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("batch_size"), "{}", stderr(&out));

    let out = run(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets: Vec<&str> = SMALL_DATA.to_vec();
    sets.extend_from_slice(&[
        "epochs=20",
        "learning_rate=1e300",
        "model.kind=linear",
        "strategy.variant=jfb",
    ]);
    let out = run_with_sets("train", dir.path(), &sets);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Diverged);
    assert!(data_rows(&dir.path().join("curves.csv")).len() < 20);
    assert!(dir.path().join("probes.csv").exists());
}

fn probe_rows(path: &Path) -> Vec<(usize, String, f64, i32)> {
    data_rows(path)
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].to_string(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn compare_grads_probes_every_strategy_against_implicit() {
    let dir = tempfile::tempdir().unwrap();
    let sets = [
        "dataset.n_train=640",
        "dataset.n_test=64",
        "batch_size=64",
        "epochs=5",
        "fidelity_every=2",
        "strategy.variant=gdeq",
    ];
    let out = run_with_sets("compare-grads", dir.path(), &sets);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.config.strategy.strategy(), Strategy::Implicit);

    let rows = probe_rows(&dir.path().join("probes.csv"));
    assert_eq!(rows.len(), 4 * 25);
    let implicit: Vec<_> = rows.iter().filter(|r| r.1 == "implicit").collect();
    assert_eq!(implicit.len(), 25);
    assert!(implicit.iter().all(|r| r.2 == 1.0 && r.3 == 1));

    let jfb: Vec<_> = rows
        .iter()
        .filter(|r| r.1 == "jfb" && !r.2.is_nan())
        .collect();
    let positive = jfb.iter().filter(|r| r.3 == 1).count();
    assert!(
        positive as f64 >= 0.95 * jfb.len() as f64,
        "{positive}/{}",
        jfb.len()
    );
}

#[test]
fn scalar_linear_cell_gives_exact_gdeq_probes() {
    let dir = tempfile::tempdir().unwrap();
    let sets = [
        "dataset.n_train=128",
        "dataset.n_test=32",
        "batch_size=32",
        "epochs=2",
        "fidelity_every=1",
        "model.d_z=1",
        "model.kind=\"linear\"",
        "model.input_scale=0.5",
        "solver.tol=1e-12",
        "strategy.variant=implicit",
        "strategy.tol=1e-14",
        "strategy.max_iter=5000",
    ];
    let out = run_with_sets("compare-grads", dir.path(), &sets);
    assert!(out.status.success(), "{}", stderr(&out));
    let gdeq: Vec<_> = probe_rows(&dir.path().join("probes.csv"))
        .into_iter()
        .filter(|r| r.1 == "gdeq")
        .collect();
    assert_eq!(gdeq.len(), 8);
    for r in gdeq {
        assert!((r.2 - 1.0).abs() <= 1e-12, "step {}: cosine {}", r.0, r.2);
    }
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let out = train_smoke(dir, &["model.d_z=16"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("model.json")
}

#[test]
fn bench_backward_reports_vjps_and_unit_self_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let bench_dir = dir.path().join("bench");
    let out = run(&[
        "bench-backward",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--trials",
        "10",
        "--out",
        bench_dir.to_str().unwrap(),
        "--set",
        "dataset.n_train=128",
        "--set",
        "bench.batch_size=16",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(bench_dir.join("speedup.json")).unwrap();
    let report: SpeedupReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.trials, 10);
    assert_eq!(
        report.get(Strategy::Implicit).unwrap().speedup_vs_implicit,
        1.0
    );
    assert_eq!(report.get(Strategy::Jfb).unwrap().vjps_per_backward, 0.0);
    assert_eq!(report.get(Strategy::Gdeq).unwrap().vjps_per_backward, 0.0);
    assert_eq!(report.get(Strategy::Npg).unwrap().vjps_per_backward, 4.0);
    assert!(report.get(Strategy::Implicit).unwrap().vjps_per_backward <= 20.0);
    assert!(bench_dir.join("manifest.json").exists());
}

#[test]
fn bench_backward_rejects_missing_checkpoint_and_few_trials() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&["bench-backward", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"));

    let out = run(&["bench-backward", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let ckpt = trained_checkpoint(dir.path());
    let out = run(&[
        "bench-backward",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--trials",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trials"));
}

fn trace(path: &Path) -> Vec<(usize, f64)> {
    data_rows(path)
        .iter()
        .map(|l| {
            let (i, r) = l.split_once(',').unwrap();
            (i.parse().unwrap(), r.parse().unwrap())
        })
        .collect()
}

#[test]
fn solve_demo_traces() {
    let dir = tempfile::tempdir().unwrap();

    let scalar = dir.path().join("scalar");
    let out = run_with_sets("solve-demo", &scalar, &["demo.cell=scalar_linear"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        trace(&scalar.join("broyden_trace.csv")),
        vec![(0, 1.0), (1, 0.5), (2, 0.0)]
    );
    let picard = trace(&scalar.join("picard_trace.csv"));
    assert_eq!(picard[1], (1, 0.5));
    assert_eq!(picard[2], (2, 0.25));

    let constant = dir.path().join("constant");
    let out = run_with_sets(
        "solve-demo",
        &constant,
        &["demo.cell=constant", "demo.d_z=5"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["broyden_trace.csv", "picard_trace.csv"] {
        let t = trace(&constant.join(file));
        assert_eq!(t.len(), 2, "{file}");
        assert_eq!(t[1].1, 0.0);
    }

    let tanh = dir.path().join("tanh");
    let out = run_with_sets(
        "solve-demo",
        &tanh,
        &["demo.cell=tanh", "demo.input_scale=2.0"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let (b, p) = (
        trace(&tanh.join("broyden_trace.csv")),
        trace(&tanh.join("picard_trace.csv")),
    );
    assert!(
        b.len() < p.len(),
        "broyden {} vs picard {}",
        b.len(),
        p.len()
    );
}
