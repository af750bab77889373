use std::path::{Path, PathBuf};
use std::process::Command;

use cmgai::cli::config::{RunConfig, Task};
use cmgai::cli::experiment::{detect_task, ingest, run_experiment, ExperimentReport, Observations};
use cmgai::cli::ingest::{ingest_curves, ingest_fields};
use cmgai::cli::plot::{render_svg, PlotLabels, Series};
use cmgai::cli::synth::{synth_fixture, FixtureKind};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cmgai"));
    c.env("RUST_LOG", "error");
    c
}

/// Fixture config shrunk to a few seconds of training.
fn quick_config(dir: &Path, kind: FixtureKind, epochs: usize) -> RunConfig {
    let files = synth_fixture(kind, 40, 3, &dir.join("data")).unwrap();
    let mut cfg = RunConfig::for_fixture(kind, &files, 3);
    cfg.train.epochs = epochs;
    cfg.train.displacement.hidden = vec![8, 8];
    cfg.train.body_force.hidden = vec![8];
    cfg.train.generation_samples = 512;
    cfg.field_samples = 40;
    cfg.out_dir = Some(dir.join("run"));
    cfg.record_wall_clock = false;
    cfg
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn scan_interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = (0..xs.len() - 1).find(|&i| x >= xs[i] && x <= xs[i + 1]).unwrap();
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn ingest_groups_sorts_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.csv",
        "Condition, Strain, Stress\n50,0.2,3\n-10,0.1,1\n50,0.0,1\n50,0.2,5\n-10,0.0,0\n50,0.1,2\n-10,0.2,2\n-10,0.3,3\n50,0.3,6\n",
    );
    let curves = ingest_curves(&p).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0].condition, -10.0);
    assert_eq!(curves[1].strains, vec![0.0, 0.1, 0.2, 0.3]);
    assert_eq!(curves[1].stresses, vec![1.0, 2.0, 4.0, 6.0]);
    assert_eq!(detect_task(&p).unwrap(), Task::Curves);

    let bad = write(dir.path(), "bad.csv", "condition,strain,stress\n1,0.1,abc\n");
    assert!(ingest_curves(&bad).is_err());
    let missing = write(dir.path(), "m.csv", "condition,stress\n1,2\n");
    assert!(ingest_curves(&missing).is_err());

    let f = write(dir.path(), "f.csv", "condition,v1,v2\n2,1,2\n1,0,0\n2,3,4\n");
    let fields = ingest_fields(&f).unwrap();
    assert_eq!(fields.len(), 2);
    assert_eq!(fields[1].mean(), vec![2.0, 3.0]);
    assert_eq!(detect_task(&f).unwrap(), Task::Fields);
}

#[test]
fn ingest_merges_files_and_rejects_duplicate_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "condition,strain,stress\n1,0,0\n1,1,1\n1,2,2\n1,3,3\n");
    let b = write(dir.path(), "b.csv", "condition,strain,stress\n2,0,0\n2,1,2\n2,2,4\n2,3,6\n");
    match ingest(Task::Curves, &[a.clone(), b]).unwrap() {
        Observations::Curves(c) => assert_eq!(c.len(), 2),
        _ => panic!("expected curves"),
    }
    let dup = write(dir.path(), "d.csv", "condition,strain,stress\n1,0,5\n1,1,6\n1,2,7\n1,3,8\n");
    assert!(ingest(Task::Curves, &[a, dup]).is_err());
}

#[test]
fn plot_and_fixtures_are_deterministic() {
    let s = [Series::line("a", &[0.0, 1.0, 2.0], &[1.0, -1.0, 0.5])];
    let labels = PlotLabels {
        title: "t".into(),
        x: "x".into(),
        y: "y".into(),
    };
    let svg = render_svg(&s, &labels).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg, render_svg(&s, &labels).unwrap());

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for kind in [FixtureKind::Curves, FixtureKind::Fields] {
        let a = synth_fixture(kind, 30, 5, d1.path()).unwrap();
        let b = synth_fixture(kind, 30, 5, d2.path()).unwrap();
        for (x, y) in a.train.iter().chain([&a.target]).zip(b.train.iter().chain([&b.target])) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
    let c = synth_fixture(FixtureKind::Curves, 30, 6, &d1.path().join("other")).unwrap();
    let a = synth_fixture(FixtureKind::Curves, 30, 5, d2.path()).unwrap();
    assert_ne!(std::fs::read(&c.target).unwrap(), std::fs::read(&a.target).unwrap());
}

#[test]
fn zero_epoch_run_skips_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), FixtureKind::Curves, 0);
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.trained && report.generation_skipped);
    assert!(report.target_nrmse.is_none() && report.loss_history.is_empty());
    let out = cfg.out_dir.unwrap();
    assert!(out.join("report.json").is_file() && out.join("model.json").is_file());
    assert!(!out.join("generated.csv").exists());
}

#[test]
fn curve_run_report_matches_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(dir.path(), FixtureKind::Curves, 40);
    cfg.baseline = true;
    let report = run_experiment(&cfg).unwrap();
    let out = cfg.out_dir.clone().unwrap();
    for name in ["config.json", "model.json", "generated.csv", "generated_cloud.csv", "baseline.csv", "plot.svg", "report.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
        assert!(report.artifacts.iter().any(|a| a == name));
    }
    assert_eq!(report.loss_history.len(), 40);
    let on_disk: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    // NRMSE recomputed from generated.csv against target.csv
    let (gh, generated) = read_csv(&out.join("generated.csv"));
    assert_eq!(gh, vec!["strain", "stress"]);
    let target = ingest_curves(cfg.reference.as_ref().unwrap()).unwrap().remove(0);
    let (lo, hi) = (target.strains[0], *target.strains.last().unwrap());
    let pairs: Vec<(f64, f64)> = generated
        .iter()
        .filter(|r| r[0] >= lo && r[0] <= hi)
        .map(|r| (r[1], scan_interp(&target.strains, &target.stresses, r[0])))
        .collect();
    let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let range = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let rmse = (pairs.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt();
    let recomputed = rmse / range;
    let reported = report.target_nrmse.unwrap();
    assert!((recomputed - reported).abs() <= 1e-9 * reported.max(1e-12), "{recomputed} vs {reported}");

    let (bh, base) = read_csv(&out.join("baseline.csv"));
    assert_eq!(bh, vec!["strain", "mean", "std"]);
    assert!(base.iter().all(|r| r[2] >= 0.0));
    assert!(report.baseline_nrmse.is_some());

    // a second run is identical apart from timing
    let mut again = cfg.clone();
    again.out_dir = Some(dir.path().join("run2"));
    again.record_wall_clock = true;
    let second = run_experiment(&again).unwrap();
    assert!(second.wall_clock_seconds.is_some());
    assert_eq!(second.without_wall_clock(), report.without_wall_clock());
    assert_eq!(
        std::fs::read(out.join("generated.csv")).unwrap(),
        std::fs::read(dir.path().join("run2/generated.csv")).unwrap()
    );
}

#[test]
fn baseline_toggle_controls_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(dir.path(), FixtureKind::Curves, 3);
    cfg.baseline = false;
    cfg.plot = false;
    let report = run_experiment(&cfg).unwrap();
    let out = cfg.out_dir.unwrap();
    assert!(report.baseline_nrmse.is_none());
    assert!(!out.join("baseline.csv").exists() && !out.join("plot.svg").exists());
}

#[test]
fn field_run_reports_pca_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), FixtureKind::Fields, 5);
    let report = run_experiment(&cfg).unwrap();
    let pca = report.pca.expect("field runs carry a PCA summary");
    assert_eq!(pca.dim, cfg.pca_dim);
    let (abs, rel) = pca.target_residual.unwrap();
    assert!(abs >= 0.0 && (0.0..=1.0).contains(&rel));
    let (header, rows) = read_csv(&cfg.out_dir.unwrap().join("generated.csv"));
    assert_eq!(header.len(), 40);
    assert_eq!(rows[0].len(), 40);

    let mut bad = quick_config(&dir.path().join("b"), FixtureKind::Fields, 1);
    bad.baseline = true;
    assert!(run_experiment(&bad).is_err());
}

#[test]
fn binary_pipeline_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let st = bin()
        .args(["synth", "--kind", "curves", "--seed", "4", "--out-dir"])
        .arg(d)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let cfg_path = d.join("config.json");
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.train.epochs = 5;
    cfg.train.displacement.hidden = vec![8];
    cfg.train.body_force.hidden = vec![8];
    cfg.train.generation_samples = 256;
    cfg.save(&cfg_path).unwrap();

    let run = bin().arg("run").arg("--config").arg(&cfg_path).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("target_nrmse,") && stdout.contains("negative_jacobian_fraction,"));
    let report: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(run.status.code(), Some(if report.jacobian_check_passed { 0 } else { 2 }));

    let model = d.join("run/model.json");
    let gen = bin()
        .args(["generate", "--target"])
        .arg(report.target_condition.unwrap().to_string())
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(d.join("g.csv"))
        .arg("--reference")
        .arg(d.join("target.csv"))
        .output()
        .unwrap();
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(String::from_utf8_lossy(&gen.stdout).contains("nrmse,"));
    assert_eq!(std::fs::read(d.join("g.csv")).unwrap(), std::fs::read(d.join("run/generated.csv")).unwrap());
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    assert!(sidecar["loss_history"].is_array());

    // out-of-range condition: validation error
    let oob = bin()
        .args(["generate", "--target", "1e9", "--out"])
        .arg(d.join("x.csv"))
        .arg("--model")
        .arg(&model)
        .status()
        .unwrap();
    assert_eq!(oob.code(), Some(2));
    // unreadable model: I/O error
    let io = bin()
        .args(["generate", "--target", "1", "--model"])
        .arg(d.join("nope.json"))
        .arg("--out")
        .arg(d.join("x.csv"))
        .status()
        .unwrap();
    assert_eq!(io.code(), Some(4));
    // bad config value: validation error
    let mut broken = cfg.clone();
    broken.train.learning_rate = -1.0;
    broken.save(&d.join("broken.json")).unwrap();
    assert_eq!(bin().arg("run").arg("--config").arg(d.join("broken.json")).status().unwrap().code(), Some(2));
}

#[test]
fn binary_small_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let src = write(d, "s.csv", "x,mass\n1,0.3333333333333333\n2,0.3333333333333333\n4,0.3333333333333334\n");
    let dst = write(d, "t.csv", "x,mass\n5,0.3333333333333333\n1,0.3333333333333333\n3,0.3333333333333334\n");
    let ot = bin().args(["ot-discrete", "--time-dependent", "--src"]).arg(&src).arg("--dst").arg(&dst).output().unwrap();
    assert!(ot.status.success(), "{}", String::from_utf8_lossy(&ot.stderr));
    let text = String::from_utf8_lossy(&ot.stdout);
    assert!(text.contains("0,1\n1,2\n2,0\n"), "{text}");
    let cost: f64 = text.lines().find_map(|l| l.strip_prefix("cost,")).unwrap().parse().unwrap();
    assert!((cost - 2.0 / 3.0).abs() < 1e-12);

    let geo = bin()
        .args(["geodesic", "--metric", "lobachevsky", "--x0", "0,1", "--v0", "1,0", "--t-end", "1", "--steps", "100", "--out"])
        .arg(d.join("geo.csv"))
        .status()
        .unwrap();
    assert!(geo.success());
    let (header, rows) = read_csv(&d.join("geo.csv"));
    assert_eq!(header, vec!["t", "x1", "x2", "v1", "v2"]);
    assert_eq!(rows.len(), 101);
    let last = &rows[100];
    assert!((last[1] - 1f64.tanh()).abs() < 1e-6 && (last[2] - 1.0 / 1f64.cosh()).abs() < 1e-6);

    let pf = bin()
        .args(["sample-pfode", "--score", "gaussian:2", "--n", "200", "--steps", "50", "--seed", "1", "--out"])
        .arg(d.join("pf.csv"))
        .status()
        .unwrap();
    assert!(pf.success());
    let (_, samples) = read_csv(&d.join("pf.csv"));
    assert_eq!(samples.len(), 200);

    let unknown = bin().args(["geodesic", "--metric", "sphere", "--x0", "0", "--v0", "0", "--out", "x"]).status().unwrap();
    assert_ne!(unknown.code(), Some(0));
}
