use std::path::Path;
use std::process::Command;

use searisk::config::{Layout, PipelineConfig};
use searisk_core::metrics::EvalReport;
use searisk_core::nn::ModelKind;

/// Small enough to run the whole chain in a few seconds.
fn small_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.out_dir = out.to_path_buf();
    cfg.data.synthetic.n_days = 14;
    cfg.data.synthetic.n_vessels = 120;
    cfg.data.synthetic.broadcasts_per_day = 12;
    cfg.train.epochs_max = 3;
    cfg.train.hidden = 8;
    cfg.train.heads = 2;
    cfg.train.mlp_hidden = 8;
    cfg.explain_limit = Some(25);
    cfg
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> String {
    let path = dir.join("searisk.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(config: &str, args: &[&str]) -> i32 {
    let mut argv = vec!["searisk", "--config", config];
    argv.extend_from_slice(args);
    searisk::run(argv)
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn run_all_matches_the_individual_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(&tmp.path().join("a"));
    let b = small_config(&tmp.path().join("b"));
    let ca = write_config(tmp.path(), &a);
    assert_eq!(run(&ca, &["run-all"]), 0);

    let cb_dir = tmp.path().join("cfg_b");
    std::fs::create_dir_all(&cb_dir).unwrap();
    let cb = write_config(&cb_dir, &b);
    for step in [
        &["synth"][..],
        &["ingest"],
        &["build"],
        &["train", "--model", "lr"],
        &["train", "--model", "gcn"],
        &["train", "--model", "tgat"],
        &["eval"],
        &["explain"],
        &["validate"],
    ] {
        assert_eq!(run(&cb, step), 0, "step {step:?}");
    }

    let (la, lb) = (Layout::new(&a), Layout::new(&b));
    assert_eq!(read(la.records()), read(lb.records()));
    assert_eq!(read(la.split()), read(lb.split()));
    for m in ModelKind::ALL {
        assert_eq!(read(la.checkpoint(m)), read(lb.checkpoint(m)), "{m}");
    }
    assert_eq!(read(la.evidence()), read(lb.evidence()));
    assert_eq!(read(la.consistency()), read(lb.consistency()));
    assert_eq!(read(la.eval_dir().join("comparison.txt")), read(lb.eval_dir().join("comparison.txt")));

    let n_reports = std::fs::read_dir(la.reports_dir()).unwrap().count();
    assert_eq!(n_reports, 25);
}

#[test]
fn eval_writes_all_columns_for_each_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = write_config(tmp.path(), &cfg);
    for step in [&["synth"][..], &["ingest"], &["build"], &["train", "--model", "gcn"], &["eval"]] {
        assert_eq!(run(&c, step), 0, "step {step:?}");
    }
    let layout = Layout::new(&cfg);
    let table = String::from_utf8(read(layout.eval_dir().join("comparison.txt"))).unwrap();
    let header = table.lines().next().unwrap();
    for col in ["AUC", "AP", "F1", "Recall"] {
        assert!(header.contains(col), "{header}");
    }
    // only the trained model is scored
    assert_eq!(table.lines().filter(|l| l.contains("GCN")).count(), 1);
    assert!(!layout.eval_dir().join("tgat.json").exists());
    let report: EvalReport = serde_json::from_slice(&read(layout.eval_dir().join("gcn.json"))).unwrap();
    assert!((0.0..=1.0).contains(&report.auc));
}

#[test]
fn steps_out_of_order_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), &small_config(tmp.path()));
    assert_eq!(run(&c, &["build"]), 1);
    assert_eq!(run(&c, &["explain"]), 1);
}

#[test]
fn tampered_reports_fall_below_the_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.models = vec![ModelKind::Tgat];
    cfg.explain_limit = Some(5);
    let c = write_config(tmp.path(), &cfg);
    assert_eq!(run(&c, &["run-all"]), 0);

    // flip every direction in one of the five reports: 20/25 = 0.8
    let dir = Layout::new(&cfg).reports_dir();
    let path = std::fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
    let mut doc: serde_json::Value = serde_json::from_slice(&read(&path)).unwrap();
    for d in doc["report"]["target_feature_drivers"].as_array_mut().unwrap() {
        let flipped = match d["direction"].as_str().unwrap() {
            "increase risk" => "decrease risk",
            _ => "increase risk",
        };
        d["direction"] = flipped.into();
    }
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();

    assert_eq!(run(&c, &["validate"]), searisk::EXIT_BELOW_FLOOR);
    assert_eq!(run(&c, &["validate", "--consistency-floor", "0.8"]), 0);
    assert_eq!(run(&c, &["validate", "--consistency-floor", "1.5"]), 1, "invalid floor is a config error");
    let s: searisk_report::consistency::ConsistencySummary =
        serde_json::from_slice(&read(Layout::new(&cfg).consistency())).unwrap();
    assert_eq!((s.n_judgments, s.n_inconsistent), (25, 5));
}

#[test]
fn binary_usage_errors_exit_two() {
    let bin = env!("CARGO_BIN_EXE_searisk");
    let out = Command::new(bin).args(["train", "--model", "rnn"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8(out.stdout).unwrap();
    for sub in ["synth", "ingest", "build", "train", "eval", "explain", "validate", "run-all"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn show_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_searisk");
    let out = Command::new(bin)
        .args(["--seed", "11", "--out"])
        .arg(tmp.path())
        .arg("show-config")
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg: PipelineConfig = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.out_dir, tmp.path());
}
