use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command as Process;

use extremo_cli::synthetic::{generate, SyntheticSpec};
use extremo_cli::{run, CliError, Command, Invocation, ModelRef};

fn invocation(config: &Path, overrides: &[(&str, &str)]) -> Invocation {
    Invocation {
        config: Some(config.to_path_buf()),
        overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        seed: None,
    }
}

fn toy(dir: &Path, n_days: usize, test_days: usize) -> std::path::PathBuf {
    let spec = SyntheticSpec {
        n_days,
        test_days,
        ..SyntheticSpec::default()
    };
    generate(dir, &spec).unwrap().config
}

/// Every artifact except the run manifests, by path relative to the output directory.
fn artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if p.is_dir() {
                if rel != "manifests" {
                    walk(root, &p, out);
                }
            } else {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn full_pipeline_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 600, 200);
    run(&Command::All, &invocation(&config, &[])).unwrap();
    let out = dir.path().join("output");
    for rel in [
        "panel.csv",
        "features.csv",
        "labels/up5.csv",
        "models/ta_svm.json",
        "models/twitter_parallel.ckpt",
        "models/fusion.json",
        "eval/summary.txt",
        "sweep/fusion.json",
        "backtest/backtest.json",
        "report.md",
        "manifests/backtest.json",
    ] {
        assert!(out.join(rel).is_file(), "{rel} missing");
    }
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("eval/fusion.json")).unwrap()).unwrap();
    for r in eval["sweep"]["results"].as_array().unwrap() {
        let acc = r["report"]["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifests/train_ta.json")).unwrap()).unwrap();
    let recorded = manifest["artifacts"]["models/ta_svm.json"].as_str().unwrap();
    assert_eq!(
        recorded,
        extremo_cli::workspace::sha256_hex(&std::fs::read(out.join("models/ta_svm.json")).unwrap())
    );
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let config = toy(d.path(), 300, 100);
        run(&Command::All, &invocation(&config, &[])).unwrap();
    }
    let left = artifacts(&a.path().join("output"));
    let right = artifacts(&b.path().join("output"));
    assert_eq!(left.keys().collect::<Vec<_>>(), right.keys().collect::<Vec<_>>());
    for (k, v) in &left {
        assert!(v == &right[k], "{k} differs between runs");
    }
}

#[test]
fn training_into_the_test_period_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    run(&Command::Ingest, &invocation(&config, &[])).unwrap();
    run(&Command::Features, &invocation(&config, &[])).unwrap();
    let err = run(
        &Command::Train(ModelRef::Ta),
        &invocation(&config, &[("split.train_end", "2030-01-01")]),
    )
    .unwrap_err();
    assert!(
        matches!(err, CliError::Validation(ref m) if m.contains("leakage")),
        "{err}"
    );
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_prerequisites_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    let err = run(&Command::Train(ModelRef::Ta), &invocation(&config, &[])).unwrap_err();
    assert!(matches!(err, CliError::Dependency(_)), "{err}");

    run(&Command::Ingest, &invocation(&config, &[])).unwrap();
    run(&Command::Features, &invocation(&config, &[])).unwrap();
    run(&Command::Train(ModelRef::Ta), &invocation(&config, &[])).unwrap();
    let err = run(&Command::Train(ModelRef::Fusion), &invocation(&config, &[])).unwrap_err();
    assert!(matches!(err, CliError::Dependency(_)), "{err}");

    let status = Process::new(env!("CARGO_BIN_EXE_extremo"))
        .args(["backtest", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_input_names_its_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    let err = run(&Command::Ingest, &invocation(&config, &[("data.eth", "nowhere.csv")])).unwrap_err();
    assert!(err.to_string().contains("data.eth"), "{err}");
    let status = Process::new(env!("CARGO_BIN_EXE_extremo"))
        .args(["ingest", "--data.eth", "nowhere.csv", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn incompatible_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    for c in [Command::Ingest, Command::Features, Command::Train(ModelRef::Ta)] {
        run(&c, &invocation(&config, &[])).unwrap();
    }
    let err = run(
        &Command::Evaluate(vec![ModelRef::Ta]),
        &invocation(&config, &[("features.window", "3")]),
    )
    .unwrap_err();
    assert!(err.to_string().contains("incompatible"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    let err = run(&Command::Ingest, &invocation(&config, &[("svm.folds_typo", "3")])).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)), "{err}");
}

#[test]
fn evaluation_matches_the_metrics_module_and_inputs_stay_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        label_noise: 0.0,
        ..SyntheticSpec::default()
    };
    let config = generate(dir.path(), &spec).unwrap().config;
    let inputs = ["btc.csv", "eth.csv", "gold.csv", "embeddings.pbem", "config.toml"];
    let before: Vec<Vec<u8>> = inputs
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect();
    run(&Command::All, &invocation(&config, &[])).unwrap();
    let after: Vec<Vec<u8>> = inputs
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect();
    assert_eq!(before, after);

    let out = dir.path().join("output");
    for cmd in [
        "ingest",
        "features",
        "train_ta",
        "train_twitter_parallel",
        "train_fusion",
        "evaluate",
        "sweep_threshold",
        "backtest",
        "report",
    ] {
        assert!(
            out.join(format!("manifests/{cmd}.json")).is_file(),
            "no manifest for {cmd}"
        );
    }
    let eval: extremo_cli::pipeline::Evaluation =
        serde_json::from_slice(&std::fs::read(out.join("eval/fusion.json")).unwrap()).unwrap();
    let direct = extremo::fusion_eval::sweep_thresholds(&eval.probabilities, &eval.labels, &[0.5, 0.95, 0.99]).unwrap();
    assert_eq!(eval.sweep, direct);
    assert_eq!(eval.sweep.results.len(), 3);
    // Without label noise the planted events determine the label, so the fused model is near exact.
    assert!(eval.sweep.results[0].report.accuracy >= 0.95, "{:?}", eval.sweep.results[0].report);
}

#[test]
fn baseline_strategies_need_no_models() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy(dir.path(), 300, 100);
    let inv = invocation(&config, &[("backtest.strategies", "[\"buy_hold\", \"ma_cross\"]")]);
    run(&Command::Ingest, &inv).unwrap();
    let console = run(&Command::Backtest, &inv).unwrap();
    let table = std::fs::read_to_string(dir.path().join("output/backtest/full.txt")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("Buy and Hold") && table.contains("MA cross (7/21)"));
    assert!(console.contains(&table));
    for s in ["buy_and_hold_full.csv", "ma_cross_7_21_full.csv"] {
        assert!(dir.path().join("output/backtest/equity").join(s).is_file());
    }
}
