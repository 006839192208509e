use std::path::Path;

use delaydop::config::ExperimentConfig;
use delaydop::signal::SamplingGrid;
use delaydop::{DataError, Error};
use delaydop_cli::{exit_code, run_command};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["delaydop"];
    argv.extend_from_slice(args);
    run_command(argv)
}

/// Small but valid experiment: 64×32 grid, 32×32 input, 2 encoder blocks.
fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.grid = SamplingGrid::centered(64, 32, 160e6 / 64.0, 64e-6);
    cfg.preprocess.roi.height = 32;
    cfg.preprocess.roi.width = 32;
    cfg.model.base_channels = 4;
    cfg.model.n_encoder_blocks = 2;
    cfg.model.head_channels = vec![8];
    cfg.training.train_size = 8;
    cfg.training.val_size = 4;
    cfg.training.batch_size = 4;
    cfg.training.epochs = 1;
    cfg.evaluation.order_snr_db = vec![20.0];
    cfg.evaluation.p_max = 3;
    let path = dir.join("small.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&["bogus"]), 2);
    assert_eq!(run(&["generate"]), 2);
    assert_eq!(run(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["scenario", "--config", "/nonexistent/cfg.toml", "--out", out.to_str().unwrap()]), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = 3\n").unwrap();
    assert_eq!(run(&["scenario", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists(), "failed commands must not create output");
}

#[test]
fn error_classes_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Data(DataError::Checksum)), 3);
    assert_eq!(exit_code(&Error::Singular("x".into())), 4);
}

#[test]
fn missing_or_corrupt_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["train", "--config", &cfg, "--out", o]), 3);
    assert_eq!(run(&["generate", "--config", &cfg, "--out", o]), 0);
    let train = out.join("train.bin");
    let mut bytes = std::fs::read(&train).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&train, bytes).unwrap();
    assert_eq!(run(&["train", "--config", &cfg, "--out", o]), 3);
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn full_pipeline_writes_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["generate", "--config", &cfg, "--out", o, "--seed", "3"]), 0);
    assert_eq!(run(&["train", "--config", &cfg, "--out", o, "--seed", "3"]), 0);
    let model = out.join("model.ckpt");
    let m = model.to_str().unwrap();
    let val = out.join("val.bin");
    assert_eq!(run(&["infer", "--config", &cfg, "--out", o, "--model", m, "--data", val.to_str().unwrap(), "--refine", "3"]), 0);
    assert_eq!(run(&["eval-mse", "--config", &cfg, "--out", o, "--model", m, "--trials", "4"]), 0);
    assert_eq!(run(&["eval-order", "--config", &cfg, "--out", o, "--model", m, "--trials", "3", "--deltas", "0.5,0.8"]), 0);
    assert_eq!(run(&["scenario", "--config", &cfg, "--out", o]), 0);

    let history = std::fs::read_to_string(out.join("loss_history.csv")).unwrap();
    assert!(history.starts_with("# config_hash="));
    assert_eq!(history.lines().count(), 4);

    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(est["snapshots"].as_array().unwrap().len(), 4);
    assert!(est["snapshots"][0]["refined"].is_array());

    let sweep = std::fs::read_to_string(out.join("mse_sweep.csv")).unwrap();
    for name in ["peak_gn", "cnn", "cnn_gn"] {
        assert!(sweep.contains(name), "{name} missing");
    }
    let order: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("order_errors.json")).unwrap()).unwrap();
    assert_eq!(order["cells"].as_array().unwrap().len(), 3);

    let scenario = std::fs::read_to_string(out.join("scenario.csv")).unwrap();
    assert!(scenario.contains("# los_tau_ns=7.47"));

    // A checkpoint from a different architecture is a configuration error.
    let mut other = ExperimentConfig::from_toml(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    other.model.base_channels = 6;
    let other_path = dir.path().join("other.toml");
    std::fs::write(&other_path, other.to_toml()).unwrap();
    assert_eq!(run(&["eval-mse", "--config", other_path.to_str().unwrap(), "--out", o, "--model", m, "--trials", "2"]), 2);
}
