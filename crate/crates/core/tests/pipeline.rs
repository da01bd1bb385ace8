use std::fs;

use qmda::bundle::{load_bundle, AnyBundle, BUNDLE_FILE};
use qmda::experiments::{
    assimilate, preset, run_config, train, write_run, write_training, ExperimentConfig, Outcome, CONFIG_FILE, PRESETS,
    RUN_FILE, SUMMARY_FILE,
};
use qmda::Error;

/// Lorenz 63 at a size that trains in well under a second.
fn small_l63() -> ExperimentConfig {
    let mut c = preset("l63-full", 0.03).unwrap();
    c.run_steps = 1000;
    c
}

#[test]
fn saved_bundle_reproduces_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_l63();
    let trained = train(&cfg).unwrap();
    let hash = write_training(dir.path(), &cfg, &trained).unwrap();

    let (loaded, found) = load_bundle(dir.path()).unwrap();
    assert_eq!(found, hash);
    assert_eq!(loaded.encode(), trained.bundle.encode());

    let direct = assimilate(&cfg, &trained.bundle).unwrap();
    let reloaded = assimilate(&cfg, &loaded).unwrap();
    assert_eq!(direct, reloaded);

    let stored = ExperimentConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(stored, cfg);

    let summary = write_run(dir.path(), &cfg, &hash, &direct).unwrap();
    assert_eq!(summary.bundle_hash, hash);
    assert!(dir.path().join(RUN_FILE).exists());
    assert!(dir.path().join(SUMMARY_FILE).exists());
}

#[test]
fn tampered_bundle_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("circle-binary-a", 1.0).unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let trained = train(&cfg).unwrap();
    write_training(dir.path(), &cfg, &trained).unwrap();

    let path = dir.path().join(BUNDLE_FILE);
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();

    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::BundleMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let cfg = small_l63();
    let a = train(&cfg).unwrap().bundle.encode();
    let b = train(&cfg).unwrap().bundle.encode();
    assert_eq!(a, b);

    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(train(&other).unwrap().bundle.encode(), a);
}

#[test]
fn every_preset_round_trips_through_json() {
    for name in PRESETS {
        let cfg = preset(name, 0.5).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let cfg = preset("circle-cos", 1.0).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
    v["extra"] = serde_json::json!(1);
    let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_preset_is_a_parameter_error() {
    let err = preset("circle-binary-z", 1.0).unwrap_err();
    assert!(matches!(err, Error::Parameter(_)));
    assert!(preset("circle-cos", 0.0).is_err());
}

#[test]
fn preset_errors_name_the_preset() {
    let mut cfg = small_l63();
    cfg.l = cfg.n_train + 10;
    // `validate` would refuse this; the pipeline must too.
    let err = run_config(&cfg).unwrap_err();
    assert!(err.to_string().contains("l63-full"), "{err}");
}

#[test]
fn circle_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("circle-binary-a", 1.0).unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let Outcome::Assimilation(summary) = run_config(&cfg).unwrap() else {
        panic!("expected an assimilation outcome");
    };
    assert_eq!(summary.preset, "circle-binary-a");
    let text = fs::read_to_string(dir.path().join(RUN_FILE)).unwrap();
    assert!(text.lines().count() > 100);
    let (bundle, _) = load_bundle(dir.path()).unwrap();
    assert!(matches!(bundle, AnyBundle::Circle(_)));
    assert_eq!(bundle.s(), 2);
}

#[test]
fn reruns_write_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut cfg = small_l63();
        cfg.out_dir = dir.path().to_path_buf();
        run_config(&cfg).unwrap();
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join(RUN_FILE)).unwrap();
    assert_eq!(read(&a), read(&b));
}
