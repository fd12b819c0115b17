mod common;

use std::collections::BTreeMap;
use std::process::Command;

use common::{run, write_dataset};
use isrc_core::classify::DecisionRecord;
use isrc_core::dataset::load_manifest;
use isrc_core::gallery::{read_file, subsample_gallery, subsample_seed};
use isrc_core::preprocess::{PreprocessConfig, Resolution};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_isrc"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("ISRC_")) {
        c.env_remove(k);
    }
    c
}

#[test]
fn build_writes_tau_100_gallery_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 2, 3);
    let (a, b) = (dir.path().join("a.isrg"), dir.path().join("b.isrg"));
    let m = data.to_str().unwrap();
    for g in [&a, &b] {
        run(&["--resolution", "10x10", "--manifest", m, "--gallery", g.to_str().unwrap(), "--seed", "9", "build"]).unwrap();
    }
    let ga = read_file(&a).unwrap();
    assert_eq!(ga.tau(), 100);
    assert_eq!(ga.class_ids(), ["class0", "class1"]);
    assert!(ga.classes().iter().all(|r| r.tau() == 100 && r.n_images() == 6));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn build_summary_reports_the_subsampled_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 2, 3);
    let g = dir.path().join("g.isrg");
    let out = run(&[
        "--resolution", "10x10", "--manifest", data.to_str().unwrap(), "--gallery", g.to_str().unwrap(),
        "--gallery-cap", "4", "--seed", "5", "build",
    ])
    .unwrap();
    let row = out.lines().find(|l| l.starts_with("class1")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[1..3], ["6", "4"]);

    // Same columns as subsampling the pooled class directly.
    let manifest = load_manifest(&data).unwrap();
    let pre = PreprocessConfig { resolution: Resolution::new(10, 10).unwrap(), histeq: false };
    let pooled: Vec<_> = manifest
        .load_sets(&pre)
        .unwrap()
        .sets
        .into_iter()
        .filter(|s| s.class_id == "class1")
        .flat_map(|s| s.vectors)
        .collect();
    let kept = subsample_gallery(&pooled, 4, subsample_seed(5, "class1")).unwrap();
    let gallery = read_file(&g).unwrap();
    let reg = &gallery.classes()[1];
    if !reg.is_perturbed() {
        for (j, v) in kept.iter().enumerate() {
            assert_eq!(reg.matrix().column(j).as_slice(), v.values());
        }
    } else {
        for (j, v) in kept.iter().enumerate() {
            assert!(reg.matrix().column(j).iter().zip(v.values()).all(|(a, b)| (a - b).abs() <= 0.5));
        }
    }
}

#[test]
fn classify_predicts_source_class_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 3, 2, 3);
    let g = dir.path().join("g.isrg");
    let (m, gp) = (data.to_str().unwrap(), g.to_str().unwrap());
    run(&["--resolution", "10x10", "--manifest", m, "--gallery", gp, "build"]).unwrap();

    let mut by_mode = BTreeMap::new();
    for mode in ["fast", "online"] {
        let out = run(&["--manifest", m, "--gallery", gp, "--strategy", "all", "--mode", mode, "classify"]).unwrap();
        let records: Vec<DecisionRecord> = out.lines().map(|l| DecisionRecord::from_line(l).unwrap()).collect();
        assert_eq!(records.len(), 3 * 2 * 3);
        for r in &records {
            assert_eq!(r.set_id.split('/').next().unwrap(), r.predicted, "{r:?}");
        }
        by_mode.insert(mode, records.iter().map(|r| r.predicted.clone()).collect::<Vec<_>>());
    }
    assert_eq!(by_mode["fast"], by_mode["online"]);
}

#[test]
fn classify_rejects_a_resolution_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 1, 2);
    let g = dir.path().join("g.isrg");
    let (m, gp) = (data.to_str().unwrap(), g.to_str().unwrap());
    run(&["--resolution", "10x10", "--manifest", m, "--gallery", gp, "build"]).unwrap();
    let err = run(&["--resolution", "12x12", "--manifest", m, "--gallery", gp, "classify"]).unwrap_err();
    assert!(err.to_string().contains("configured resolution"), "{err:#}");
}

#[test]
fn eval_synthetic_has_one_accuracy_per_fold_and_is_reproducible() {
    let args = [
        "--folds", "10", "--strategy", "all", "--seed", "4", "eval",
        "--synthetic", "classes=3,dim=2,tau=36,sets=3,images=5,sigma=8", "--format", "json",
    ];
    let a = run(&args).unwrap();
    let b = run(&args).unwrap();
    let accuracy: Vec<serde_json::Value> = a
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["record"] == "accuracy")
        .collect();
    assert_eq!(accuracy.len(), 3);
    for v in &accuracy {
        assert_eq!(v["per_fold"].as_array().unwrap().len(), 10);
    }
    let strip = |s: &str| s.lines().filter(|l| l.contains("\"accuracy\"")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));

    let table = run(&["--folds", "2", "--strategy", "all", "eval", "--synthetic", "classes=3,dim=2,tau=36,sets=3,images=5"]).unwrap();
    assert!(["MV", "NN", "EWV"].iter().all(|s| table.contains(s)));
}

#[test]
fn eval_over_a_manifest_at_several_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 3, 3);
    let out = run(&[
        "--resolution", "6x6,8x8", "--folds", "2", "--strategy", "all", "--manifest", data.to_str().unwrap(), "eval",
    ])
    .unwrap();
    let header = out.lines().next().unwrap();
    assert!(header.contains("6x6") && header.contains("8x8"), "{out}");
}

#[test]
fn bench_needs_three_repeats() {
    let err = run(&["bench", "--repeats", "1", "--scenario", "classes=2,gallery=4,probes=2,tau=16"]).unwrap_err();
    assert!(err.to_string().contains("repeats"), "{err:#}");
}

#[test]
fn bench_scenario_table_and_records() {
    let out = run(&["bench", "--repeats", "3", "--scenario", "classes=3,gallery=5,probes=1,tau=36", "--scenario",
        "classes=3,gallery=5,probes=4,tau=36"]).unwrap();
    assert_eq!(out.lines().count(), 3);
    assert!(out.contains("batch advantage not expected"));
    let json = run(&["bench", "--repeats", "3", "--format", "json", "--scenario", "classes=3,gallery=5,probes=4,tau=36"]).unwrap();
    let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(v["status"], "measured");
    assert!(v["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn binary_exit_codes_and_streams() {
    let ok = bin().args(["eval", "--synthetic", "classes=2,dim=2,tau=16,sets=2,images=3", "--folds", "1"]).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("EWV"));

    let bad = bin().args(["--manifest", "/nonexistent/m.toml", "--gallery", "/tmp/x.isrg", "build"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(bad.stdout.is_empty());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("/nonexistent/m.toml"));
}

#[test]
fn flags_override_environment_which_overrides_defaults() {
    let eval = ["eval", "--synthetic", "classes=2,dim=2,tau=16,sets=2,images=3", "--format", "json"];
    let folds = |out: &[u8]| -> usize {
        let first = String::from_utf8_lossy(out).lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        v["per_fold"].as_array().unwrap().len()
    };
    let default = bin().args(eval).output().unwrap();
    assert_eq!(folds(&default.stdout), 10);
    let env = bin().args(eval).env("ISRC_FOLDS", "3").output().unwrap();
    assert_eq!(folds(&env.stdout), 3);
    let flag = bin().args(eval).env("ISRC_FOLDS", "3").args(["--folds", "2"]).output().unwrap();
    assert_eq!(folds(&flag.stdout), 2);
}

#[test]
fn synthetic_spec_errors_are_reported() {
    assert!(run(&["eval", "--synthetic", "classes=2,dim=2"]).is_err());
    assert!(run(&["eval", "--synthetic", "classes=2,dim=2,sets=2,images=2,colour=3"]).is_err());
    assert!(run(&["--beta", "0", "eval", "--synthetic", "classes=2,dim=2,sets=2,images=2"]).is_err());
    // dim must stay below tau.
    assert!(run(&["eval", "--synthetic", "classes=2,dim=16,tau=16,sets=2,images=2"]).is_err());
}
