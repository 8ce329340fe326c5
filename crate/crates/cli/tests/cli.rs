//! The binary against direct library calls on the same inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bottomflag::bayesopt::BoConfig;
use bottomflag::bottomline::{detect_bottom, label_pings, labels_to_csv, ThresholdSweep};
use bottomflag::echogram::{depth_series_to_csv, NAN_FILL_DB};
use bottomflag::harness::{self, FormatConfig, SamplingPlan};
use bottomflag::learn::{history_to_csv, Algorithm};
use bottomflag::synthgen::{self, SurveyConfig};
use bottomflag::{BottomRecord, Echogram, LabelingConfig, ModelSpec, StandardizationStats, TrainConfig, TrainedModel};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bottomflag")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn small_config(seed: u64) -> SurveyConfig {
    SurveyConfig { cols: 1500, seed, survey_id: "golden".into(), ..SurveyConfig::default() }
}

/// Writes a config file and generates the survey through the binary.
fn gen(dir: &Path, name: &str, cfg: &SurveyConfig, seed: u64) -> PathBuf {
    let config = dir.join(format!("{name}.cfg"));
    std::fs::write(&config, cfg.to_kv()).unwrap();
    let out = dir.join(format!("{name}.echg"));
    ok(&["gen", "--config", s(&config), "--out", s(&out), "--seed", &seed.to_string()]);
    out
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

#[test]
fn gen_is_deterministic_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", &small_config(0), 7);
    let b = gen(dir.path(), "b", &small_config(0), 7);
    for ext in ["echg", "clean.csv", "truth.csv"] {
        assert_eq!(read(a.with_extension(ext)), read(b.with_extension(ext)), "{ext}");
    }
    let lib = synthgen::generate(&small_config(7)).unwrap();
    assert_eq!(read(&a), lib.echogram.to_bytes());
    assert_eq!(read(a.with_extension("clean.csv")), depth_series_to_csv("clean_bottom_m", &lib.record.clean_bottom_m).into_bytes());
    assert_eq!(read(a.with_extension("truth.csv")), lib.truth.to_csv().into_bytes());

    let c = gen(dir.path(), "c", &small_config(0), 8);
    assert_ne!(read(a), read(c));
}

#[test]
fn detect_and_label_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let echg = gen(dir.path(), "a", &small_config(0), 1);
    let bottom = dir.path().join("bottom.csv");
    ok(&["detect", "--input", s(&echg), "--out", s(&bottom)]);
    let e = Echogram::load(&echg).unwrap();
    let auto = detect_bottom(&e);
    assert_eq!(read(&bottom), depth_series_to_csv("bottom_m", &auto).into_bytes());

    let clean_csv = echg.with_extension("clean.csv");
    let clean = synthgen::generate(&small_config(1)).unwrap().record.clean_bottom_m;
    let record = BottomRecord::new(auto, clean).unwrap();
    let labels = dir.path().join("labels.csv");
    ok(&["label", "--bottom", s(&bottom), "--clean", s(&clean_csv), "--threshold", "3.31", "--out", s(&labels)]);
    let want = label_pings(&record, &LabelingConfig::with_threshold(3.31), &[]).unwrap();
    assert_eq!(read(&labels), labels_to_csv(&want).into_bytes());

    ok(&["label", "--bottom", s(&bottom), "--clean", s(&clean_csv), "--echogram", s(&echg), "--out", s(&labels)]);
    let dropped = e.filter_no_bottom(bottomflag::echogram::NO_BOTTOM_THRESHOLD_DB).dropped;
    assert!(!dropped.is_empty());
    let want = label_pings(&record, &LabelingConfig::default(), &dropped).unwrap();
    assert_eq!(read(&labels), labels_to_csv(&want).into_bytes());
}

#[test]
fn formatted_output_passes_verify() {
    let dir = tempfile::tempdir().unwrap();
    let echg = gen(dir.path(), "a", &small_config(0), 2);
    let raw = Echogram::load(&echg).unwrap();
    assert!(raw.has_nan());

    let out = bin(&["verify", "--input", s(&echg)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "data");

    let formatted = dir.path().join("f.echg");
    let stats = dir.path().join("stats.json");
    ok(&["format", "--input", s(&echg), "--out", s(&formatted), "--drop-no-bottom", "--stats-out", s(&stats)]);
    let report: Value = serde_json::from_slice(&ok(&["verify", "--input", s(&formatted)]).stdout).unwrap();
    assert_eq!(report["has_nan"], false);
    assert!(report["min_db"].as_f64().unwrap() >= -200.0);

    let want = harness::format_echogram(&raw, &FormatConfig::default(), true).unwrap();
    assert_eq!(read(&formatted), want.to_bytes());
    let want_stats = StandardizationStats::fit(want.pings().iter().map(Vec::as_slice)).unwrap();
    assert_eq!(serde_json::from_slice::<StandardizationStats>(&read(&stats)).unwrap(), want_stats);

    // a floor above the fill value is a violation
    let out = bin(&["verify", "--input", s(&formatted), "--min-db", "-150"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(NAN_FILL_DB < -150.0);
}

#[test]
fn train_flag_and_sweep_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let echg = gen(dir.path(), "a", &small_config(0), 3);
    let clean = echg.with_extension("clean.csv");
    let model_path = dir.path().join("m.bfm");
    let history = dir.path().join("h.csv");
    let common = ["--input", s(&echg), "--clean", s(&clean), "--algorithm", "svm", "--epochs", "4", "--seed", "11"];
    ok(&[&["train"][..], &common, &["--out", s(&model_path), "--history", s(&history)]].concat());

    let lib = synthgen::generate(&small_config(3)).unwrap();
    let prepared = harness::prepare(&lib.echogram, &lib.record.clean_bottom_m, &FormatConfig::default()).unwrap();
    let cfg = TrainConfig { epochs: 4, seed: 11, ..TrainConfig::default() };
    let spec = ModelSpec::tuned(Algorithm::Svm);
    let model = harness::train_on_pool(&prepared.pool, &spec, &cfg, 0.1).unwrap();
    assert_eq!(read(&model_path), model.to_bytes().unwrap());
    assert_eq!(read(&history), history_to_csv(&model.history).into_bytes());

    let flags = dir.path().join("flags.csv");
    let formatted = dir.path().join("f.echg");
    ok(&["format", "--input", s(&echg), "--out", s(&formatted)]);
    ok(&["flag", "--model", s(&model_path), "--input", s(&formatted), "--passes", "5", "--seed", "2", "--out", s(&flags)]);
    let loaded = TrainedModel::load(&model_path).unwrap();
    let want = harness::flag_pings(&loaded, &prepared.formatted, 0.5, 5, 2).unwrap();
    assert_eq!(read(&flags), harness::flags_to_csv(&want).into_bytes());

    let sweep = dir.path().join("sweep.csv");
    let out = ok(&[&["sweep"][..], &common, &["--lo", "3.0", "--hi", "3.5", "--step", "0.25", "--out", s(&sweep)]].concat());
    let grid = ThresholdSweep { lo: 3.0, hi: 3.5, step: 0.25 };
    let report = harness::sweep_on_prepared(&prepared, &spec, &grid, &cfg, 0.1).unwrap();
    assert_eq!(read(&sweep), report.to_csv().into_bytes());
    let best: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(best["best_threshold_m"].as_f64(), Some(report.best_threshold_m));
}

#[test]
fn tune_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let echg = gen(dir.path(), "a", &small_config(0), 4);
    let hist = dir.path().join("bo.csv");
    let best = dir.path().join("best.json");
    let clean = echg.with_extension("clean.csv");
    let args = ["tune", "--input", s(&echg), "--clean", s(&clean), "--algorithm", "svm"];
    ok(&[&args[..], &["--epochs", "3", "--max-iter", "7", "--seed", "5", "--out", s(&hist), "--best-out", s(&best)]].concat());

    let lib = synthgen::generate(&small_config(4)).unwrap();
    let prepared = harness::prepare(&lib.echogram, &lib.record.clean_bottom_m, &FormatConfig::default()).unwrap();
    let cfg = TrainConfig { epochs: 3, seed: 5, ..TrainConfig::default() };
    let bo = BoConfig { max_iter: 7, seed: 5, ..BoConfig::default() };
    let want = harness::tune_on_pool(&prepared.pool, Algorithm::Svm, &cfg, &bo, 0.1).unwrap();
    assert_eq!(read(&hist), want.search.history_csv().into_bytes());
    assert_eq!(serde_json::from_slice::<ModelSpec>(&read(&best)).unwrap(), want.best_spec);
}

#[test]
fn experiments_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", &small_config(0), 5);
    let b_cfg = SurveyConfig { strong_correction_rate: 0.01, nan_style: synthgen::NanStyle::StyleB, ..small_config(0) };
    let b = gen(dir.path(), "b", &b_cfg, 6);
    let lib_a = synthgen::generate(&small_config(5)).unwrap();
    let lib_b = synthgen::generate(&SurveyConfig { seed: 6, ..b_cfg }).unwrap();
    let fc = FormatConfig::default();
    let pa = harness::prepare(&lib_a.echogram, &lib_a.record.clean_bottom_m, &fc).unwrap();
    let pb = harness::prepare(&lib_b.echogram, &lib_b.record.clean_bottom_m, &fc).unwrap();
    let cfg = TrainConfig { epochs: 2, seed: 9, ..TrainConfig::default() };
    let svm = ModelSpec::tuned(Algorithm::Svm);

    let out = dir.path().join("scaling");
    let a_clean = a.with_extension("clean.csv");
    ok(&[
        "experiment", "scaling", "--input", s(&a), "--clean", s(&a_clean), "--algorithms", "svm", "--sizes", "200,400",
        "--repeats", "2", "--epochs", "2", "--seed", "9", "--out-dir", s(&out),
    ]);
    let want = harness::run_scaling(&pa.pool, &[svm.clone()], &[200, 400], 2, 0.9, &cfg).unwrap();
    assert_eq!(read(out.join("records.csv")), want.to_csv().into_bytes());
    assert_eq!(read(out.join("summary.json")), want.summary_json().into_bytes());
    for (name, csv) in want.learning_curves() {
        assert_eq!(read(out.join("curves").join(format!("{name}.csv"))), csv.into_bytes());
    }

    let out = dir.path().join("cd");
    let models = dir.path().join("models");
    ok(&[
        "experiment", "crossdomain", "--a", s(&a), "--a-clean", s(&a_clean), "--b", s(&b), "--b-clean",
        s(&b.with_extension("clean.csv")), "--scale", "0.001", "--algorithm", "svm", "--repeats", "1", "--epochs", "2",
        "--seed", "9", "--out-dir", s(&out), "--models-dir", s(&models),
    ]);
    let want = harness::run_cross_domain(&pa.pool, &pb.pool, &SamplingPlan::scaled(9, 0.001), &svm, &cfg, 1).unwrap();
    assert_eq!(read(out.join("records.csv")), want.report.to_csv().into_bytes());
    let m = want.model("CDT-550", 0).unwrap();
    assert_eq!(read(models.join("CDT-550-r0.bfm")), m.to_bytes().unwrap());
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["label", "--bottom", "x.csv"], &["train", "--input", "a", "--clean", "b", "--out", "c", "--algorithm", "knn"]] {
        let out = bin(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_line(&out)["error"], "usage");
    }
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));

    let missing = dir.path().join("missing.echg");
    let out = bin(&["detect", "--input", s(&missing), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert_eq!(line["error"], "data");
    assert!(line["message"].as_str().unwrap().contains("missing.echg"));

    let garbage = dir.path().join("g.echg");
    std::fs::write(&garbage, b"not an echogram").unwrap();
    assert_eq!(bin(&["format", "--input", s(&garbage), "--out", s(&dir.path().join("o.echg"))]).status.code(), Some(1));
}
