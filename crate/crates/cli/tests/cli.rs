use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fnirs_bci::features::FeatureMatrix;
use fnirs_bci::io::{EpochSet, EventList};
use fnirs_bci::Class;
use tempfile::TempDir;

/// Small enough for a training run to take well under a second.
const SMALL: &str = "\
[synth]
trials_per_class = 8
channels = 4
[ica]
components = 4
[train]
max_epochs = 3
units = 4
stride = 8
[kpca]
components = 5
";

fn run(args: &[&str]) -> Result<String, fnirs_cli::CliError> {
    let mut full = vec!["fnirs-bci"];
    full.extend_from_slice(args);
    fnirs_cli::run(full)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

struct Work {
    dir: TempDir,
    config: PathBuf,
}

impl Work {
    fn new(config: &str) -> Work {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.ini");
        fs::write(&path, config).unwrap();
        Work { dir, config: path }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Runs a subcommand with this config and `--out <dir>/<out>`.
    fn run(&self, out: &str, args: &[&str]) -> Result<String, fnirs_cli::CliError> {
        let (c, o) = (s(&self.config), s(&self.out(out)));
        let mut full = vec!["--config", c.as_str(), "--out", o.as_str()];
        full.extend_from_slice(args);
        run(&full)
    }

    /// synth + preprocess into `out`.
    fn prepared(&self, out: &str, seed: &str) {
        self.run(out, &["synth", "--seed", seed]).unwrap();
        self.run(out, &["preprocess", "--seed", seed]).unwrap();
    }
}

fn binary(args: &[&str], env: &[(&str, &Path)]) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fnirs-bci"));
    cmd.args(args).env_remove("FNIRS_BCI_CONFIG").env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().unwrap();
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8(o.stdout).unwrap(),
        String::from_utf8(o.stderr).unwrap(),
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let w = Work::new(SMALL);
    for (out, seed) in [("a", "4"), ("b", "4"), ("c", "5")] {
        w.run(out, &["synth", "--seed", seed]).unwrap();
    }
    for f in ["recording.csv", "events.csv"] {
        let read = |d: &str| fs::read(w.out(d).join(f)).unwrap();
        assert_eq!(read("a"), read("b"), "{f}");
        assert_ne!(read("a"), read("c"), "{f}");
    }
}

#[test]
fn default_synth_has_ninety_balanced_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", &s(dir.path())]).unwrap();
    assert!(out.starts_with("synth: 90 trials (30 per class), 16 channels"), "{out}");
    let ev = EventList::from_csv_str(&fs::read_to_string(dir.path().join("events.csv")).unwrap()).unwrap();
    assert_eq!(ev.len(), 90);
    for c in Class::ALL {
        assert_eq!(ev.labels().iter().filter(|&&l| l == c).count(), 30);
    }

    // preprocessing at 13.3 Hz gives one 399-sample epoch per event
    run(&["preprocess", "--out", &s(dir.path())]).unwrap();
    let es = EpochSet::from_csv_str(&fs::read_to_string(dir.path().join("epochs.csv")).unwrap()).unwrap();
    assert_eq!(es.n_trials(), ev.len());
    assert_eq!(es.n_samples(), 399);
    assert_eq!(es.n_streams(), 32);
    assert_eq!(es.labels, ev.labels());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let w = Work::new(SMALL);
    w.run("o", &["synth"]).unwrap();
    let before = fs::read(w.out("o/recording.csv")).unwrap();
    let e = w.run("o", &["synth", "--seed", "9"]).unwrap_err();
    assert_eq!(e.stage, "write");
    assert!(e.message.contains("--force"));
    assert_eq!(fs::read(w.out("o/recording.csv")).unwrap(), before);
    w.run("o", &["synth", "--seed", "9", "--force"]).unwrap();
    assert_ne!(fs::read(w.out("o/recording.csv")).unwrap(), before);
    // no temp files are left behind
    let mut names: Vec<String> = fs::read_dir(w.out("o")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["events.csv", "recording.csv"]);
}

#[test]
fn preprocess_reports_timing_and_sidecar_fallback() {
    let w = Work::new(SMALL);
    w.run("o", &["synth"]).unwrap();
    let (c, o) = (s(&w.config), s(&w.out("o")));
    let (code, stdout, stderr) = binary(&["preprocess", "--config", &c, "--out", &o], &[]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.starts_with("preprocess: 24 epochs x 8 streams x 399 samples"), "{stdout}");
    for stage in ["load", "mbll", "filter", "segment", "baseline"] {
        assert!(stderr.contains(&format!("timing: {stage} ")), "{stderr}");
    }
    assert!(stderr.contains("no channel sidecar"), "{stderr}");

    let sidecar = w.out("channels.csv");
    fs::write(&sidecar, "id,wl_lo_nm,wl_hi_nm,distance_mm\n1,760,850,30\n2,760,850,30\n3,760,850,30\n4,760,850,30\n").unwrap();
    let set = format!("channels={}", s(&sidecar));
    let (code, _, stderr) = binary(&["preprocess", "--config", &c, "--out", &o, "--force", "--set", &set], &[]);
    assert_eq!(code, 0, "{stderr}");
    assert!(!stderr.contains("no channel sidecar"), "{stderr}");
}

#[test]
fn sampling_rate_override_must_agree_with_timestamps() {
    let w = Work::new(SMALL);
    w.run("o", &["synth"]).unwrap();
    w.run("o", &["preprocess", "--set", "preprocess.fs=13.305"]).unwrap();
    let e = w.run("o", &["preprocess", "--force", "--set", "preprocess.fs=14"]).unwrap_err();
    assert_eq!(e.stage, "load");
    assert!(e.message.contains("disagrees"), "{}", e.message);
}

#[test]
fn feature_columns_follow_window_arithmetic() {
    let w = Work::new(SMALL);
    w.prepared("o", "1");
    // 399 samples, 2 s windows at 13.3 Hz: L = 26, hop = 13, 29 windows;
    // 8 streams (4 channels x HbO/HbR)
    let windows = (399 - 26) / 13 + 1;
    let streams = 8;
    for (set, cols) in [
        ("temporal_mean", 2 * streams),
        ("stats", 4 * windows * streams),
        ("bandpower", 2 * windows * streams),
        ("union", 6 * windows * streams + 2 * streams),
    ] {
        let out = format!("f_{set}");
        w.run(&out, &["features", "--set", &format!("features.set={set}"), "--set", &format!("epochs={}", s(&w.out("o/epochs.csv")))])
            .unwrap();
        let fm = FeatureMatrix::load(w.out(&out).join("features.csv")).unwrap();
        assert_eq!(fm.values.ncols(), cols, "{set}");
        let ev = EventList::from_csv_str(&fs::read_to_string(w.out("o/events.csv")).unwrap()).unwrap();
        assert_eq!(fm.labels, ev.labels(), "{set}");
    }
    let first = fs::read(w.out("f_stats/features.csv")).unwrap();
    w.run("f_stats", &["features", "--force", "--set", "features.set=stats", "--set", &format!("epochs={}", s(&w.out("o/epochs.csv")))])
        .unwrap();
    assert_eq!(fs::read(w.out("f_stats/features.csv")).unwrap(), first);
}

#[test]
fn retraining_with_the_same_seed_is_identical() {
    let w = Work::new(SMALL);
    w.prepared("o", "3");
    let epochs = format!("epochs={}", s(&w.out("o/epochs.csv")));
    let a = w.run("m1", &["train", "--seed", "3", "--set", &epochs]).unwrap();
    let b = w.run("m2", &["train", "--seed", "3", "--set", &epochs]).unwrap();
    let checksum = |line: &str| line.split_whitespace().find(|t| t.starts_with("checksum=")).unwrap().to_string();
    assert_eq!(checksum(&a), checksum(&b));
    assert_eq!(fs::read(w.out("m1/model.fnirs")).unwrap(), fs::read(w.out("m2/model.fnirs")).unwrap());
    assert_eq!(fs::read(w.out("m1/train_report.csv")).unwrap(), fs::read(w.out("m2/train_report.csv")).unwrap());
    let c = w.run("m3", &["train", "--seed", "4", "--set", &epochs]).unwrap();
    assert_ne!(checksum(&a), checksum(&c));
}

#[test]
fn recurrent_model_round_trips_through_evaluate() {
    let w = Work::new(SMALL);
    w.prepared("o", "2");
    w.run("o", &["train", "--seed", "2"]).unwrap();
    let report = csv_rows(&w.out("o/train_report.csv"));
    assert_eq!(report[0].join(","), "epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr");
    assert_eq!(report.len(), 4);

    let stdout = w.run("o", &["evaluate"]).unwrap();
    let acc: f64 = stdout.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.out("o/metrics.json")).unwrap()).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(sorted, ["accuracy", "auc", "confusion", "n_test", "seed", "split_sizes"]);
    assert_eq!(json["accuracy"].as_f64().unwrap(), acc);
    assert_eq!(json["n_test"], 7);
    assert_eq!(json["seed"], 2);
    assert_eq!(json["split_sizes"]["train"].as_u64().unwrap() + json["split_sizes"]["val"].as_u64().unwrap(), 17);

    for c in Class::ALL {
        let rows = csv_rows(&w.out(&format!("o/roc_{c}.csv")));
        assert_eq!(rows[0].join(","), "threshold,fpr,tpr");
        let fpr: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
        assert!(fpr.windows(2).all(|p| p[0] <= p[1]), "{c}");
        assert_eq!((fpr[0], *fpr.last().unwrap()), (0.0, 1.0));
    }

    // evaluation output is reproducible
    let first = fs::read(w.out("o/metrics.json")).unwrap();
    w.run("o", &["evaluate", "--force"]).unwrap();
    assert_eq!(fs::read(w.out("o/metrics.json")).unwrap(), first);
}

#[test]
fn flat_classifiers_train_and_evaluate() {
    let w = Work::new(SMALL);
    w.prepared("o", "6");
    let epochs = format!("epochs={}", s(&w.out("o/epochs.csv")));
    for (pipeline, classifier) in [
        ("features", "slda"),
        ("features", "logreg"),
        ("features", "svm"),
        ("features", "ann"),
        ("features_kpca", "slda"),
        ("features_kpca", "logreg"),
    ] {
        let out = format!("{pipeline}_{classifier}");
        let args = ["--pipeline", pipeline, "--set", &format!("classifier={classifier}"), "--set", &epochs];
        let line = w.run(&out, &[&["train"], &args[..]].concat()).unwrap();
        assert!(line.contains(&format!("classifier={classifier}")), "{line}");
        let report = csv_rows(&w.out(&format!("{out}/train_report.csv")));
        assert_eq!(report.len() == 1, classifier != "ann", "{out}: linear classifiers write a header-only report");

        // a model scored on its own fitting rows beats the majority rule
        w.run(&out, &[&["evaluate", "--subset", "train"], &args[..]].concat()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.out(&out).join("metrics.json")).unwrap()).unwrap();
        let cm: Vec<Vec<u64>> = serde_json::from_value(json["confusion"].clone()).unwrap();
        let majority = cm.iter().map(|r| r.iter().sum::<u64>()).max().unwrap() as f64 / cm.iter().flatten().sum::<u64>() as f64;
        if classifier != "ann" {
            assert!(json["accuracy"].as_f64().unwrap() >= majority, "{out}: {json}");
        }
        let stdout = w.run(&out, &[&["evaluate", "--force"], &args[..]].concat()).unwrap();
        assert!(stdout.starts_with("accuracy="), "{stdout}");
    }
}

#[test]
fn grid_search_writes_one_row_per_cell() {
    let w = Work::new(SMALL);
    w.prepared("o", "1");
    let line = w.run("o", &["train", "--set", "grid.lr=0.001,0.01", "--set", "grid.units=2,4"]).unwrap();
    assert!(line.contains("grid.csv"), "{line}");
    let rows = csv_rows(&w.out("o/grid.csv"));
    assert_eq!(rows[0].join(","), "lr,dropout,units,val_error,diverged,best_epoch,selected");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1..].iter().filter(|r| r[6] == "1").count(), 1);
}

#[test]
fn container_corruption_is_detected() {
    let w = Work::new(SMALL);
    w.prepared("o", "1");
    w.run("o", &["train", "--pipeline", "features"]).unwrap();
    let model = w.out("o/model.fnirs");
    let text = fs::read_to_string(&model).unwrap();
    assert!(text.starts_with("FNIRSBCI 1\nsha256 "));

    let bad = w.out("tampered.fnirs");
    let body_start = text.find('{').unwrap();
    let mut bytes = text.clone().into_bytes();
    let i = body_start + text[body_start..].find("\"seed\":1").unwrap() + 7;
    bytes[i] = b'2';
    fs::write(&bad, bytes).unwrap();
    let m = format!("--model={}", s(&bad));
    let e = w.run("o", &["evaluate", "--pipeline", "features", &m]).unwrap_err();
    assert_eq!((e.stage, e.message.contains("checksum")), ("container", true), "{e}");

    fs::write(&bad, text.replacen("FNIRSBCI 1", "FNIRSBCI 7", 1)).unwrap();
    let e = w.run("o", &["evaluate", &m]).unwrap_err();
    assert!(e.message.contains("unsupported container version 7"), "{e}");
}

#[test]
fn evaluating_other_data_needs_subset_all() {
    let w = Work::new(SMALL);
    w.prepared("o", "1");
    w.prepared("other", "8");
    w.run("o", &["train", "--pipeline", "features"]).unwrap();
    let model = format!("--model={}", s(&w.out("o/model.fnirs")));
    let e = w.run("other", &["evaluate", &model]).unwrap_err();
    assert_eq!(e.stage, "evaluate");
    assert!(e.message.contains("--subset all"));
    w.run("other", &["evaluate", &model, "--subset", "all"]).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.out("other/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["n_test"], 24);
}

#[test]
fn visualize_exports() {
    let w = Work::new(SMALL);
    w.prepared("o", "1");
    w.run("o", &["visualize"]).unwrap();
    for (file, n) in [("corr_original.csv", 16), ("corr_kpca.csv", 5)] {
        let rows = csv_rows(&w.out("o").join(file));
        assert_eq!(rows.len(), n + 1, "{file}");
        let m: Vec<Vec<f64>> = rows[1..].iter().map(|r| r[1..].iter().map(|v| v.parse().unwrap()).collect()).collect();
        for i in 0..n {
            assert_eq!(m[i][i], 1.0);
            for j in 0..n {
                assert_eq!(m[i][j], m[j][i], "{file} asymmetric");
                if file == "corr_kpca.csv" && i != j {
                    assert!(m[i][j].abs() < 0.1, "{file}: r[{i}][{j}] = {}", m[i][j]);
                }
            }
        }
    }
    let tc = csv_rows(&w.out("o/timecourse.csv"));
    assert_eq!(tc[0].join(","), "t,MA_HbO,MA_HbR,MI_HbO,MI_HbR,IS_HbO,IS_HbR");
    assert_eq!(tc.len() - 1, 399);
}

#[test]
fn errors_are_single_lines_with_stage() {
    let (code, _, stderr) = binary(&["train", "--pipeline", "cnn"], &[]);
    assert_eq!(code, 2);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: usage: unknown pipeline \"cnn\""), "{stderr}");

    let (code, _, stderr) = binary(&["frobnicate"], &[]);
    assert_eq!(code, 2);
    assert!(stderr.starts_with("error: usage: "), "{stderr}");
    assert_eq!(stderr.lines().count(), 1, "{stderr}");

    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = binary(&["preprocess", "--out", &s(dir.path())], &[]);
    assert_eq!(code, 1);
    assert!(stderr.trim_end().starts_with("error: load: "), "{stderr}");
    assert_eq!(stderr.lines().filter(|l| l.starts_with("error:")).count(), 1);

    let (code, stdout, _) = binary(&["--help"], &[]);
    assert_eq!(code, 0);
    assert!(stdout.contains("visualize"));
}

#[test]
fn config_file_from_environment_and_flag_precedence() {
    let w = Work::new("seed = 5\n[synth]\ntrials_per_class = 2\nchannels = 4\n");
    let out = s(&w.out("o"));
    let (code, stdout, stderr) = binary(&["synth", "--out", &out], &[("FNIRS_BCI_CONFIG", &w.config)]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("6 trials (2 per class), 4 channels"), "{stdout}");
    assert!(stdout.contains("seed 5"), "{stdout}");
    let (_, stdout, _) = binary(&["synth", "--out", &out, "--force", "--seed", "6"], &[("FNIRS_BCI_CONFIG", &w.config)]);
    assert!(stdout.contains("seed 6"), "{stdout}");

    let e = run(&["synth", "--config", &s(&w.config), "--set", "synth.bogus=1"]).unwrap_err();
    assert_eq!(e.stage, "config");
}
