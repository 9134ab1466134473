use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ssnn::signal::GrayImage;

fn ssnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssnn")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_synth_spec(dir: &Path) {
    fs::write(
        dir.join("synth.json"),
        r#"{"kind":"univariate_binary","samples_per_class":6,"length":256}"#,
    )
    .unwrap();
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssnn(&["train", "--help"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--data", "--out", "--seed", "--force"] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
    assert_eq!(code(&ssnn(&["bogus"], dir.path())), 2);
    assert_eq!(code(&ssnn(&["synth", "--nope"], dir.path())), 2);
    assert_eq!(code(&ssnn(&["stft", "--in", "x", "--out", "y", "--window", "ten", "--overlap", "0.5"], dir.path())), 2);
    assert_eq!(code(&ssnn(&[], dir.path())), 2);
}

#[test]
fn domain_errors_exit_one_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssnn(&["eval", "--model", "missing.json", "--data", "none", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.lines().count() == 1, "{err}");

    fs::write(dir.path().join("bad.json"), "{\"accuracy\": ").unwrap();
    assert_eq!(code(&ssnn(&["report", "--eval", "bad.json", "--out", "r.svg"], dir.path())), 1);
    assert!(!dir.path().join("r.svg").exists());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    write_synth_spec(dir.path());
    assert_eq!(code(&ssnn(&["synth", "--spec", "synth.json", "--out", "raw"], dir.path())), 0);
    let before = fs::read(dir.path().join("raw/steady/steady_0000.csv")).unwrap();
    assert_eq!(code(&ssnn(&["synth", "--spec", "synth.json", "--out", "raw", "--seed", "5"], dir.path())), 1);
    assert_eq!(fs::read(dir.path().join("raw/steady/steady_0000.csv")).unwrap(), before);
    assert_eq!(code(&ssnn(&["synth", "--spec", "synth.json", "--out", "raw", "--seed", "5", "--force"], dir.path())), 0);
    assert_ne!(fs::read(dir.path().join("raw/steady/steady_0000.csv")).unwrap(), before);
}

#[test]
fn stft_and_augment_files() {
    let dir = tempfile::tempdir().unwrap();
    write_synth_spec(dir.path());
    assert_eq!(code(&ssnn(&["synth", "--spec", "synth.json", "--out", "raw"], dir.path())), 0);
    let o = ssnn(&["stft", "--in", "raw", "--out", "img", "--window", "62", "--overlap", "0.91"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = GrayImage::read_pgm(&dir.path().join("img/modulated/modulated_0003_ch0.pgm")).unwrap();
    assert_eq!((img.height(), img.width()), (32, (256 - 62) / 6 + 1));

    let o = ssnn(&["augment", "--in", "img", "--out", "aug", "--ratios", "0.5,0.7", "--seed", "4"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(dir.path().join("aug/steady"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 18);
    assert_eq!(names.iter().filter(|n| n.contains("_ra0.5_s")).count(), 6);
    assert_eq!(names.iter().filter(|n| n.contains("_ra0.7_s")).count(), 6);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("aug/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "augment");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let again = ssnn(&["augment", "--in", "img", "--out", "aug2", "--ratios", "0.5,0.7", "--seed", "4"], dir.path());
    assert_eq!(code(&again), 0);
    for n in &names {
        assert_eq!(
            fs::read(dir.path().join("aug/steady").join(n)).unwrap(),
            fs::read(dir.path().join("aug2/steady").join(n)).unwrap()
        );
    }
}

#[test]
fn train_eval_predict_report() {
    let dir = tempfile::tempdir().unwrap();
    write_synth_spec(dir.path());
    fs::write(
        dir.path().join("exp.json"),
        r#"{"dataset":{"split":{"train_per_class":4},"stft":{"window_length":32,"overlap":24},
            "augment":{"ratios":[0.5]}},"model":{"stem_channels":4},"train":{"epochs":2,"batch_size":4}}"#,
    )
    .unwrap();
    let run = |args: &[&str]| {
        let o = ssnn(args, dir.path());
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--spec", "synth.json", "--out", "raw"]);
    run(&["train", "--config", "exp.json", "--data", "raw", "--out", "run", "--seed", "3"]);
    for f in ["checkpoint.json", "run_metadata.json", "run_manifest.json", "test/manifest.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run/run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["train_config"]["seed"], 3);
    assert_eq!(meta["train_samples"], 16);
    assert_eq!(meta["history"]["epochs"].as_array().unwrap().len(), 2);

    run(&["eval", "--model", "run/checkpoint.json", "--data", "run/test", "--out", "ev"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(report["num_samples"], 4);
    let csv = fs::read_to_string(dir.path().join("ev/confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    run(&["predict", "--model", "run/checkpoint.json", "--data", "run/test", "--out", "pr"]);
    let preds = fs::read_to_string(dir.path().join("pr/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 5);
    assert!(preds.starts_with("id,label,predicted,logit_modulated,logit_steady"));

    run(&["report", "--eval", "ev/eval.json", "--out", "report.svg"]);
    let svg = fs::read_to_string(dir.path().join("report.svg")).unwrap();
    assert_eq!(svg.matches("class=\"cell\"").count(), 4);
    assert!(dir.path().join("report.manifest.json").exists());

    let bad = ssnn(&["train", "--config", "exp.json", "--data", "raw", "--out", "run"], dir.path());
    assert_eq!(code(&bad), 1);
}
