//! End-to-end checks of the `ttime` binary: file round trips and error
//! reporting.

use std::path::Path;
use std::process::{Command, Output};

use ttime::classifier::Classifier;
use ttime::harness::io::load_trials;

const SMALL: [&str; 12] = [
    "--set", "n_subjects=3", "--set", "source_trials=24", "--set", "target_trials=30",
    "--set", "samples=32", "--set", "epochs=5", "--set", "M=2",
];

fn ttime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttime")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ttime(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = ttime(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL).collect()
}

fn synth_into(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    ok(&with_small(&["synth", "--out-dir", d, "--set", "target_sessions=2"]))
}

#[test]
fn synth_train_and_stream_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = synth_into(&data);
    assert!(manifest.starts_with("subject,role,file,n_trials,channels,samples,class_counts\n"));
    assert_eq!(manifest.lines().count(), 1 + 3 * 3);
    let stream = load_trials(data.join("S01_t1.ttrl")).unwrap();
    assert_eq!((stream.len(), stream.dims()), (30, Some((8, 32))));

    let models = tmp.path().join("models");
    let src: Vec<String> = ["S02_source.ttrl", "S03_source.ttrl"]
        .iter()
        .map(|f| data.join(f).to_string_lossy().into_owned())
        .collect();
    let mut args = with_small(&["train-source", "--out-dir", models.to_str().unwrap()]);
    args.push("--source");
    args.extend(src.iter().map(String::as_str));
    ok(&args);
    let m0 = Classifier::load(models.join("model_0.ttmd")).unwrap();
    assert!(!m0.input_norm().is_identity());

    let trials_out = tmp.path().join("trials.csv");
    let m: Vec<String> = (0..2).map(|i| models.join(format!("model_{i}.ttmd")).to_string_lossy().into_owned()).collect();
    let stream_path = data.join("S01_t2.ttrl");
    let prior_path = data.join("S01_t1.ttrl");
    let mut run = vec![
        "run-tta", "--stream", stream_path.to_str().unwrap(), "--prior", prior_path.to_str().unwrap(),
        "--mode", "tta1+2", "--M", "2", "--trials-out", trials_out.to_str().unwrap(), "--models",
    ];
    run.extend(m.iter().map(String::as_str));
    let table = ok(&run);
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "subject,repeat,mode,accuracy,balanced_accuracy,auc,mean_pre_ms,worst_pre_ms,mean_post_ms,worst_post_ms"
    );
    assert!(lines.next().unwrap().contains(",tta1+2,"));
    let per_trial = std::fs::read_to_string(&trials_out).unwrap();
    assert_eq!(per_trial.lines().count(), 1 + 30);
}

#[test]
fn experiment_tables_carry_aggregate_rows() {
    let out = ok(&with_small(&["ablate"]));
    assert!(out.lines().any(|l| l.starts_with("all,mean,tr,NA,NA,NA")));
    assert!(out.lines().any(|l| l.starts_with("all,mean,cem+mdr+tr,")));
    let out = ok(&with_small(&["imbalance"]));
    for mode in ["source", "adaptive-mdr", "plain-mdr"] {
        assert!(out.lines().any(|l| l.starts_with(&format!("all,std,{mode},"))), "{mode} missing");
    }
    let curve = ok(&with_small(&["ensemble-compare", "--modes", "average,vote", "--m-grid", "1,2"]));
    assert_eq!(curve.lines().count(), 1 + 4);
}

#[test]
fn timing_columns_fill_only_on_request() {
    let plain = ok(&with_small(&["loso"]));
    assert!(plain.lines().nth(1).unwrap().ends_with(",,,,"));
    let timed = ok(&with_small(&["loso", "--timing"]));
    assert!(!timed.lines().nth(1).unwrap().ends_with(",,,,"));
    let bench = ok(&["bench", "--channels", "4", "--samples", "32", "--trials", "20", "--M", "2"]);
    assert!(!bench.lines().nth(1).unwrap().ends_with(",,,,"));
}

#[test]
fn output_flag_writes_the_same_bytes_as_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("loso.csv");
    let stdout = ok(&with_small(&["loso"]));
    let mut args = with_small(&["loso"]);
    args.extend(["-o", path.to_str().unwrap()]);
    assert!(ok(&args).is_empty());
    assert_eq!(std::fs::read_to_string(path).unwrap(), stdout);
}

#[test]
fn config_file_and_overrides_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nn_subjects = 2\nsource_trials = 24\ntarget_trials = 20\nsamples = 32\nepochs = 5\nM = 2\n").unwrap();
    let out = ok(&["loso", "--config", cfg.to_str().unwrap(), "--set", "M=1"]);
    let modes: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert!(modes.contains(&"ttime-1") && !modes.contains(&"ttime-2"));
    assert!(out.lines().any(|l| l.starts_with("S02,0,")));
}

#[test]
fn bad_input_is_reported_not_panicked() {
    let cases: [&[&str]; 5] = [
        &["loso", "--set", "bogus=1"],
        &["loso", "--set", "tau=0.3"],
        &["loso", "--set", "M"],
        &["sweep", "--param", "lr", "--grid", "1"],
        &["run-tta", "--stream", "/nonexistent/stream.ttrl", "--source", "/nonexistent/src.ttrl"],
    ];
    for args in cases {
        let stderr = err(args);
        assert!(!stderr.contains("panicked"), "{args:?}: {stderr}");
        assert!(stderr.contains("error"), "{args:?}: {stderr}");
    }
}

#[test]
fn prior_modes_require_a_prior_session() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let stream = data.join("S01_t1.ttrl");
    let source = data.join("S02_source.ttrl");
    let stderr = err(&[
        "run-tta", "--stream", stream.to_str().unwrap(), "--source", source.to_str().unwrap(),
        "--mode", "tta1", "--set", "epochs=2",
    ]);
    assert!(stderr.contains("prior"), "{stderr}");
}
