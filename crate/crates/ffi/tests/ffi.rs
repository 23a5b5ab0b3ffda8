//! Exercises the C ABI from Rust: status codes, null handling, and a full
//! stream checked against the native engine.

use std::ffi::{CStr, CString};
use std::ptr;

use ttime::engine::{Engine, SourceConfig, TtaConfig};
use ttime::harness::synth::{synth_generate, SynthDataset, SynthSpec};
use ttime_ffi::*;

fn dataset() -> SynthDataset {
    synth_generate(&SynthSpec {
        n_subjects: 3,
        source_trials: 24,
        target_trials: 20,
        samples: 32,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn small_config() -> TtimeConfig {
    let mut cfg = unsafe { std::mem::zeroed::<TtimeConfig>() };
    assert_eq!(unsafe { ttime_config_default(&mut cfg) }, TtimeStatus::Ok);
    cfg.n_models = 2;
    cfg.window = 4;
    cfg
}

fn last_error() -> String {
    let p = ttime_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn flatten(batch: &ttime::alignment::TrialBatch) -> (Vec<f64>, Vec<u32>) {
    let data = batch.trials.iter().flat_map(|t| t.data().iter().copied()).collect();
    let labels = batch.labels().unwrap().iter().map(|&y| y as u32).collect();
    (data, labels)
}

unsafe fn source_handle(ds: &SynthDataset) -> *mut TtimeSource {
    let (ch, ts) = ds.subjects[0].source.dims().unwrap();
    let mut src = ptr::null_mut();
    assert_eq!(ttime_source_new(ch as u32, ts as u32, &mut src), TtimeStatus::Ok);
    for s in &ds.subjects[1..] {
        let (data, labels) = flatten(&s.source);
        let st = ttime_source_add_subject(src, data.as_ptr(), labels.as_ptr(), labels.len());
        assert_eq!(st, TtimeStatus::Ok);
    }
    src
}

#[test]
fn default_config_mirrors_the_native_defaults() {
    let mut cfg = unsafe { std::mem::zeroed::<TtimeConfig>() };
    assert_eq!(unsafe { ttime_config_default(&mut cfg) }, TtimeStatus::Ok);
    let d = TtaConfig::default();
    assert_eq!((cfg.n_models as usize, cfg.window as usize), (d.n_models, d.window));
    assert_eq!((cfg.temperature, cfg.tau, cfg.c, cfg.lr), (d.temperature, d.tau, d.c, d.lr));
    assert_eq!(cfg.ensemble, TtimeEnsemble::SmlSoft);
    assert!(ttime_last_error_message().is_null());
    let v = unsafe { CStr::from_ptr(ttime_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        assert_eq!(ttime_config_default(ptr::null_mut()), TtimeStatus::NullPointer);
        assert!(last_error().contains("out"));
        assert_eq!(ttime_source_new(2, 8, ptr::null_mut()), TtimeStatus::NullPointer);
        let cfg = small_config();
        let mut engine = ptr::null_mut();
        assert_eq!(ttime_engine_train(ptr::null(), &cfg, 1, &mut engine), TtimeStatus::NullPointer);
        assert!(engine.is_null());
        let mut label = 0;
        let x = [0.0; 4];
        let st = ttime_engine_process_trial(ptr::null_mut(), x.as_ptr(), 4, &mut label, ptr::null_mut(), 0);
        assert_eq!(st, TtimeStatus::NullPointer);
        assert_eq!(ttime_engine_reset(ptr::null_mut()), TtimeStatus::NullPointer);
        let mut out = 0.0;
        assert_eq!(ttime_auc(ptr::null(), ptr::null(), 3, &mut out), TtimeStatus::NullPointer);
        ttime_source_free(ptr::null_mut());
        ttime_engine_free(ptr::null_mut());
    }
}

#[test]
fn invalid_input_maps_to_error_codes() {
    unsafe {
        let mut src = ptr::null_mut();
        assert_eq!(ttime_source_new(0, 8, &mut src), TtimeStatus::InvalidConfig);
        assert_eq!(ttime_source_new(2, 8, &mut src), TtimeStatus::Ok);
        let data = [1.0; 32];
        let labels = [0u32, 1];
        assert_eq!(ttime_source_add_subject(src, data.as_ptr(), labels.as_ptr(), 2), TtimeStatus::Ok);

        let mut cfg = small_config();
        cfg.tau = 0.3;
        let mut engine = ptr::null_mut();
        assert_eq!(ttime_engine_train(src, &cfg, 1, &mut engine), TtimeStatus::InvalidConfig);
        assert!(last_error().contains("tau") || last_error().contains("τ"), "{}", last_error());

        ttime_source_free(src);

        let mut auc = 0.0;
        let scores = [0.1, 0.2];
        let same = [1u8, 1];
        assert_eq!(ttime_auc(scores.as_ptr(), same.as_ptr(), 2, &mut auc), TtimeStatus::Metric);
        let mixed = [0u8, 1];
        assert_eq!(ttime_auc(scores.as_ptr(), mixed.as_ptr(), 2, &mut auc), TtimeStatus::Ok);
        assert_eq!(auc, 1.0);
    }
}

#[test]
fn stream_matches_the_native_engine() {
    let ds = dataset();
    let cfg = small_config();
    let target = &ds.subjects[0].sessions[0];
    let (ch, _) = target.dims().unwrap();

    let native_cfg = TtaConfig { n_models: 2, window: 4, ..TtaConfig::default() };
    let source_cfg = SourceConfig { epochs: 5, ..SourceConfig::default() };
    let mut native = Engine::init(&ds.sources_excluding(0), native_cfg, &source_cfg).unwrap();

    unsafe {
        let src = source_handle(&ds);
        let mut engine = ptr::null_mut();
        assert_eq!(ttime_engine_train(src, &cfg, 5, &mut engine), TtimeStatus::Ok);
        ttime_source_free(src);
        let mut k = 0;
        assert_eq!(ttime_engine_n_classes(engine, &mut k), TtimeStatus::Ok);
        assert_eq!(k, 2);

        for trial in &target.trials {
            let expect = native.process_trial(trial).unwrap();
            let mut label = u32::MAX;
            let mut scores = [f64::NAN; 2];
            let x = trial.data();
            let st = ttime_engine_process_trial(engine, x.as_ptr(), x.len(), &mut label, scores.as_mut_ptr(), 2);
            assert_eq!(st, TtimeStatus::Ok, "{}", last_error());
            assert_eq!(label as usize, expect.label);
            assert_eq!(scores.to_vec(), expect.scores);
        }

        let mut label = 0;
        let x = target.trials[0].data();
        let st = ttime_engine_process_trial(engine, x.as_ptr(), x.len() - 1, &mut label, ptr::null_mut(), 0);
        assert_eq!(st, TtimeStatus::Shape);
        assert!(last_error().contains(&format!("{ch}-channel")));

        assert_eq!(ttime_engine_reset(engine), TtimeStatus::Ok);
        assert_eq!(ttime_engine_set_updates(engine, false), TtimeStatus::Ok);
        native.reset_session();
        native.set_updates_enabled(false);
        let st = ttime_engine_process_trial(engine, x.as_ptr(), x.len(), &mut label, ptr::null_mut(), 0);
        assert_eq!(st, TtimeStatus::Ok);
        assert_eq!(label as usize, native.process_trial(&target.trials[0]).unwrap().label);
        ttime_engine_free(engine);
    }
}

#[test]
fn engine_loads_checkpoints() {
    let ds = dataset();
    let source_cfg = SourceConfig { epochs: 3, ..SourceConfig::default() };
    let native_cfg = TtaConfig { n_models: 2, window: 4, ..TtaConfig::default() };
    let mut native = Engine::init(&ds.sources_excluding(0), native_cfg, &source_cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let paths: Vec<CString> = native
        .models()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p = tmp.path().join(format!("m{i}.ttmd"));
            m.save(&p).unwrap();
            CString::new(p.to_str().unwrap()).unwrap()
        })
        .collect();
    let ptrs: Vec<_> = paths.iter().map(|p| p.as_ptr()).collect();
    let cfg = small_config();
    unsafe {
        let mut engine = ptr::null_mut();
        assert_eq!(ttime_engine_load(&cfg, ptrs.as_ptr(), ptrs.len(), &mut engine), TtimeStatus::Ok);
        for trial in &ds.subjects[0].sessions[0].trials {
            let mut label = 0;
            let x = trial.data();
            let st = ttime_engine_process_trial(engine, x.as_ptr(), x.len(), &mut label, ptr::null_mut(), 0);
            assert_eq!(st, TtimeStatus::Ok);
            assert_eq!(label as usize, native.process_trial(trial).unwrap().label);
        }
        ttime_engine_free(engine);

        let missing = CString::new(tmp.path().join("none.ttmd").to_str().unwrap()).unwrap();
        let one = [missing.as_ptr()];
        let mut engine = ptr::null_mut();
        assert_eq!(ttime_engine_load(&cfg, one.as_ptr(), 1, &mut engine), TtimeStatus::Io);
        assert_eq!(ttime_engine_load(&cfg, ptrs.as_ptr(), 1, &mut engine), TtimeStatus::InvalidConfig);
        assert!(engine.is_null());
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ttime.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipping header check");
        return;
    };
    assert!(status.success());
}
