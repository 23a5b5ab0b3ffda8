//! C ABI for the streaming adaptation engine.
//!
//! Handles are opaque pointers created by `ttime_*_new`/`ttime_engine_*`
//! constructors and released with the matching `*_free`. Every function
//! returns a [`TtimeStatus`]; on failure a description is available from
//! [`ttime_last_error_message`] until the next call on the same thread.
//! Panics never cross the boundary; they are reported as
//! [`TtimeStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ttime::alignment::{Trial, TrialBatch};
use ttime::classifier::Classifier;
use ttime::engine::{Engine, SourceConfig, TtaConfig};
use ttime::ensemble::EnsembleMode;
use ttime::harness::metrics;
use ttime::ttaloss::UpdateToggles;
use ttime::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtimeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    Shape = 3,
    Label = 4,
    Numerical = 5,
    State = 6,
    EmptyInput = 7,
    Io = 8,
    Format = 9,
    Metric = 10,
    Panic = 255,
}

/// Ensemble combination rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtimeEnsemble {
    SmlSoft = 0,
    SmlHard = 1,
    Average = 2,
    Vote = 3,
}

/// Adaptation settings; start from [`ttime_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TtimeConfig {
    /// Ensemble size `M`.
    pub n_models: u32,
    /// Sliding window size `B`.
    pub window: u32,
    pub temperature: f64,
    pub tau: f64,
    pub c: f64,
    pub lr: f64,
    pub ensemble: TtimeEnsemble,
    pub cem: bool,
    pub mdr: bool,
    pub temperature_scaling: bool,
    pub recalibrate: bool,
    pub exact_sml: bool,
    pub seed: u64,
}

/// Labeled source subjects collected before training.
pub struct TtimeSource {
    channels: usize,
    samples: usize,
    subjects: Vec<TrialBatch>,
}

/// A streaming engine bound to one target stream.
pub struct TtimeEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> TtimeStatus {
    match err {
        Error::Numerical(_) | Error::Convergence(_) => TtimeStatus::Numerical,
        Error::EmptyInput(_) => TtimeStatus::EmptyInput,
        Error::Shape(_) => TtimeStatus::Shape,
        Error::State(_) => TtimeStatus::State,
        Error::Label(_) => TtimeStatus::Label,
        Error::Config(_) => TtimeStatus::InvalidConfig,
        Error::Metric(_) => TtimeStatus::Metric,
        Error::Format(_) | Error::Csv(_) => TtimeStatus::Format,
        Error::Io(_) => TtimeStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), TtimeStatusError>) -> TtimeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtimeStatus::Ok,
        Ok(Err(TtimeStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TtimeStatus::Panic
        }
    }
}

struct TtimeStatusError(TtimeStatus, String);

impl From<Error> for TtimeStatusError {
    fn from(e: Error) -> Self {
        TtimeStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> TtimeStatusError {
    TtimeStatusError(TtimeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> TtimeStatusError {
    TtimeStatusError(TtimeStatus::InvalidConfig, msg.into())
}

/// Reads `len` values from `data`, which may be null only when `len` is 0.
unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], TtimeStatusError> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

impl From<TtimeEnsemble> for EnsembleMode {
    fn from(e: TtimeEnsemble) -> Self {
        match e {
            TtimeEnsemble::SmlSoft => EnsembleMode::SmlSoft,
            TtimeEnsemble::SmlHard => EnsembleMode::SmlHard,
            TtimeEnsemble::Average => EnsembleMode::Average,
            TtimeEnsemble::Vote => EnsembleMode::Vote,
        }
    }
}

fn to_tta(c: &TtimeConfig) -> Result<TtaConfig, TtimeStatusError> {
    let cfg = TtaConfig {
        n_models: c.n_models as usize,
        window: c.window as usize,
        temperature: c.temperature,
        tau: c.tau,
        c: c.c,
        lr: c.lr,
        ensemble: c.ensemble.into(),
        toggles: UpdateToggles {
            cem: c.cem,
            mdr: c.mdr,
            temperature: c.temperature_scaling,
            recalibrate: c.recalibrate,
        },
        exact_sml: c.exact_sml,
        seed: c.seed,
        ..TtaConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttime_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ttime_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Fills `out` with the default settings (M=5, B=8, T=2, τ=0.7, c=4).
///
/// # Safety
/// `out` must be null or point to writable memory for one `TtimeConfig`.
#[no_mangle]
pub unsafe extern "C" fn ttime_config_default(out: *mut TtimeConfig) -> TtimeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = TtaConfig::default();
        *out = TtimeConfig {
            n_models: d.n_models as u32,
            window: d.window as u32,
            temperature: d.temperature,
            tau: d.tau,
            c: d.c,
            lr: d.lr,
            ensemble: TtimeEnsemble::SmlSoft,
            cem: d.toggles.cem,
            mdr: d.toggles.mdr,
            temperature_scaling: d.toggles.temperature,
            recalibrate: d.toggles.recalibrate,
            exact_sml: d.exact_sml,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Creates an empty source collection for `channels × samples` trials.
///
/// # Safety
/// `out` must be null or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ttime_source_new(channels: u32, samples: u32, out: *mut *mut TtimeSource) -> TtimeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if channels == 0 || samples < 2 {
            return Err(invalid("need at least one channel and two samples"));
        }
        *out = Box::into_raw(Box::new(TtimeSource {
            channels: channels as usize,
            samples: samples as usize,
            subjects: Vec::new(),
        }));
        Ok(())
    })
}

/// Adds one labeled subject: `data` holds `n_trials` trials, each
/// channel-major (`channels × samples` values); `labels` holds one class
/// index per trial.
///
/// # Safety
/// `source` must come from [`ttime_source_new`]; `data` and `labels` must
/// point to the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn ttime_source_add_subject(
    source: *mut TtimeSource,
    data: *const f64,
    labels: *const u32,
    n_trials: usize,
) -> TtimeStatus {
    guard(|| {
        let source = source.as_mut().ok_or_else(|| null("source"))?;
        let per_trial = source.channels * source.samples;
        let len = n_trials
            .checked_mul(per_trial)
            .ok_or_else(|| invalid("trial count overflows"))?;
        let data = slice(data, len, "data")?;
        let labels = slice(labels, n_trials, "labels")?;
        let trials = data
            .chunks_exact(per_trial)
            .map(|c| Trial::new(source.channels, source.samples, c.to_vec()))
            .collect::<ttime::Result<Vec<_>>>()?;
        let id = format!("S{:02}", source.subjects.len() + 1);
        let labels = labels.iter().map(|&y| y as usize).collect();
        source.subjects.push(TrialBatch::new(id, trials, Some(labels))?);
        Ok(())
    })
}

/// # Safety
/// `source` must be null or come from [`ttime_source_new`], and is invalid
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttime_source_free(source: *mut TtimeSource) {
    if !source.is_null() {
        drop(Box::from_raw(source));
    }
}

/// Aligns and pools the source subjects, trains `config.n_models` members
/// for `epochs` epochs (0 selects the default of 100), and returns a fresh
/// engine.
///
/// # Safety
/// `source` must come from [`ttime_source_new`]; `config` must point to a
/// valid `TtimeConfig`; `out` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_train(
    source: *const TtimeSource,
    config: *const TtimeConfig,
    epochs: u32,
    out: *mut *mut TtimeEngine,
) -> TtimeStatus {
    guard(|| {
        let source = source.as_ref().ok_or_else(|| null("source"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let tta = to_tta(config)?;
        let mut source_cfg = SourceConfig::default();
        if epochs > 0 {
            source_cfg.epochs = epochs as usize;
        }
        let engine = Engine::init(&source.subjects, tta, &source_cfg)?;
        *out = Box::into_raw(Box::new(TtimeEngine { inner: engine }));
        Ok(())
    })
}

/// Builds an engine from `n_paths` checkpoint files; the first
/// `config.n_models` are used.
///
/// # Safety
/// `config` must point to a valid `TtimeConfig`; `paths` must hold
/// `n_paths` NUL-terminated UTF-8 strings; `out` must point to writable
/// memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_load(
    config: *const TtimeConfig,
    paths: *const *const c_char,
    n_paths: usize,
    out: *mut *mut TtimeEngine,
) -> TtimeStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let paths = slice(paths, n_paths, "paths")?;
        let models = paths
            .iter()
            .map(|&p| {
                if p.is_null() {
                    return Err(null("path"));
                }
                let p = CStr::from_ptr(p)
                    .to_str()
                    .map_err(|_| invalid("path is not UTF-8"))?;
                Ok(Classifier::load(p)?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let engine = Engine::from_models(models, to_tta(config)?)?;
        *out = Box::into_raw(Box::new(TtimeEngine { inner: engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or come from a `ttime_engine_*` constructor, and
/// is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_free(engine: *mut TtimeEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of classes the engine predicts.
///
/// # Safety
/// `engine` must come from a `ttime_engine_*` constructor; `out` must
/// point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_n_classes(engine: *const TtimeEngine, out: *mut u32) -> TtimeStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = engine.inner.n_classes() as u32;
        Ok(())
    })
}

/// Predicts one trial (channel-major, `len` = channels × samples values),
/// then adapts the ensemble if updates are enabled. Writes the label to
/// `label_out` and, when `scores_out` is non-null, the `n_scores` first
/// combined class scores.
///
/// # Safety
/// `engine` must come from a `ttime_engine_*` constructor; `data` must hold
/// `len` values; `label_out` must be writable; `scores_out` must be null or
/// hold `n_scores` writable values.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_process_trial(
    engine: *mut TtimeEngine,
    data: *const f64,
    len: usize,
    label_out: *mut u32,
    scores_out: *mut f64,
    n_scores: usize,
) -> TtimeStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        let label_out = label_out.as_mut().ok_or_else(|| null("label_out"))?;
        let channels = engine.inner.channels();
        let data = slice(data, len, "data")?;
        if len == 0 || !len.is_multiple_of(channels) {
            return Err(TtimeStatusError(
                TtimeStatus::Shape,
                format!("{len} values do not form a {channels}-channel trial"),
            ));
        }
        let trial = Trial::new(channels, len / channels, data.to_vec())?;
        let record = engine.inner.process_trial(&trial)?;
        *label_out = record.label as u32;
        if !scores_out.is_null() {
            let n = n_scores.min(record.scores.len());
            std::slice::from_raw_parts_mut(scores_out, n).copy_from_slice(&record.scores[..n]);
        }
        Ok(())
    })
}

/// Starts a new session: alignment statistics and the ensemble history are
/// dropped; adapted models are kept.
///
/// # Safety
/// `engine` must come from a `ttime_engine_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_reset(engine: *mut TtimeEngine) -> TtimeStatus {
    guard(|| {
        engine.as_mut().ok_or_else(|| null("engine"))?.inner.reset_session();
        Ok(())
    })
}

/// Enables or disables the post-prediction model updates.
///
/// # Safety
/// `engine` must come from a `ttime_engine_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn ttime_engine_set_updates(engine: *mut TtimeEngine, enabled: bool) -> TtimeStatus {
    guard(|| {
        engine
            .as_mut()
            .ok_or_else(|| null("engine"))?
            .inner
            .set_updates_enabled(enabled);
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against binary `labels` (non-zero
/// is positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ttime_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> TtimeStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let positive: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = metrics::auc(scores, &positive)?;
        Ok(())
    })
}
