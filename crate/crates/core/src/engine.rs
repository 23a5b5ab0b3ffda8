//! Online orchestration: incremental alignment, ensemble prediction, then
//! per-model sliding-window updates, one trial at a time.
//!
//! Ordering per arrival `a`:
//!
//! 1. fold the trial into the running covariance and whiten it;
//! 2. score it with all `M` members and record the probabilities;
//! 3. emit a label: plain averaging while `a <= M`, the configured
//!    ensemble rule afterwards (averaging again if the spectral weights
//!    are unavailable);
//! 4. once `a >= B`, re-whiten the window with the newest whitener and
//!    take one adaptation step per member.
//!
//! The label for trial `a` is fixed before step 4 starts.

use std::time::Instant;

use rayon::prelude::*;

use crate::alignment::{align_offline, EigenFloor, RunningCovariance, Trial, TrialBatch, TrialMoments};
use crate::classifier::{
    featurize_moments, softmax_t, AdamConfig, AdamState, Architecture, Classifier, Featurizer,
    TrainConfig,
};
use crate::ensemble::{ensemble_predict, EnsembleMode, PredictionHistory, SmlWeights};
use crate::error::{shape_err, Error, Result};
use crate::harness::metrics;
use crate::harness::report::{timing_report, TimingSummary};
use crate::ttaloss::{ttime_update_step, BatchStats, SlidingWindow, TtaLossConfig, UpdateToggles};

/// Adaptation hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaConfig {
    /// Ensemble size `M`.
    pub n_models: usize,
    /// Sliding window size `B`.
    pub window: usize,
    pub temperature: f64,
    pub tau: f64,
    pub c: f64,
    pub lr: f64,
    pub ensemble: EnsembleMode,
    /// Spectral weights are recomputed every this many arrivals.
    pub sml_recompute_interval: usize,
    pub toggles: UpdateToggles,
    /// Recompute spectral statistics from the full re-aligned history with
    /// the current models instead of the prediction-time cache.
    pub exact_sml: bool,
    pub floor: EigenFloor,
    pub seed: u64,
    /// Run the per-member updates on the rayon pool.
    pub parallel: bool,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            n_models: 5,
            window: 8,
            temperature: 2.0,
            tau: 0.7,
            c: 4.0,
            lr: 1e-3,
            ensemble: EnsembleMode::SmlSoft,
            sml_recompute_interval: 1,
            toggles: UpdateToggles::FULL,
            exact_sml: false,
            floor: EigenFloor::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_models < 1 {
            return fail("M must be at least 1".into());
        }
        if self.window < 1 {
            return fail("B must be at least 1".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.5..1.0).contains(&self.tau) {
            return fail(format!("tau must lie in [0.5, 1), got {}", self.tau));
        }
        if !(self.c >= 1.0) {
            return fail(format!("c must be at least 1, got {}", self.c));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if self.sml_recompute_interval < 1 {
            return fail("sml recompute interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn loss_config(&self) -> TtaLossConfig {
        TtaLossConfig {
            temperature: self.temperature,
            tau: self.tau,
            c: self.c,
            toggles: self.toggles,
        }
    }
}

/// How source models are built.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub featurizer: Featurizer,
    pub arch: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Class count; inferred from the labels when `None`.
    pub n_classes: Option<usize>,
    /// Fit a frozen input standardization on the pooled source features.
    pub standardize: bool,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            featurizer: Featurizer::LogVariance,
            arch: Architecture::Mlp {
                hidden: Architecture::DEFAULT_HIDDEN,
            },
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            n_classes: None,
            standardize: true,
        }
    }
}

/// Stream-independent seed for member `m` and purpose `salt`.
pub fn member_seed(seed: u64, m: usize, salt: u64) -> u64 {
    // splitmix64 finalizer over the packed inputs
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((m as u64) << 8)
        .wrapping_add(salt);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aligned, pooled source features and labels.
pub struct SourcePool {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub channels: usize,
    pub samples: usize,
}

/// Aligns each subject separately and pools the featurized trials.
pub fn pool_source(
    source: &[TrialBatch],
    featurizer: Featurizer,
    floor: EigenFloor,
    n_classes: Option<usize>,
) -> Result<SourcePool> {
    let dims = source
        .iter()
        .find_map(|b| b.dims())
        .ok_or_else(|| Error::EmptyInput("no source trials".into()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for batch in source {
        if batch.is_empty() {
            continue;
        }
        if batch.dims() != Some(dims) {
            return shape_err(format!(
                "subject {} has shape {:?}, expected {:?}",
                batch.subject_id,
                batch.dims(),
                dims
            ));
        }
        let y = batch.labels()?;
        let aligned = align_offline(batch, floor)?;
        for t in &aligned.trials {
            features.push(crate::classifier::featurize(t, featurizer));
        }
        labels.extend_from_slice(y);
    }
    let inferred = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let n_classes = n_classes.unwrap_or(inferred);
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Label(format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(SourcePool {
        features,
        labels,
        n_classes,
        channels: dims.0,
        samples: dims.1,
    })
}

/// Trains `n_models` independently seeded members on the pooled source.
pub fn train_source_models(
    source: &[TrialBatch],
    cfg: &SourceConfig,
    n_models: usize,
    seed: u64,
    floor: EigenFloor,
) -> Result<Vec<Classifier>> {
    let pool = pool_source(source, cfg.featurizer, floor, cfg.n_classes)?;
    train_on_pool(&pool, cfg, n_models, seed)
}

pub fn train_on_pool(
    pool: &SourcePool,
    cfg: &SourceConfig,
    n_models: usize,
    seed: u64,
) -> Result<Vec<Classifier>> {
    let n_features = cfg.featurizer.dim(pool.channels);
    (0..n_models)
        .into_par_iter()
        .map(|m| {
            let mut model = Classifier::new(
                cfg.featurizer,
                cfg.arch,
                n_features,
                pool.n_classes,
                member_seed(seed, m, 0),
            )?;
            let train = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                lr: cfg.lr,
                seed: member_seed(seed, m, 1),
                standardize: cfg.standardize,
            };
            model.train_features(&pool.features, &pool.labels, &train)?;
            Ok(model)
        })
        .collect()
}

/// Wall-clock split of one arrival, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingBreakdown {
    pub align_ms: f64,
    pub inference_ms: f64,
    pub ensemble_ms: f64,
    pub update_ms: f64,
}

impl TimingBreakdown {
    /// Everything before the label is emitted.
    pub fn pre_ms(&self) -> f64 {
        self.align_ms + self.inference_ms + self.ensemble_ms
    }

    pub fn post_ms(&self) -> f64 {
        self.update_ms
    }
}

/// What the engine reports for each arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// 1-based arrival index `a`.
    pub index: usize,
    pub label: usize,
    pub scores: Vec<f64>,
    /// Per-member softmax outputs at prediction time.
    pub probs: Vec<Vec<f64>>,
    pub used_sml: bool,
    /// Members that took an update step after the prediction.
    pub updated: usize,
    pub timing: TimingBreakdown,
}

impl TrialRecord {
    /// Binary ranking score: `score_1 − score_0`.
    pub fn positive_score(&self) -> f64 {
        if self.scores.len() >= 2 {
            self.scores[1] - self.scores[0]
        } else {
            self.scores.first().copied().unwrap_or(0.0)
        }
    }
}

/// Instrumentation events, delivered in the order they happen.
#[derive(Debug)]
pub enum EngineEvent<'a> {
    Predicted {
        index: usize,
        label: usize,
        scores: &'a [f64],
    },
    Updated {
        index: usize,
        member: usize,
        stats: &'a BatchStats,
    },
    UpdateFailed {
        index: usize,
        member: usize,
        error: &'a Error,
    },
}

pub type Observer = Box<dyn FnMut(&EngineEvent<'_>) + Send>;

#[derive(Debug, Clone)]
struct Member {
    model: Classifier,
    adam: AdamState,
}

/// Full streaming state for one target stream.
pub struct Engine {
    config: TtaConfig,
    members: Vec<Member>,
    featurizer: Featurizer,
    n_classes: usize,
    channels: usize,
    running_cov: RunningCovariance,
    history: PredictionHistory,
    weights: Option<SmlWeights>,
    window: SlidingWindow<TrialMoments>,
    seen: Vec<TrialMoments>,
    count: usize,
    updates_enabled: bool,
    observer: Option<Observer>,
}

impl Clone for Engine {
    /// Clones the state; the observer is not carried over.
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            members: self.members.clone(),
            featurizer: self.featurizer,
            n_classes: self.n_classes,
            channels: self.channels,
            running_cov: self.running_cov.clone(),
            history: self.history.clone(),
            weights: self.weights.clone(),
            window: self.window.clone(),
            seen: self.seen.clone(),
            count: self.count,
            updates_enabled: self.updates_enabled,
            observer: None,
        }
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("members", &self.members.len())
            .field("count", &self.count)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Aligns and pools the source subjects, trains `M` members, and
    /// returns an engine with empty target state.
    pub fn init(source: &[TrialBatch], config: TtaConfig, source_cfg: &SourceConfig) -> Result<Self> {
        config.validate()?;
        let models =
            train_source_models(source, source_cfg, config.n_models, config.seed, config.floor)?;
        Self::from_models(models, config)
    }

    /// Wraps already trained members. Uses the first `M` models.
    pub fn from_models(models: Vec<Classifier>, config: TtaConfig) -> Result<Self> {
        config.validate()?;
        if models.len() < config.n_models {
            return Err(Error::Config(format!(
                "{} models supplied, M = {}",
                models.len(),
                config.n_models
            )));
        }
        let first = &models[0];
        let featurizer = first.featurizer();
        let n_classes = first.n_classes();
        let n_features = first.n_features();
        for m in &models[..config.n_models] {
            if m.featurizer() != featurizer
                || m.n_classes() != n_classes
                || m.n_features() != n_features
            {
                return shape_err("ensemble members disagree on featurizer or dimensions");
            }
        }
        let channels = match featurizer {
            Featurizer::LogVariance => n_features,
            Featurizer::CovarianceFlatten => {
                let c = (((8 * n_features + 1) as f64).sqrt() as usize - 1) / 2;
                if c * (c + 1) / 2 != n_features {
                    return shape_err("feature size is not triangular");
                }
                c
            }
        };
        let adam_cfg = AdamConfig::with_lr(config.lr);
        let members = models
            .into_iter()
            .take(config.n_models)
            .map(|model| Member {
                adam: AdamState::new(model.params(), adam_cfg),
                model,
            })
            .collect();
        Ok(Self {
            history: PredictionHistory::new(config.n_models, n_classes),
            window: SlidingWindow::new(config.window),
            running_cov: RunningCovariance::new(config.floor),
            members,
            featurizer,
            n_classes,
            channels,
            weights: None,
            seen: Vec::new(),
            count: 0,
            updates_enabled: true,
            observer: None,
            config,
        })
    }

    pub fn config(&self) -> &TtaConfig {
        &self.config
    }

    pub fn models(&self) -> Vec<&Classifier> {
        self.members.iter().map(|m| &m.model).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Arrivals processed in the current session.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn history(&self) -> &PredictionHistory {
        &self.history
    }

    pub fn running_covariance(&self) -> &RunningCovariance {
        &self.running_cov
    }

    pub fn weights(&self) -> Option<&SmlWeights> {
        self.weights.as_ref()
    }

    pub fn set_updates_enabled(&mut self, enabled: bool) {
        self.updates_enabled = enabled;
    }

    pub fn updates_enabled(&self) -> bool {
        self.updates_enabled
    }

    pub fn set_observer(&mut self, observer: Option<Observer>) {
        self.observer = observer;
    }

    /// Drops all target-side statistics; models and optimizer state stay.
    pub fn reset_session(&mut self) {
        self.running_cov.reset();
        self.history.clear();
        self.weights = None;
        self.window.clear();
        self.seen.clear();
        self.count = 0;
    }

    fn emit(&mut self, event: EngineEvent<'_>) {
        if let Some(obs) = self.observer.as_mut() {
            obs(&event);
        }
    }

    /// Features of `moments` under the current whitener.
    fn aligned_features(&self, moments: &TrialMoments) -> Result<Vec<f64>> {
        let w = self.running_cov.whitener()?;
        Ok(featurize_moments(&moments.transformed(w)?, self.featurizer))
    }

    /// Spectral weights from the full history, re-aligned and re-scored
    /// with the current members.
    fn exact_weights(&self) -> Result<SmlWeights> {
        let mut history = PredictionHistory::new(self.members.len(), self.n_classes);
        for moments in &self.seen {
            let f = self.aligned_features(moments)?;
            let probs = self
                .members
                .iter()
                .map(|m| m.model.predict_proba(&f, 1.0))
                .collect::<Result<Vec<_>>>()?;
            history.record(&probs)?;
        }
        history.sml_weights()
    }

    /// Processes one arrival: predict, then (maybe) update.
    pub fn process_trial(&mut self, x: &Trial) -> Result<TrialRecord> {
        if x.channels() != self.channels {
            return shape_err(format!(
                "engine expects {} channels, trial has {}",
                self.channels,
                x.channels()
            ));
        }
        let mut timing = TimingBreakdown::default();

        let start = Instant::now();
        let moments = x.moments();
        self.running_cov.update_gram(&moments.gram)?;
        let features = self.aligned_features(&moments)?;
        self.count += 1;
        let a = self.count;
        timing.align_ms = ms_since(start);

        let start = Instant::now();
        let probs = self
            .members
            .iter()
            .map(|m| m.model.forward(&features).map(|l| softmax_t(&l, 1.0)))
            .collect::<Result<Vec<_>>>()?;
        self.history.record(&probs)?;
        if self.config.exact_sml {
            self.seen.push(moments.clone());
        }
        timing.inference_ms = ms_since(start);

        let start = Instant::now();
        let m = self.members.len();
        let mut used_sml = false;
        let (label, scores) = if a <= m {
            ensemble_predict(&probs, None, EnsembleMode::Average)?
        } else if self.config.ensemble.uses_sml() {
            let due = self.weights.is_none() || (a - m - 1).is_multiple_of(self.config.sml_recompute_interval);
            if due {
                let computed = if self.config.exact_sml {
                    self.exact_weights()
                } else {
                    self.history.sml_weights()
                };
                self.weights = match computed {
                    Ok(w) => Some(w),
                    Err(e) => {
                        log::warn!("spectral weights unavailable at trial {a}: {e}");
                        None
                    }
                };
            }
            match self.weights.as_ref().filter(|w| w.valid) {
                Some(w) => {
                    used_sml = true;
                    ensemble_predict(&probs, Some(w), self.config.ensemble)?
                }
                None => ensemble_predict(&probs, None, EnsembleMode::Average)?,
            }
        } else {
            ensemble_predict(&probs, None, self.config.ensemble)?
        };
        timing.ensemble_ms = ms_since(start);
        self.emit(EngineEvent::Predicted {
            index: a,
            label,
            scores: &scores,
        });

        let start = Instant::now();
        self.window.push(moments);
        let mut updated = 0;
        if self.updates_enabled && self.config.toggles.any_loss() && a >= self.config.window {
            let window: Vec<Vec<f64>> = self
                .window
                .iter()
                .map(|mo| self.aligned_features(mo))
                .collect::<Result<_>>()?;
            let loss_cfg = self.config.loss_config();
            let step = |member: &mut Member| {
                ttime_update_step(&mut member.model, &mut member.adam, &window, &loss_cfg)
            };
            let outcomes: Vec<Result<BatchStats>> = if self.config.parallel && m > 1 {
                self.members.par_iter_mut().map(step).collect()
            } else {
                self.members.iter_mut().map(step).collect()
            };
            for (member, outcome) in outcomes.iter().enumerate() {
                match outcome {
                    Ok(stats) => {
                        updated += 1;
                        self.emit(EngineEvent::Updated {
                            index: a,
                            member,
                            stats,
                        });
                    }
                    Err(error) => {
                        log::warn!("member {member} skipped update at trial {a}: {error}");
                        self.emit(EngineEvent::UpdateFailed {
                            index: a,
                            member,
                            error,
                        });
                    }
                }
            }
        }
        timing.update_ms = ms_since(start);

        Ok(TrialRecord {
            index: a,
            label,
            scores,
            probs,
            used_sml,
            updated,
            timing,
        })
    }

    /// Processes every trial of `batch` in order.
    pub fn process_batch(&mut self, batch: &TrialBatch) -> Result<Vec<TrialRecord>> {
        batch.trials.iter().map(|t| self.process_trial(t)).collect()
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Continual-adaptation scenario for one target session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionMode {
    /// Frozen source models.
    Source,
    /// Adapt on the prior session, then predict the stream frozen.
    Tta1,
    /// Adapt while predicting the stream.
    Tta2,
    /// Adapt on the prior session, then keep adapting on the stream.
    Tta12,
}

impl SessionMode {
    pub const ALL: [SessionMode; 4] = [
        SessionMode::Source,
        SessionMode::Tta1,
        SessionMode::Tta2,
        SessionMode::Tta12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SessionMode::Source => "source",
            SessionMode::Tta1 => "tta1",
            SessionMode::Tta2 => "tta2",
            SessionMode::Tta12 => "tta1+2",
        }
    }

    pub fn needs_prior(self) -> bool {
        matches!(self, SessionMode::Tta1 | SessionMode::Tta12)
    }
}

impl std::str::FromStr for SessionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SessionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown session mode '{s}'")))
    }
}

/// Predictions and metrics for one streamed session.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub records: Vec<TrialRecord>,
    pub predictions: Vec<usize>,
    pub truth: Option<Vec<usize>>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    /// Binary problems with both classes present only.
    pub auc: Option<f64>,
    pub timing: TimingSummary,
}

impl SessionResult {
    pub fn from_records(records: Vec<TrialRecord>, truth: Option<&[usize]>, n_classes: usize) -> Self {
        let predictions: Vec<usize> = records.iter().map(|r| r.label).collect();
        let timing = timing_report(&records);
        let (accuracy, balanced_accuracy, auc) = match truth {
            Some(y) => {
                let auc = if n_classes == 2 {
                    let scores: Vec<f64> = records.iter().map(TrialRecord::positive_score).collect();
                    let positives: Vec<bool> = y.iter().map(|&l| l == 1).collect();
                    metrics::auc(&scores, &positives).ok()
                } else {
                    None
                };
                (
                    Some(metrics::accuracy(&predictions, y)),
                    Some(metrics::balanced_accuracy(&predictions, y, n_classes)),
                    auc,
                )
            }
            None => (None, None, None),
        };
        Self {
            records,
            predictions,
            truth: truth.map(<[usize]>::to_vec),
            accuracy,
            balanced_accuracy,
            auc,
            timing,
        }
    }
}

/// Streams one target session under `mode`. Target-side statistics are
/// reset at every session boundary; model parameters carry over.
pub fn run_session(
    engine: &mut Engine,
    stream: &TrialBatch,
    mode: SessionMode,
    prior: Option<&TrialBatch>,
) -> Result<SessionResult> {
    if mode.needs_prior() && prior.is_none() {
        return Err(Error::Config(format!("mode {} needs a prior session", mode.name())));
    }
    if let (true, Some(prior)) = (mode.needs_prior(), prior) {
        engine.reset_session();
        engine.set_updates_enabled(true);
        engine.process_batch(prior)?;
    }
    engine.reset_session();
    engine.set_updates_enabled(matches!(mode, SessionMode::Tta2 | SessionMode::Tta12));
    let records = engine.process_batch(stream)?;
    Ok(SessionResult::from_records(
        records,
        stream.labels.as_deref(),
        engine.n_classes(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::tests::random_trial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_engine(m: usize, b: usize) -> Engine {
        let models = (0..m)
            .map(|i| {
                Classifier::new(Featurizer::LogVariance, Architecture::Linear, 3, 2, i as u64).unwrap()
            })
            .collect();
        let cfg = TtaConfig {
            n_models: m,
            window: b,
            parallel: false,
            ..TtaConfig::default()
        };
        Engine::from_models(models, cfg).unwrap()
    }

    #[test]
    fn cold_start_averages_without_updates() {
        let mut e = tiny_engine(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = e.process_trial(&random_trial(&mut rng, 3, 20)).unwrap();
        assert_eq!(r.index, 1);
        assert!(!r.used_sml);
        assert_eq!(r.updated, 0);
        let (label, scores) = ensemble_predict(&r.probs, None, EnsembleMode::Average).unwrap();
        assert_eq!((label, scores), (r.label, r.scores.clone()));
        assert_eq!(e.count(), e.running_covariance().count());
        assert_eq!(e.count(), e.history().count());
    }

    #[test]
    fn updates_start_at_window_and_sml_after_m() {
        let mut e = tiny_engine(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<TrialRecord> = (0..6)
            .map(|_| e.process_trial(&random_trial(&mut rng, 3, 20)).unwrap())
            .collect();
        let updated: Vec<usize> = records.iter().map(|r| r.updated).collect();
        assert_eq!(updated, vec![0, 0, 2, 2, 2, 2]);
        assert!(!records[0].used_sml && !records[1].used_sml);
        assert!(records[2..].iter().all(|r| r.used_sml));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut e = tiny_engine(1, 2);
        assert!(matches!(e.process_trial(&Trial::zeros(4, 10)), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let bad = [
            TtaConfig { n_models: 0, ..TtaConfig::default() },
            TtaConfig { window: 0, ..TtaConfig::default() },
            TtaConfig { temperature: 0.0, ..TtaConfig::default() },
            TtaConfig { tau: 1.0, ..TtaConfig::default() },
            TtaConfig { c: 0.5, ..TtaConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert!(TtaConfig::default().validate().is_ok());
    }

    #[test]
    fn session_modes_need_prior() {
        let mut e = tiny_engine(1, 2);
        let stream = TrialBatch::new("t", vec![Trial::zeros(3, 4)], None).unwrap();
        assert!(matches!(
            run_session(&mut e, &stream, SessionMode::Tta1, None),
            Err(Error::Config(_))
        ));
        assert_eq!("tta1+2".parse::<SessionMode>().unwrap(), SessionMode::Tta12);
    }

    #[test]
    fn member_seeds_differ() {
        let seeds: std::collections::HashSet<u64> =
            (0..10).flat_map(|m| [member_seed(7, m, 0), member_seed(7, m, 1)]).collect();
        assert_eq!(seeds.len(), 20);
    }
}
