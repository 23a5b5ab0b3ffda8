//! Leave-one-subject-out drivers and the tables built on them.

use rayon::prelude::*;

use crate::alignment::TrialBatch;
use crate::classifier::Classifier;
use crate::engine::{
    member_seed, pool_source, run_session, train_on_pool, Engine, SessionMode, SessionResult,
    SourceConfig, TtaConfig,
};
use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::mean_std;
use crate::harness::report::{ResultRow, ResultTable};
use crate::harness::synth::{synth_generate, SynthDataset};
use crate::ttaloss::UpdateToggles;

/// One row family of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub tta: TtaConfig,
    pub mode: SessionMode,
}

impl Variant {
    pub fn new(label: impl Into<String>, tta: TtaConfig, mode: SessionMode) -> Self {
        Self {
            label: label.into(),
            tta,
            mode,
        }
    }

    /// Single frozen source model.
    pub fn frozen(base: &TtaConfig) -> Self {
        let tta = TtaConfig {
            n_models: 1,
            toggles: UpdateToggles::OFF,
            ..base.clone()
        };
        Self::new("source", tta, SessionMode::Source)
    }

    /// Adapt-while-predicting with `m` members.
    pub fn ttime(base: &TtaConfig, m: usize) -> Self {
        let tta = TtaConfig {
            n_models: m,
            ..base.clone()
        };
        Self::new(format!("ttime-{m}"), tta, SessionMode::Tta2)
    }
}

/// Where each repeat's data comes from.
#[derive(Debug, Clone, Copy)]
pub enum LosoData<'a> {
    /// The same dataset for every repeat; only model seeds change.
    Fixed(&'a SynthDataset),
    /// Regenerate the dataset per repeat with the synth seed offset by the repeat index.
    PerRepeat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoOptions {
    pub repeats: usize,
    /// Target session streamed; modes needing a prior use the one before it.
    pub session: usize,
    pub timing: bool,
}

impl Default for LosoOptions {
    fn default() -> Self {
        Self {
            repeats: 1,
            session: 0,
            timing: false,
        }
    }
}

/// `(held-out index, source indices)` for every fold.
pub fn loso_partitions(n_subjects: usize) -> Vec<(usize, Vec<usize>)> {
    (0..n_subjects)
        .map(|t| (t, (0..n_subjects).filter(|&s| s != t).collect()))
        .collect()
}

fn subject_of(batch: &TrialBatch) -> &str {
    batch.subject_id.split('/').next().unwrap_or("")
}

/// One fold: trains `max M` members once and streams every variant on
/// copies of them.
pub fn run_fold(
    sources: &[TrialBatch],
    target_sessions: &[TrialBatch],
    source_cfg: &SourceConfig,
    variants: &[Variant],
    session: usize,
    seed: u64,
) -> Result<Vec<SessionResult>> {
    let stream = target_sessions.get(session).ok_or_else(|| {
        Error::Config(format!(
            "session {} requested, subject has {}",
            session + 1,
            target_sessions.len()
        ))
    })?;
    let target = subject_of(stream);
    if let Some(leak) = sources.iter().find(|s| subject_of(s) == target) {
        return Err(Error::State(format!(
            "target subject {target} leaked into the source pool as {}",
            leak.subject_id
        )));
    }
    let m_max = variants.iter().map(|v| v.tta.n_models).max().unwrap_or(1);
    let floor = variants.first().map(|v| v.tta.floor).unwrap_or_default();
    let pool = pool_source(sources, source_cfg.featurizer, floor, source_cfg.n_classes)?;
    let models: Vec<Classifier> = train_on_pool(&pool, source_cfg, m_max, seed)?;
    variants
        .iter()
        .map(|v| {
            let mut engine = Engine::from_models(models[..v.tta.n_models].to_vec(), v.tta.clone())?;
            let prior = if v.mode.needs_prior() {
                Some(session.checked_sub(1).and_then(|p| target_sessions.get(p)).ok_or_else(
                    || Error::Config(format!("mode {} needs a prior session", v.mode.name())),
                )?)
            } else {
                None
            };
            run_session(&mut engine, stream, v.mode, prior)
        })
        .collect()
}

fn row(subject: &str, repeat: usize, label: &str, r: &SessionResult, timing: bool) -> ResultRow {
    ResultRow {
        subject: subject.into(),
        repeat: repeat.to_string(),
        mode: label.into(),
        accuracy: r.accuracy,
        balanced_accuracy: r.balanced_accuracy,
        auc: r.auc,
        timing: timing.then_some(r.timing),
    }
}

/// Leave-one-subject-out over every subject and repeat. Rows come out in
/// (repeat, subject, variant) order regardless of scheduling.
pub fn loso_drive(
    data: LosoData<'_>,
    cfg: &ExperimentConfig,
    variants: &[Variant],
    opts: &LosoOptions,
) -> Result<ResultTable> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to run".into()));
    }
    let datasets: Vec<SynthDataset> = match data {
        LosoData::Fixed(d) => vec![d.clone()],
        LosoData::PerRepeat => (0..opts.repeats)
            .into_par_iter()
            .map(|r| {
                let mut spec = cfg.synth.clone();
                spec.seed = spec.seed.wrapping_add(r as u64);
                synth_generate(&spec)
            })
            .collect::<Result<_>>()?,
    };
    let n_subjects = datasets[0].subjects.len();
    if n_subjects < 2 {
        return Err(Error::Config("leave-one-subject-out needs at least two subjects".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..opts.repeats)
        .flat_map(|r| (0..n_subjects).map(move |t| (r, t)))
        .collect();
    let results: Vec<Vec<SessionResult>> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let ds = &datasets[r.min(datasets.len() - 1)];
            let sources = ds.sources_excluding(t);
            let seed = member_seed(member_seed(cfg.tta.seed, r, 0x4e9), t, 0x10);
            run_fold(&sources, &ds.subjects[t].sessions, &cfg.source, variants, opts.session, seed)
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::default();
    for (&(r, t), fold) in jobs.iter().zip(&results) {
        let subject = &datasets[r.min(datasets.len() - 1)].subjects[t].id;
        for (v, res) in variants.iter().zip(fold) {
            table.push(row(subject, r, &v.label, res, opts.timing));
        }
    }
    Ok(table)
}

/// Frozen source, single-model T-TIME, and `M`-member T-TIME.
pub fn standard_variants(base: &TtaConfig) -> Vec<Variant> {
    let mut out = vec![Variant::frozen(base), Variant::ttime(base, 1)];
    if base.n_models > 1 {
        out.push(Variant::ttime(base, base.n_models));
    }
    out
}

/// All eight CEM × MDR × TR combinations. The TR-only combination has no
/// loss to scale and is returned as `None`.
pub fn ablation_variants(base: &TtaConfig) -> Vec<(String, Option<Variant>)> {
    let mut out = Vec::new();
    for cem in [false, true] {
        for mdr in [false, true] {
            for tr in [false, true] {
                let toggles = UpdateToggles {
                    cem,
                    mdr,
                    temperature: tr,
                    recalibrate: base.toggles.recalibrate,
                };
                let label = if !cem && !mdr && tr { "tr".to_string() } else { toggles.label() };
                let variant = if !cem && !mdr && tr {
                    None
                } else {
                    let mode = if toggles.any_loss() { SessionMode::Tta2 } else { SessionMode::Source };
                    let tta = TtaConfig {
                        toggles,
                        ..base.clone()
                    };
                    Some(Variant::new(label.clone(), tta, mode))
                };
                out.push((label, variant));
            }
        }
    }
    out
}

pub fn ablate(data: LosoData<'_>, cfg: &ExperimentConfig, opts: &LosoOptions) -> Result<ResultTable> {
    let combos = ablation_variants(&cfg.tta);
    let runnable: Vec<Variant> = combos.iter().filter_map(|(_, v)| v.clone()).collect();
    let mut table = loso_drive(data, cfg, &runnable, opts)?.with_aggregates();
    for (label, v) in &combos {
        if v.is_none() {
            table.push(ResultRow::not_applicable("all", "mean", label));
            table.push(ResultRow::not_applicable("all", "std", label));
        }
    }
    Ok(table)
}

/// Target ratio the CLI uses for the imbalance comparison unless overridden.
pub const DEFAULT_IMBALANCE_RATIO: f64 = 2.0;

/// `M`-member T-TIME with recalibrated MDR against the same pipeline with
/// recalibration off (plain diversity loss).
pub fn imbalance_variants(base: &TtaConfig) -> Vec<Variant> {
    let mut out = vec![Variant::frozen(base)];
    for recalibrate in [true, false] {
        let tta = TtaConfig {
            toggles: UpdateToggles {
                recalibrate,
                ..base.toggles
            },
            ..base.clone()
        };
        let label = if recalibrate { "adaptive-mdr" } else { "plain-mdr" };
        out.push(Variant::new(label, tta, SessionMode::Tta2));
    }
    out
}

/// Runs [`imbalance_variants`]; the targets must be imbalanced.
pub fn imbalance(data: LosoData<'_>, cfg: &ExperimentConfig, opts: &LosoOptions) -> Result<ResultTable> {
    let ratio = match data {
        LosoData::Fixed(ds) => ds.spec.imbalance_ratio,
        LosoData::PerRepeat => cfg.synth.imbalance_ratio,
    };
    if ratio <= 1.0 {
        return Err(Error::Config("imbalance comparison needs imbalance_ratio > 1".into()));
    }
    Ok(loso_drive(data, cfg, &imbalance_variants(&cfg.tta), opts)?.with_aggregates())
}

/// Parameter swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Temperature,
    Tau,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "temp" | "temperature" => Ok(SweepParam::Temperature),
            "tau" => Ok(SweepParam::Tau),
            _ => Err(Error::Config(format!("cannot sweep '{s}'; expected T or tau"))),
        }
    }
}

pub fn sweep_variants(base: &TtaConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<Variant>> {
    grid.iter()
        .map(|&x| {
            let mut tta = base.clone();
            let label = match param {
                SweepParam::Temperature => {
                    tta.temperature = x;
                    format!("T={x}")
                }
                SweepParam::Tau => {
                    tta.tau = x;
                    format!("tau={x}")
                }
            };
            tta.validate()?;
            Ok(Variant::new(label, tta, SessionMode::Tta2))
        })
        .collect()
}

pub fn sweep(
    data: LosoData<'_>,
    cfg: &ExperimentConfig,
    param: SweepParam,
    grid: &[f64],
    opts: &LosoOptions,
) -> Result<ResultTable> {
    let variants = sweep_variants(&cfg.tta, param, grid)?;
    Ok(loso_drive(data, cfg, &variants, opts)?.with_aggregates())
}

/// One point of an accuracy-versus-ensemble-size curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub ensemble: EnsembleMode,
    pub n_models: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: Option<f64>,
}

pub const CURVE_HEADER: [&str; 5] = ["ensemble", "n_models", "mean_accuracy", "std_accuracy", "mean_auc"];

pub fn ensemble_compare(
    data: LosoData<'_>,
    cfg: &ExperimentConfig,
    modes: &[EnsembleMode],
    m_grid: &[usize],
    opts: &LosoOptions,
) -> Result<Vec<CurvePoint>> {
    let mut variants = Vec::new();
    for &mode in modes {
        for &m in m_grid {
            let tta = TtaConfig {
                n_models: m,
                ensemble: mode,
                ..cfg.tta.clone()
            };
            tta.validate()?;
            variants.push(Variant::new(format!("{}-{m}", mode.name()), tta, SessionMode::Tta2));
        }
    }
    let table = loso_drive(data, cfg, &variants, opts)?;
    Ok(variants
        .iter()
        .map(|v| {
            let accs = table.repeat_means(&v.label, |r| r.accuracy);
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            CurvePoint {
                ensemble: v.tta.ensemble,
                n_models: v.tta.n_models,
                mean_accuracy,
                std_accuracy,
                mean_auc: table.mean(&v.label, |r| r.auc),
            }
        })
        .collect())
}

pub fn write_curve_csv<W: std::io::Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_HEADER)?;
    for p in points {
        out.write_record([
            p.ensemble.name().to_string(),
            p.n_models.to_string(),
            format!("{:.6}", p.mean_accuracy),
            format!("{:.6}", p.std_accuracy),
            p.mean_auc.map_or_else(|| "NA".into(), |a| format!("{a:.6}")),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// The four continual modes on session 2 with session 1 as the prior.
pub fn continual_variants(base: &TtaConfig) -> Vec<Variant> {
    SessionMode::ALL
        .iter()
        .map(|&mode| {
            let mut tta = base.clone();
            if mode == SessionMode::Source {
                tta.toggles = UpdateToggles::OFF;
            }
            Variant::new(mode.name(), tta, mode)
        })
        .collect()
}

pub fn continual(data: LosoData<'_>, cfg: &ExperimentConfig, opts: &LosoOptions) -> Result<ResultTable> {
    if cfg.synth.target_sessions < 2 {
        return Err(Error::Config("continual modes need two target sessions".into()));
    }
    let opts = LosoOptions {
        session: opts.session.max(1),
        ..opts.clone()
    };
    Ok(loso_drive(data, cfg, &continual_variants(&cfg.tta), &opts)?.with_aggregates())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_cover_each_subject_once() {
        let parts = loso_partitions(4);
        assert_eq!(parts.len(), 4);
        for (t, src) in &parts {
            assert_eq!(src.len(), 3);
            assert!(!src.contains(t));
        }
    }

    #[test]
    fn ablation_has_eight_cells_one_na() {
        let combos = ablation_variants(&TtaConfig::default());
        assert_eq!(combos.len(), 8);
        let na: Vec<&String> = combos.iter().filter(|(_, v)| v.is_none()).map(|(l, _)| l).collect();
        assert_eq!(na, vec!["tr"]);
        let labels: Vec<&str> = combos.iter().map(|(l, _)| l.as_str()).collect();
        assert!(labels.contains(&"cem+mdr+tr"));
        assert!(labels.contains(&"none"));
    }

    #[test]
    fn sweep_rejects_invalid_grid() {
        assert!(sweep_variants(&TtaConfig::default(), SweepParam::Tau, &[0.4]).is_err());
        assert_eq!(sweep_variants(&TtaConfig::default(), SweepParam::Temperature, &[2.0, 3.0]).unwrap().len(), 2);
    }
}
