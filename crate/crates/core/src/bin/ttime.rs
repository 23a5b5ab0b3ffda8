use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ttime::alignment::TrialBatch;
use ttime::classifier::Classifier;
use ttime::engine::{
    pool_source, run_session, train_on_pool, Engine, SessionMode, SessionResult,
};
use ttime::ensemble::EnsembleMode;
use ttime::harness::config::ExperimentConfig;
use ttime::harness::experiments::{
    ablate, continual, ensemble_compare, imbalance, loso_drive, standard_variants, sweep, write_curve_csv,
    LosoData, DEFAULT_IMBALANCE_RATIO, LosoOptions, SweepParam, Variant,
};
use ttime::harness::io::{load_trials, save_trials, write_trial_records};
use ttime::harness::metrics::accuracy;
use ttime::harness::report::{ResultRow, ResultTable};
use ttime::harness::synth::{synth_generate, SynthSpec};
use ttime::{Error, Result};

#[derive(Parser)]
#[command(name = "ttime", version, about = "Streaming test-time adaptation for multichannel trial classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as trial files plus a CSV manifest.
    Synth(SynthArgs),
    /// Train source models and write checkpoints.
    TrainSource(TrainArgs),
    /// Stream one target session through the engine.
    RunTta(RunArgs),
    /// Leave-one-subject-out benchmark: frozen source, T-TIME(1), T-TIME(M).
    Loso(ExpArgs),
    /// All CEM × MDR × TR combinations.
    Ablate(ExpArgs),
    /// Sensitivity to the temperature or the pseudo-label threshold.
    Sweep(SweepArgs),
    /// Accuracy against ensemble size for each combination rule.
    EnsembleCompare(CompareArgs),
    /// Source / tta1 / tta2 / tta1+2 on a two-session target.
    Continual(ExpArgs),
    /// Recalibrated against plain MDR on imbalanced targets (2:1 unless set).
    Imbalance(ExpArgs),
    /// Per-trial latency on a single stream.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set M=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// CSV destination; standard output when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Directory receiving the trial files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled source trial files, one per subject.
    #[arg(long, required = true, num_args = 1..)]
    source: Vec<PathBuf>,
    /// Directory receiving `model_<m>.ttmd`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long = "M")]
    n_models: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Model checkpoints; the first `M` are used.
    #[arg(long, num_args = 1.., conflicts_with = "source")]
    models: Vec<PathBuf>,
    /// Train in-process from these labeled source files instead.
    #[arg(long, num_args = 1..)]
    source: Vec<PathBuf>,
    /// Target session to stream.
    #[arg(long)]
    stream: PathBuf,
    /// Prior session for tta1 and tta1+2.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value = "tta2")]
    mode: SessionMode,
    #[arg(long)]
    ensemble: Option<EnsembleMode>,
    #[arg(long = "M")]
    n_models: Option<usize>,
    #[arg(long = "B")]
    window: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exact_sml: bool,
    /// Per-trial CSV destination.
    #[arg(long)]
    trials_out: Option<PathBuf>,
    /// Fill the timing columns (wall clock; not reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ExpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep one dataset across repeats instead of regenerating per repeat.
    #[arg(long)]
    fixed_data: bool,
    /// Fill the timing columns (wall clock; not reproducible).
    #[arg(long)]
    timing: bool,
}

/// Data requirements of an experiment, applied on top of the config.
#[derive(Clone, Copy, Default)]
struct Needs {
    sessions: usize,
    imbalanced: bool,
}

const ONE_SESSION: Needs = Needs {
    sessions: 1,
    imbalanced: false,
};

impl ExpArgs {
    fn resolve(&self, needs: Needs) -> Result<(ExperimentConfig, LosoOptions)> {
        let mut cfg = self.common.load()?;
        cfg.synth.target_sessions = cfg.synth.target_sessions.max(needs.sessions);
        if needs.imbalanced && cfg.synth.imbalance_ratio == 1.0 {
            cfg.synth.imbalance_ratio = DEFAULT_IMBALANCE_RATIO;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(s) = self.seed {
            cfg.tta.seed = s;
            cfg.synth.seed = s;
        }
        cfg.validate()?;
        let opts = LosoOptions {
            repeats: cfg.repeats,
            session: 0,
            timing: self.timing,
        };
        Ok((cfg, opts))
    }

    fn run<T>(
        &self,
        needs: Needs,
        f: impl FnOnce(LosoData<'_>, &ExperimentConfig, &LosoOptions) -> Result<T>,
    ) -> Result<T> {
        let (cfg, opts) = self.resolve(needs)?;
        if self.fixed_data {
            let ds = synth_generate(&cfg.synth)?;
            f(LosoData::Fixed(&ds), &cfg, &opts)
        } else {
            f(LosoData::PerRepeat, &cfg, &opts)
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// `T` or `tau`.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_value = "sml-soft,sml-hard,average,vote")]
    modes: Vec<EnsembleMode>,
    #[arg(long = "m-grid", value_delimiter = ',', default_value = "1,3,5,7,9")]
    m_grid: Vec<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 22)]
    channels: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long = "M")]
    n_models: Option<usize>,
    #[arg(long = "B")]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Source training epochs (latency does not depend on them).
    #[arg(long, default_value_t = 5)]
    epochs: usize,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let ds = synth_generate(&cfg.synth)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut out = csv::Writer::from_writer(open_output(args.common.output.as_deref())?);
    out.write_record(["subject", "role", "file", "n_trials", "channels", "samples", "class_counts"])?;
    let mut emit = |subject: &str, role: &str, batch: &TrialBatch| -> Result<()> {
        let name = format!("{subject}_{role}.ttrl");
        save_trials(batch, args.out_dir.join(&name))?;
        let (ch, ts) = batch.dims().unwrap_or((0, 0));
        let mut counts = vec![0usize; cfg.synth.n_classes];
        for &y in batch.labels()? {
            counts[y] += 1;
        }
        let counts: Vec<String> = counts.iter().map(usize::to_string).collect();
        out.write_record([
            subject.to_string(),
            role.to_string(),
            name,
            batch.len().to_string(),
            ch.to_string(),
            ts.to_string(),
            counts.join(";"),
        ])?;
        Ok(())
    };
    for s in &ds.subjects {
        emit(&s.id, "source", &s.source)?;
        for (t, session) in s.sessions.iter().enumerate() {
            emit(&s.id, &format!("t{}", t + 1), session)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<TrialBatch>> {
    paths.iter().map(load_trials).collect()
}

fn train_models(
    sources: &[TrialBatch],
    cfg: &ExperimentConfig,
    n_models: usize,
    seed: u64,
) -> Result<(Vec<Classifier>, f64)> {
    let pool = pool_source(sources, cfg.source.featurizer, cfg.tta.floor, cfg.source.n_classes)?;
    let models = train_on_pool(&pool, &cfg.source, n_models, seed)?;
    let accs: Vec<f64> = models
        .iter()
        .map(|m| {
            let pred = pool
                .features
                .iter()
                .map(|f| m.forward(f).map(|l| ttime::classifier::argmax(&l)))
                .collect::<Result<Vec<_>>>()?;
            Ok(accuracy(&pred, &pool.labels))
        })
        .collect::<Result<_>>()?;
    Ok((models, accs.iter().sum::<f64>() / accs.len().max(1) as f64))
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let m = args.n_models.unwrap_or(cfg.tta.n_models);
    let seed = args.seed.unwrap_or(cfg.tta.seed);
    let sources = load_all(&args.source)?;
    let pool = pool_source(&sources, cfg.source.featurizer, cfg.tta.floor, cfg.source.n_classes)?;
    let models = train_on_pool(&pool, &cfg.source, m, seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut out = csv::Writer::from_writer(open_output(args.common.output.as_deref())?);
    out.write_record(["model", "file", "featurizer", "arch", "source_accuracy"])?;
    for (i, model) in models.iter().enumerate() {
        let name = format!("model_{i}.ttmd");
        model.save(args.out_dir.join(&name))?;
        let pred = pool
            .features
            .iter()
            .map(|f| model.forward(f).map(|l| ttime::classifier::argmax(&l)))
            .collect::<Result<Vec<_>>>()?;
        out.write_record([
            i.to_string(),
            name,
            model.featurizer().name().to_string(),
            model.architecture().name(),
            format!("{:.6}", accuracy(&pred, &pool.labels)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    let t = &mut cfg.tta;
    if let Some(v) = args.ensemble {
        t.ensemble = v;
    }
    if let Some(v) = args.n_models {
        t.n_models = v;
    }
    if let Some(v) = args.window {
        t.window = v;
    }
    if let Some(v) = args.temp {
        t.temperature = v;
    }
    if let Some(v) = args.tau {
        t.tau = v;
    }
    if let Some(v) = args.c {
        t.c = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    t.exact_sml |= args.exact_sml;
    cfg.validate()?;
    let models = if !args.models.is_empty() {
        args.models.iter().map(Classifier::load).collect::<Result<Vec<_>>>()?
    } else if !args.source.is_empty() {
        train_models(&load_all(&args.source)?, &cfg, cfg.tta.n_models, cfg.tta.seed)?.0
    } else {
        return Err(Error::Config("run-tta needs --models or --source".into()));
    };
    let stream = load_trials(&args.stream)?;
    let prior = args.prior.as_ref().map(load_trials).transpose()?;
    let mut engine = Engine::from_models(models, cfg.tta.clone())?;
    let result = run_session(&mut engine, &stream, args.mode, prior.as_ref())?;
    if let Some(path) = &args.trials_out {
        write_trial_records(
            &result.records,
            stream.labels.as_deref(),
            args.timing,
            BufWriter::new(File::create(path)?),
        )?;
    }
    let mut table = ResultTable::default();
    table.push(session_row(&stream.subject_id, args.mode.name(), &result, args.timing));
    table.write_csv(open_output(args.common.output.as_deref())?)
}

fn session_row(subject: &str, mode: &str, r: &SessionResult, timing: bool) -> ResultRow {
    ResultRow {
        subject: subject.into(),
        repeat: "0".into(),
        mode: mode.into(),
        accuracy: r.accuracy,
        balanced_accuracy: r.balanced_accuracy,
        auc: r.auc,
        timing: timing.then_some(r.timing),
    }
}

fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(v) = args.n_models {
        cfg.tta.n_models = v;
    }
    if let Some(v) = args.window {
        cfg.tta.window = v;
    }
    if let Some(v) = args.seed {
        cfg.tta.seed = v;
        cfg.synth.seed = v;
    }
    cfg.source.epochs = args.epochs;
    let spec = SynthSpec {
        n_subjects: 2,
        source_trials: 48,
        target_trials: args.trials,
        channels: args.channels,
        samples: args.samples,
        ..cfg.synth.clone()
    };
    let ds = synth_generate(&spec)?;
    let (models, _) = train_models(&[ds.subjects[0].source.clone()], &cfg, cfg.tta.n_models, cfg.tta.seed)?;
    let mut engine = Engine::from_models(models, cfg.tta.clone())?;
    let stream = &ds.subjects[1].sessions[0];
    let result = run_session(&mut engine, stream, SessionMode::Tta2, None)?;
    let mut table = ResultTable::default();
    table.push(session_row(&stream.subject_id, "ttime", &result, true));
    table.write_csv(open_output(args.common.output.as_deref())?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(&a),
        Command::TrainSource(a) => train_cmd(&a),
        Command::RunTta(a) => run_cmd(&a),
        Command::Loso(a) => {
            let table = a.run(ONE_SESSION, |data, cfg, opts| {
                let variants: Vec<Variant> = standard_variants(&cfg.tta);
                Ok(loso_drive(data, cfg, &variants, opts)?.with_aggregates())
            })?;
            table.write_csv(open_output(a.common.output.as_deref())?)
        }
        Command::Ablate(a) => {
            let table = a.run(ONE_SESSION, ablate)?;
            table.write_csv(open_output(a.common.output.as_deref())?)
        }
        Command::Sweep(s) => {
            let table = s.exp.run(ONE_SESSION, |data, cfg, opts| sweep(data, cfg, s.param, &s.grid, opts))?;
            table.write_csv(open_output(s.exp.common.output.as_deref())?)
        }
        Command::EnsembleCompare(c) => {
            let points = c
                .exp
                .run(ONE_SESSION, |data, cfg, opts| ensemble_compare(data, cfg, &c.modes, &c.m_grid, opts))?;
            write_curve_csv(&points, open_output(c.exp.common.output.as_deref())?)
        }
        Command::Continual(a) => {
            let needs = Needs {
                sessions: 2,
                imbalanced: false,
            };
            let table = a.run(needs, continual)?;
            table.write_csv(open_output(a.common.output.as_deref())?)
        }
        Command::Imbalance(a) => {
            let needs = Needs {
                sessions: 1,
                imbalanced: true,
            };
            let table = a.run(needs, imbalance)?;
            table.write_csv(open_output(a.common.output.as_deref())?)
        }
        Command::Bench(a) => bench_cmd(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
