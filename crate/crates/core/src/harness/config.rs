//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys, and malformed values are errors.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use crate::alignment::EigenFloor;
use crate::engine::{SourceConfig, TtaConfig};
use crate::error::{Error, Result};
use crate::harness::synth::SynthSpec;

/// Everything an experiment driver needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tta: TtaConfig,
    pub source: SourceConfig,
    pub synth: SynthSpec,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tta: TtaConfig::default(),
            source: SourceConfig::default(),
            synth: SynthSpec::default(),
            repeats: 1,
        }
    }
}

/// Documented keys, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "M",
    "B",
    "temperature",
    "tau",
    "c",
    "lr",
    "ensemble",
    "sml_recompute_interval",
    "cem",
    "mdr",
    "temperature_scaling",
    "recalibrate",
    "exact_sml",
    "eig_floor",
    "seed",
    "featurizer",
    "arch",
    "epochs",
    "batch_size",
    "source_lr",
    "standardize",
    "repeats",
    "n_subjects",
    "source_trials",
    "target_trials",
    "target_sessions",
    "channels",
    "samples",
    "n_classes",
    "shift",
    "gain_spread",
    "class_gain",
    "class_gain_spread",
    "jitter",
    "noise",
    "imbalance_ratio",
    "drift",
    "synth_seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for key '{key}'"))),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, s, y) = (&mut self.tta, &mut self.source, &mut self.synth);
        match key {
            "M" => t.n_models = parse(key, value)?,
            "B" => t.window = parse(key, value)?,
            "temperature" => t.temperature = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "c" => t.c = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "ensemble" => t.ensemble = value.parse()?,
            "sml_recompute_interval" => t.sml_recompute_interval = parse(key, value)?,
            "cem" => t.toggles.cem = parse_bool(key, value)?,
            "mdr" => t.toggles.mdr = parse_bool(key, value)?,
            "temperature_scaling" => t.toggles.temperature = parse_bool(key, value)?,
            "recalibrate" => t.toggles.recalibrate = parse_bool(key, value)?,
            "exact_sml" => t.exact_sml = parse_bool(key, value)?,
            "eig_floor" => {
                t.floor = match value.split_once(':') {
                    Some(("relative", v)) => EigenFloor::Relative(parse(key, v)?),
                    Some(("absolute", v)) => EigenFloor::Absolute(parse(key, v)?),
                    _ => {
                        return Err(Error::Config(format!(
                            "eig_floor must be relative:<x> or absolute:<x>, got '{value}'"
                        )))
                    }
                }
            }
            "seed" => t.seed = parse(key, value)?,
            "featurizer" => s.featurizer = value.parse()?,
            "arch" => s.arch = value.parse()?,
            "epochs" => s.epochs = parse(key, value)?,
            "batch_size" => s.batch_size = parse(key, value)?,
            "source_lr" => s.lr = parse(key, value)?,
            "standardize" => s.standardize = parse_bool(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "n_subjects" => y.n_subjects = parse(key, value)?,
            "source_trials" => y.source_trials = parse(key, value)?,
            "target_trials" => y.target_trials = parse(key, value)?,
            "target_sessions" => y.target_sessions = parse(key, value)?,
            "channels" => y.channels = parse(key, value)?,
            "samples" => y.samples = parse(key, value)?,
            "n_classes" => y.n_classes = parse(key, value)?,
            "shift" => y.shift = parse(key, value)?,
            "gain_spread" => y.gain_spread = parse(key, value)?,
            "class_gain" => y.class_gain = parse(key, value)?,
            "class_gain_spread" => y.class_gain_spread = parse(key, value)?,
            "jitter" => y.jitter = parse(key, value)?,
            "noise" => y.noise = parse(key, value)?,
            "imbalance_ratio" => y.imbalance_ratio = parse(key, value)?,
            "drift" => y.drift = parse(key, value)?,
            "synth_seed" => y.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let (t, s, y) = (&self.tta, &self.source, &self.synth);
        Ok(match key {
            "M" => t.n_models.to_string(),
            "B" => t.window.to_string(),
            "temperature" => t.temperature.to_string(),
            "tau" => t.tau.to_string(),
            "c" => t.c.to_string(),
            "lr" => t.lr.to_string(),
            "ensemble" => t.ensemble.name().to_string(),
            "sml_recompute_interval" => t.sml_recompute_interval.to_string(),
            "cem" => t.toggles.cem.to_string(),
            "mdr" => t.toggles.mdr.to_string(),
            "temperature_scaling" => t.toggles.temperature.to_string(),
            "recalibrate" => t.toggles.recalibrate.to_string(),
            "exact_sml" => t.exact_sml.to_string(),
            "eig_floor" => match t.floor {
                EigenFloor::Relative(v) => format!("relative:{v}"),
                EigenFloor::Absolute(v) => format!("absolute:{v}"),
            },
            "seed" => t.seed.to_string(),
            "featurizer" => s.featurizer.name().to_string(),
            "arch" => s.arch.name(),
            "epochs" => s.epochs.to_string(),
            "batch_size" => s.batch_size.to_string(),
            "source_lr" => s.lr.to_string(),
            "standardize" => s.standardize.to_string(),
            "repeats" => self.repeats.to_string(),
            "n_subjects" => y.n_subjects.to_string(),
            "source_trials" => y.source_trials.to_string(),
            "target_trials" => y.target_trials.to_string(),
            "target_sessions" => y.target_sessions.to_string(),
            "channels" => y.channels.to_string(),
            "samples" => y.samples.to_string(),
            "n_classes" => y.n_classes.to_string(),
            "shift" => y.shift.to_string(),
            "gain_spread" => y.gain_spread.to_string(),
            "class_gain" => y.class_gain.to_string(),
            "class_gain_spread" => y.class_gain_spread.to_string(),
            "jitter" => y.jitter.to_string(),
            "noise" => y.noise.to_string(),
            "imbalance_ratio" => y.imbalance_ratio.to_string(),
            "drift" => y.drift.to_string(),
            "synth_seed" => y.seed.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        })
    }

    /// Applies every line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.tta.validate()?;
        self.synth.validate()?;
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.source.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Every documented key with its current value.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("documented key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Architecture, Featurizer};
    use crate::ensemble::EnsembleMode;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse_text(
            "# comment\nM = 3\n\nensemble=vote\narch = linear\nfeaturizer = cov\nmdr = off\nimbalance_ratio = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.tta.n_models, 3);
        assert_eq!(cfg.tta.ensemble, EnsembleMode::Vote);
        assert_eq!(cfg.source.arch, Architecture::Linear);
        assert_eq!(cfg.source.featurizer, Featurizer::CovarianceFlatten);
        assert!(!cfg.tta.toggles.mdr);
        assert_eq!(cfg.synth.imbalance_ratio, 2.0);
    }

    #[test]
    fn unknown_duplicate_and_invalid_are_errors() {
        for text in ["bogus = 1", "M = 2\nM = 3", "M", "tau = 1.5", "M = x", "cem = maybe"] {
            assert!(
                matches!(ExperimentConfig::parse_text(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("tau", "0.65").unwrap();
        cfg.set("eig_floor", "absolute:1e-9").unwrap();
        cfg.set("arch", "mlp16").unwrap();
        let back = ExperimentConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
