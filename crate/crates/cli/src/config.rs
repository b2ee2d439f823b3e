//! Run configuration JSON and flag/config/default resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ambiweight::data::{AugmentConfig, SynthConfig};
use ambiweight::models::ModelConfig;
use ambiweight::weighting::ModifierConfig;

use crate::CliError;

/// Every section is optional; missing values fall back to flags or
/// defaults. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: Option<SynthConfig>,
    pub augment: Option<AugmentConfig>,
    /// Modifier for `train`; absent means the baseline weighting.
    pub modifier: Option<ModifierConfig>,
    pub model: Option<ModelConfig>,
    pub hyper: Hyper,
    pub sweep: SweepSection,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub eval_batch_size: Option<usize>,
    /// Train, validation and test fractions.
    pub split: Option<(f64, f64, f64)>,
    /// Drop contradictory manifest rows instead of rejecting the manifest.
    pub lenient: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid: Option<Vec<f64>>,
    /// Number of seeds; arm seeds are `seed, seed + 1, ...`.
    pub seeds: Option<usize>,
    pub sigma: Option<f64>,
    pub include_unweighted: Option<bool>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Checks each present section with field-level messages.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| CliError::Config(format!("synth: {e}")))?;
        }
        if let Some(a) = &self.augment {
            a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(m) = &self.modifier {
            m.validate().map_err(|e| CliError::Config(format!("modifier: {e}")))?;
        }
        let h = &self.hyper;
        for (name, v) in [
            ("hyper.epochs", h.epochs),
            ("hyper.batch_size", h.batch_size),
            ("hyper.eval_batch_size", h.eval_batch_size),
            ("sweep.seeds", self.sweep.seeds),
            ("sweep.jobs", self.sweep.jobs),
        ] {
            if v == Some(0) {
                return Err(CliError::Config(format!(
                    "invalid config field `{name}`: must be positive"
                )));
            }
        }
        if let Some(lr) = h.lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(CliError::Config(format!("invalid config field `hyper.lr`: {lr}")));
            }
        }
        if let Some(grid) = &self.sweep.grid {
            if let Some(mu) = grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
                return Err(CliError::Config(format!(
                    "invalid config field `sweep.grid`: {mu} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    Config,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Config => "config",
            Source::Default => "default",
        })
    }
}

/// Resolved settings in the order they were looked up, for the startup
/// printout.
#[derive(Debug, Default)]
pub struct Settings {
    entries: Vec<(String, String, Source)>,
}

impl Settings {
    /// `flag > config > default`.
    pub fn pick<T: fmt::Debug>(&mut self, name: &str, flag: Option<T>, config: Option<T>, default: T) -> T {
        let (v, src) = match (flag, config) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(v)) => (v, Source::Config),
            (None, None) => (default, Source::Default),
        };
        self.record(name, &v, src);
        v
    }

    pub fn record<T: fmt::Debug>(&mut self, name: &str, value: &T, source: Source) {
        self.entries.push((name.to_string(), format!("{value:?}"), source));
    }

    pub fn source(&self, name: &str) -> Option<Source> {
        self.entries.iter().find(|(n, _, _)| n == name).map(|e| e.2)
    }

    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|e| e.0.len()).max().unwrap_or(0);
        self.entries
            .iter()
            .map(|(n, v, s)| format!("setting {n:<width$} = {v} ({s})\n"))
            .collect()
    }
}
