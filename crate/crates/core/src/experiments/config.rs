//! Experiment configuration: built-in presets overridden by a TOML file.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::LqBenchmark;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::nuisance::Family;
use crate::optimizer::{AscentConfig, ParamBox, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mse,
    Robustness,
    Regret,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Mse => "mse",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::Regret => "regret",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mse" => Ok(ExperimentKind::Mse),
            "robustness" => Ok(ExperimentKind::Robustness),
            "regret" => Ok(ExperimentKind::Regret),
            other => Err(Error::Config(format!("unknown experiment kind `{other}`"))),
        }
    }
}

/// Full-size settings or a quick desk-scale version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    #[default]
    Ci,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper" => Ok(Preset::Paper),
            "ci" => Ok(Preset::Ci),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or ci)"))),
        }
    }
}

/// Gradient-ascent settings of the regret experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentSettings {
    pub theta1: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for AscentSettings {
    fn default() -> Self {
        Self {
            theta1: 0.2,
            alpha: 0.15,
            iterations: 40,
            lower: 0.0,
            upper: 2.0,
        }
    }
}

impl AscentSettings {
    pub fn to_config(&self, estimator: EstimatorKind, estimator_config: &EstimatorConfig) -> Result<AscentConfig> {
        let config = AscentConfig {
            theta1: vec![self.theta1],
            schedule: StepSchedule::Constant { alpha: self.alpha },
            iterations: self.iterations,
            bounds: ParamBox::cube(self.lower, self.upper, 1)?,
            estimator,
            estimator_config: estimator_config.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Strictly increasing sample sizes.
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    /// Evaluation point of the gradient experiments.
    pub theta: f64,
    /// Robustness variants; each lists the corrupted families, `[]` for none.
    pub corruptions: Vec<Vec<Family>>,
    pub corruption_scale: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Add wall-clock times to the rows. Timed output is not reproducible.
    pub record_timing: bool,
    /// Fraction of failed rows tolerated before the run counts as failed.
    pub max_failure_fraction: f64,
    /// Regret experiment: also run ascent with the exact gradient.
    pub analytic_arm: bool,
    pub benchmark: LqBenchmark,
    pub estimator: EstimatorConfig,
    pub ascent: AscentSettings,
}

impl ExperimentConfig {
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let (sizes, replications) = match (kind, paper) {
            (ExperimentKind::Mse | ExperimentKind::Robustness, true) => (vec![800, 1600, 3200, 6400], 100),
            (ExperimentKind::Mse, false) => (vec![800, 1600], 30),
            (ExperimentKind::Robustness, false) => (vec![800, 1600, 3200, 6400], 20),
            (ExperimentKind::Regret, true) => (vec![200, 400, 800, 1600], 60),
            (ExperimentKind::Regret, false) => (vec![200, 400, 800, 1600], 10),
        };
        let estimators = match kind {
            ExperimentKind::Mse => vec![EstimatorKind::StepwiseIs, EstimatorKind::Pg, EstimatorKind::Eoppg],
            ExperimentKind::Robustness | ExperimentKind::Regret => vec![EstimatorKind::Eoppg],
        };
        let corruptions = match kind {
            ExperimentKind::Robustness => vec![
                vec![],
                vec![Family::Q, Family::Dq],
                vec![Family::Mu, Family::Dmu],
                vec![Family::Dmu, Family::Dq],
                Family::ALL.to_vec(),
            ],
            _ => vec![],
        };
        Self {
            kind,
            sizes,
            replications,
            estimators,
            theta: 1.0,
            corruptions,
            corruption_scale: 1.0,
            seed: 20_200_206,
            out: None,
            workers: 0,
            record_timing: false,
            max_failure_fraction: 0.05,
            analytic_arm: kind == ExperimentKind::Regret,
            benchmark: LqBenchmark::with_horizon(if paper { 50 } else { 20 }),
            estimator: EstimatorConfig::default(),
            ascent: AscentSettings::default(),
        }
    }

    /// Start from `preset` (or the file's own `preset` key) and apply the
    /// keys of the TOML document on top. A `kind` in the file must agree
    /// with `kind` when both are given.
    pub fn from_toml_str(text: &str, kind: Option<ExperimentKind>, preset: Option<Preset>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let file_preset = match table.remove("preset") {
            Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(other) => return Err(Error::Config(format!("`preset` must be a string, got {other}"))),
            None => None,
        };
        let file_kind = match table.get("kind") {
            Some(toml::Value::String(s)) => Some(s.parse::<ExperimentKind>()?),
            Some(other) => return Err(Error::Config(format!("`kind` must be a string, got {other}"))),
            None => None,
        };
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config is for `{b}` but `{a}` was requested")));
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::Config("experiment kind not given".into())),
        };
        let base = Self::preset(kind, preset.or(file_preset).unwrap_or_default());
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, table);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, kind: Option<ExperimentKind>, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, kind, preset)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return fail("sizes must be a nonempty list of positive integers".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("sizes must be strictly increasing, got {:?}", self.sizes));
        }
        if self.estimators.is_empty() && !(self.kind == ExperimentKind::Regret && self.analytic_arm) {
            return fail("no estimators selected".into());
        }
        if self.kind == ExperimentKind::Robustness {
            if self.corruptions.is_empty() {
                return fail("robustness needs at least one corruption variant".into());
            }
            if !(self.corruption_scale >= 0.0 && self.corruption_scale.is_finite()) {
                return fail("corruption_scale must be finite and nonnegative".into());
            }
        }
        if !self.theta.is_finite() {
            return fail("theta must be finite".into());
        }
        let b = &self.benchmark;
        if b.horizon == 0 || !(b.sigma > 0.0 && b.sigma.is_finite()) || !b.behavior_coef.is_finite() {
            return fail(format!("invalid benchmark {b:?}"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return fail("max_failure_fraction must lie in [0, 1]".into());
        }
        if self.estimator.folds < 2 {
            return fail("estimator.folds must be at least 2".into());
        }
        if self.kind == ExperimentKind::Regret {
            self.ascent
                .to_config(EstimatorKind::Eoppg, &self.estimator)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Recursive table merge: tables merge key-wise, anything else replaces.
fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
