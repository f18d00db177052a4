//! Experiment configuration: a TOML document merged over built-in defaults,
//! then patched by `--override key=value` pairs.

use std::path::{Path, PathBuf};

use incentive_core::{AccuracyModel, CurveKind, GridSpec, MechanismSpec, Population, TwoTypePrior};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub accuracy: CurveKind,
    pub population: PopulationConfig,
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub two_type: TwoTypeConfig,
    pub oracle: OracleConfig,
    pub verify: VerifyConfig,
}

/// Who takes part. `costs` wins over `cost_range`, which wins over `cost`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n: usize,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
    /// Log-uniform cost draws in `[low, high]`, seeded by the top-level seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// Every field is optional; each subcommand fills in its own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    /// Second axis: curve complexities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTypeConfig {
    pub c_low: f64,
    pub c_high: f64,
    pub p: f64,
    pub n: usize,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub points: usize,
    pub passes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adversary {
    None,
    /// Pooled accuracy plus a constant (infeasible).
    Inflated,
    /// Scaled-down stand-alone accuracy (not IR).
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random (model, population, profile) draws per property check.
    pub instances: usize,
    pub adversarial: Adversary,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: DEFAULT_SEED,
            output: None,
            accuracy: CurveKind::FullBound {
                a_opt: 0.95,
                k: 1.0,
            },
            population: PopulationConfig {
                n: 10_000,
                cost: 0.1,
                costs: None,
                cost_range: None,
            },
            mechanism: MechanismSpec::shaping(),
            sweep: SweepConfig::default(),
            two_type: TwoTypeConfig {
                c_low: 0.0005,
                c_high: 0.001,
                p: 0.5,
                n: 4,
                draws: 200,
            },
            oracle: OracleConfig {
                points: 10_000,
                passes: 2,
            },
            verify: VerifyConfig {
                instances: 200,
                adversarial: Adversary::None,
            },
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let file = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        Self::build(file, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let file = text
            .parse::<Table>()
            .map_err(|e| CliError::Validation(format!("config: {e}")))?;
        Self::build(file, overrides)
    }

    fn build(file: Table, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = Table::try_from(ExperimentConfig::default())
            .map_err(|e| CliError::Validation(format!("default config: {e}")))?;
        merge(&mut table, file);
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn model(&self) -> Result<AccuracyModel, CliError> {
        Ok(AccuracyModel::new(self.accuracy)?)
    }

    /// The configured curve with its complexity replaced by `k`.
    pub fn model_with_k(&self, k: f64) -> Result<AccuracyModel, CliError> {
        let kind = match self.accuracy {
            CurveKind::SimpleBound { a_opt, .. } => CurveKind::SimpleBound { a_opt, k },
            CurveKind::FullBound { a_opt, .. } => CurveKind::FullBound { a_opt, k },
            CurveKind::PowerLaw { .. } => {
                return Err(CliError::Validation(
                    "a k axis needs accuracy.kind = \"simple\" or \"full\"".into(),
                ))
            }
        };
        Ok(AccuracyModel::new(kind)?)
    }

    /// The configured complexity, if the curve has one.
    pub fn k(&self) -> Option<f64> {
        match self.accuracy {
            CurveKind::SimpleBound { k, .. } | CurveKind::FullBound { k, .. } => Some(k),
            CurveKind::PowerLaw { .. } => None,
        }
    }

    pub fn a_opt(&self) -> f64 {
        match self.accuracy {
            CurveKind::SimpleBound { a_opt, .. } | CurveKind::FullBound { a_opt, .. } => a_opt,
            CurveKind::PowerLaw { tau, .. } => 1.0 - tau,
        }
    }

    pub fn population(&self) -> Result<Population, CliError> {
        let pc = &self.population;
        let pop = if let Some(costs) = &pc.costs {
            Population::new(costs)?
        } else if let Some([lo, hi]) = pc.cost_range {
            Population::log_uniform(lo, hi, pc.n, self.seed)?
        } else {
            Population::uniform(pc.cost, pc.n)?
        };
        Ok(pop)
    }

    pub fn prior(&self) -> Result<TwoTypePrior, CliError> {
        let t = &self.two_type;
        Ok(TwoTypePrior::uniform(t.c_low, t.c_high, t.p, t.n)?)
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        Ok(GridSpec::new(self.oracle.points, self.oracle.passes)?)
    }

    /// Epsilon of the configured mechanism, or the library default.
    pub fn epsilon(&self) -> f64 {
        self.mechanism
            .epsilon()
            .unwrap_or(incentive_core::mechanisms::DEFAULT_EPSILON)
    }
}

impl SweepConfig {
    /// Sweep values after filling unset fields from `default`.
    pub fn resolve(&self, default: &SweepConfig) -> Result<(String, Vec<f64>), CliError> {
        let param = self
            .param
            .clone()
            .or_else(|| default.param.clone())
            .unwrap_or_default();
        let pick = |own: Option<f64>, fallback: Option<f64>, name: &str| {
            own.or(fallback)
                .ok_or_else(|| CliError::Validation(format!("sweep.{name} is required")))
        };
        let from = pick(self.from, default.from, "from")?;
        let to = pick(self.to, default.to, "to")?;
        let points = self.points.or(default.points).unwrap_or(0);
        let scale = self.scale.or(default.scale).unwrap_or(Scale::Log);
        Ok((param, spaced(from, to, points, scale)?))
    }

    pub fn ks(&self, default: &[f64]) -> Vec<f64> {
        self.ks.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// `points` values from `from` to `to` inclusive.
pub fn spaced(from: f64, to: f64, points: usize, scale: Scale) -> Result<Vec<f64>, CliError> {
    if points == 0 || !from.is_finite() || !to.is_finite() || from > to {
        return Err(CliError::Validation(format!(
            "sweep range [{from}, {to}] with {points} points is empty"
        )));
    }
    if scale == Scale::Log && from <= 0.0 {
        return Err(CliError::Validation("log sweep needs from > 0".into()));
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    let last = (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            let t = i as f64 / last;
            match scale {
                Scale::Linear => from + t * (to - from),
                Scale::Log => (from.ln() + t * (to.ln() - from.ln())).exp(),
            }
        })
        .collect())
}

fn merge(base: &mut Table, patch: Table) {
    for (key, value) in patch {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Sets a dotted key; the value is read as a TOML literal, else as a string.
fn apply_override(table: &mut Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{item}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for part in path {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Validation(format!("override `{key}`: `{part}` is not a section"))
        })?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
