//! JSON experiment configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Dependence, ProcessSet};
use crate::scalar_stats::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Bound,
    Ec,
    Correlated,
    Simulate,
    Moments,
    Euler,
    Pickands,
    ValidateKernel,
    Sweep,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Ec => "ec",
            Command::Correlated => "correlated",
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Euler => "euler",
            Command::Pickands => "pickands",
            Command::ValidateKernel => "validate-kernel",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOverrides {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_subdivisions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PickandsConfig {
    pub c: Vec<f64>,
    #[serde(default = "default_spacings")]
    pub a: Vec<f64>,
}

fn default_spacings() -> Vec<f64> {
    vec![0.05, 0.02, 0.01]
}

/// Optional `(x, y)` plot columns appended to every CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub x: String,
    pub y: String,
}

/// A scalar or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn default_grid_points() -> usize {
    2049
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processes: Option<Dependence<f64>>,
    /// Stationary parameters, as an alternative to `processes` for the
    /// closed-form commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<OneOrMany>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Output>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pickands: Option<PickandsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotConfig>,
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn quadrature_spec(&self) -> Result<QuadratureSpec<f64>> {
        let d = QuadratureSpec::default();
        match self.quadrature {
            None => Ok(d),
            Some(q) => QuadratureSpec::new(
                q.abs_tol.unwrap_or(d.abs_tol),
                q.rel_tol.unwrap_or(d.rel_tol),
                q.max_subdivisions.unwrap_or(d.max_subdivisions),
            ),
        }
    }

    pub fn levels(&self) -> Result<Vec<f64>> {
        let u = self
            .u
            .as_ref()
            .ok_or_else(|| Error::Config("missing `u`".into()))?
            .values();
        if u.is_empty() {
            return Err(Error::Config("`u` list is empty".into()));
        }
        if let Some(x) = u.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite { name: "u", value: *x });
        }
        Ok(u)
    }

    pub fn process_set(&self) -> Result<ProcessSet<f64>> {
        let dependence = self
            .processes
            .clone()
            .ok_or_else(|| Error::Config("missing `processes`".into()))?;
        let ps = ProcessSet {
            horizon: self.horizon,
            dependence,
        };
        ps.validate()?;
        Ok(ps)
    }

    /// Stationary parameters: the `c` field, else `Var(X_i')` of stationary
    /// independent kernels.
    pub fn stationary_c(&self) -> Result<Vec<f64>> {
        if let Some(c) = &self.c {
            return Ok(c.clone());
        }
        match &self.process_set()?.dependence {
            Dependence::Independent { kernels } => kernels
                .iter()
                .map(|k| {
                    k.bound_c()
                        .ok_or_else(|| Error::invalid("kernel is not stationary; give `c` explicitly"))
                })
                .collect(),
            Dependence::CorrelatedPair { .. } => {
                Err(Error::invalid("stationary parameters need independent processes"))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::Config(format!(
                "horizon must be finite and nonnegative, got {}",
                self.horizon
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        if self.processes.is_some() {
            self.process_set()?;
        }
        self.quadrature_spec()?;
        Ok(())
    }
}
