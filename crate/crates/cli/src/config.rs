//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "cubic-tail"
//! kind = "tail_x"
//! epsilon = [0.05]
//! alpha = [1.5]
//! n_paths = 200000
//! master_seed = 2
//!
//! [model]
//! q_minus = -0.5
//! q_plus = 0.5
//! drift = { kind = "cubic" }
//! ```

use std::path::Path;

use exittails::sde_sim::YBackend;
use exittails::{DriftSpec, SigmaSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TailX,
    TailY,
    LinearTail,
    Equidist,
    Coupling,
    ConditionalLaw,
    Predict,
    Linearize,
    Validate,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::TailX => "tail_x",
            ExperimentKind::TailY => "tail_y",
            ExperimentKind::LinearTail => "linear_tail",
            ExperimentKind::Equidist => "equidist",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::ConditionalLaw => "conditional_law",
            ExperimentKind::Predict => "predict",
            ExperimentKind::Linearize => "linearize",
            ExperimentKind::Validate => "validate",
        }
    }

    /// Kinds that produce tail estimates joinable by `report`.
    pub fn is_tail(self) -> bool {
        matches!(self, ExperimentKind::TailX | ExperimentKind::TailY | ExperimentKind::LinearTail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: DriftSpec,
    #[serde(default)]
    pub sigma: SigmaSpec,
    pub q_minus: f64,
    pub q_plus: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { drift: DriftSpec::Cubic, sigma: SigmaSpec::default(), q_minus: -0.5, q_plus: 0.5 }
    }
}

impl ModelConfig {
    pub fn build(&self) -> exittails::Result<exittails::Model> {
        exittails::Model::from_spec(&self.drift, &self.sigma, self.q_minus, self.q_plus)
    }
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}
fn default_beta() -> f64 {
    0.75
}
fn default_beta_prime() -> f64 {
    0.6
}
fn default_dt() -> f64 {
    1e-3
}
fn default_parallelism() -> usize {
    1
}
fn default_bins() -> usize {
    10
}
fn default_delta() -> f64 {
    0.1
}
fn default_tolerance() -> f64 {
    0.2
}
fn default_ks_slack() -> f64 {
    0.5
}
fn default_coupling_l() -> f64 {
    1.0
}
fn default_grid_points() -> usize {
    exittails::linearizer::DEFAULT_GRID_POINTS
}
fn default_n_paths() -> u64 {
    1
}

/// One experiment. Starting points are in units of `eps`: the full process
/// starts at `eps * x0`, the linearized one at `eps * y0` and the linear
/// process at `eps * z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// time shifts `t` for the full interval
    #[serde(default = "zero_list")]
    pub t: Vec<f64>,
    /// time shifts `C` for the neighbourhood and linear tails
    #[serde(default = "zero_list", rename = "C")]
    pub c: Vec<f64>,
    /// `c(eps)`; `1/log(1/eps)` when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_eps: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_beta_prime")]
    pub beta_prime: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub delta_eps: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub backend: YBackend,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// `L` in the coupling horizon `((alpha - beta)/lambda) log(L/eps)`
    #[serde(default = "default_coupling_l")]
    pub coupling_l: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// relative tolerance of the estimate-vs-theory check and of the
    /// fitted overshoot rate
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// relative allowance on the 5% KS critical value for finite-eps bias
    #[serde(default = "default_ks_slack")]
    pub ks_slack: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Domain checks that do not need a built model.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty file-name-safe string"));
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(invalid("epsilon", format!("{e} is not in (0, 1)")));
        }
        if let Some(a) = self.alpha.iter().find(|a| !a.is_finite()) {
            return Err(invalid("alpha", format!("{a} is not finite")));
        }
        if self.t.iter().chain(&self.c).any(|v| !v.is_finite()) {
            return Err(invalid("t", "shifts must be finite"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("beta", format!("{} is not in (0, 1)", self.beta)));
        }
        if !(self.beta_prime > 0.0 && self.beta_prime < self.beta) {
            return Err(invalid("beta_prime", format!("{} is not in (0, beta)", self.beta_prime)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must be in (0, 1)"));
        }
        if self.bins == 0 {
            return Err(invalid("bins", "must be at least 1"));
        }
        if !(self.delta_eps >= 0.0) {
            return Err(invalid("delta_eps", "must be nonnegative"));
        }
        if !(self.coupling_l > 0.0) {
            return Err(invalid("coupling_l", "must be positive"));
        }
        if !(self.ks_slack >= 0.0) {
            return Err(invalid("ks_slack", "must be nonnegative"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance", "must be nonnegative"));
        }
        if !(self.model.q_minus < 0.0 && self.model.q_plus > 0.0) {
            return Err(invalid("model", "need q_minus < 0 < q_plus"));
        }
        let needs_eps = !matches!(self.kind, ExperimentKind::Linearize | ExperimentKind::Validate);
        if needs_eps && self.epsilon.is_empty() {
            return Err(invalid("epsilon", format!("kind {} needs at least one value", self.kind.as_str())));
        }
        let needs_alpha = needs_eps;
        if needs_alpha && self.alpha.is_empty() {
            return Err(invalid("alpha", format!("kind {} needs at least one value", self.kind.as_str())));
        }
        let simulates = matches!(
            self.kind,
            ExperimentKind::TailX
                | ExperimentKind::TailY
                | ExperimentKind::LinearTail
                | ExperimentKind::Equidist
                | ExperimentKind::Coupling
                | ExperimentKind::ConditionalLaw
        );
        if simulates && self.n_paths == 0 {
            return Err(invalid("n_paths", "must be at least 1"));
        }
        if self.kind == ExperimentKind::LinearTail || self.kind == ExperimentKind::Equidist {
            let lam = self.model.drift.declared_lambda();
            if self.dt > 1e-2 / lam * (1.0 + 1e-12) {
                return Err(invalid("dt", format!("exact sampler needs dt <= 1e-2/lambda = {}", 1e-2 / lam)));
            }
        }
        if self.grid_points < 257 {
            return Err(invalid("grid_points", "must be at least 257"));
        }
        Ok(())
    }
}
