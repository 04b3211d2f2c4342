//! Experiment configuration: a flat TOML file of `key = value` lines.
//!
//! Every key except `maturity` has a default (the standard configuration);
//! unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::params::{ModelParams, TimeGrid};
use crate::pricing::{OptionSpec, Payoff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffKind {
    Call,
    Put,
    Bond,
    Power,
}

/// Initial cash: a number, or `"price"` for `q₀ − H₀S₀` (no initial mismatch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCash {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d::sigma")]
    pub sigma: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::eps")]
    pub eps: f64,

    #[serde(default = "d::payoff")]
    pub payoff: PayoffKind,
    #[serde(default = "d::strike")]
    pub strike: f64,
    #[serde(default = "d::power")]
    pub power: f64,
    pub maturity: f64,

    #[serde(default = "d::s0")]
    pub s0: f64,
    #[serde(default)]
    pub h0: f64,
    #[serde(default = "d::x0")]
    pub x0: InitialCash,

    #[serde(default = "d::n_times")]
    pub n_times: usize,
    #[serde(default = "d::n_spots")]
    pub n_spots: usize,
    #[serde(default = "d::s_min")]
    pub s_min: f64,
    #[serde(default = "d::s_max")]
    pub s_max: f64,
    #[serde(default = "d::time_grading")]
    pub time_grading: f64,

    #[serde(default = "d::tol")]
    pub tol: f64,
    #[serde(default = "d::max_iter")]
    pub max_iter: usize,
    #[serde(default = "d::sweep_max_iter")]
    pub sweep_max_iter: usize,

    #[serde(default = "d::n_paths")]
    pub n_paths: usize,
    #[serde(default = "d::n_steps")]
    pub n_steps: usize,
    #[serde(default = "d::seed")]
    pub seed: u64,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "d::strategy")]
    pub strategy: String,
    #[serde(default = "d::kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub trace: bool,

    #[serde(default = "d::eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default = "d::k")]
    pub k: Vec<u32>,
}

mod d {
    use super::{InitialCash, PayoffKind};
    pub fn sigma() -> f64 {
        0.2
    }
    pub fn gamma() -> f64 {
        -0.25
    }
    pub fn eps() -> f64 {
        0.01
    }
    pub fn payoff() -> PayoffKind {
        PayoffKind::Call
    }
    pub fn strike() -> f64 {
        100.0
    }
    pub fn power() -> f64 {
        2.0
    }
    pub fn s0() -> f64 {
        100.0
    }
    pub fn x0() -> InitialCash {
        InitialCash::Keyword("price".into())
    }
    pub fn n_times() -> usize {
        200
    }
    pub fn n_spots() -> usize {
        200
    }
    pub fn s_min() -> f64 {
        50.0
    }
    pub fn s_max() -> f64 {
        200.0
    }
    pub fn time_grading() -> f64 {
        2.0
    }
    pub fn tol() -> f64 {
        1e-4
    }
    pub fn max_iter() -> usize {
        50
    }
    pub fn sweep_max_iter() -> usize {
        500
    }
    pub fn n_paths() -> usize {
        100_000
    }
    pub fn n_steps() -> usize {
        500
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn strategy() -> String {
        "optimal".into()
    }
    pub fn kappa() -> f64 {
        10.0
    }
    pub fn eps_list() -> Vec<f64> {
        vec![0.1, 0.01, 0.001, 0.0001]
    }
    pub fn k() -> Vec<u32> {
        vec![1, 2]
    }
}

pub const STRATEGIES: &[&str] = &["optimal", "naive", "zero", "delta"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The standard configuration with the given maturity.
    pub fn standard(maturity: f64) -> Self {
        Self::parse(&format!("maturity = {maturity:?}")).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("`{key}`: {msg}")));
        if let Err(e) = ModelParams::new(self.sigma, self.gamma, self.eps) {
            return Err(Error::Config(e.to_string()));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return bad(
                "maturity",
                format!("must be positive, got {}", self.maturity),
            );
        }
        if !(self.strike >= 0.0) {
            return bad(
                "strike",
                format!("must be nonnegative, got {}", self.strike),
            );
        }
        if !(self.power >= 0.0) {
            return bad("power", format!("must be nonnegative, got {}", self.power));
        }
        if !(self.s0 > 0.0) {
            return bad("s0", format!("must be positive, got {}", self.s0));
        }
        if let InitialCash::Keyword(k) = &self.x0 {
            if k != "price" {
                return bad("x0", format!("expected a number or \"price\", got \"{k}\""));
            }
        }
        if !(self.s_min > 0.0 && self.s_max > self.s_min) {
            return bad(
                "s_min",
                format!(
                    "need 0 < s_min < s_max, got [{}, {}]",
                    self.s_min, self.s_max
                ),
            );
        }
        if !(self.s_min <= self.s0 && self.s0 <= self.s_max) {
            return bad(
                "s0",
                format!(
                    "must lie in the spot window [{}, {}]",
                    self.s_min, self.s_max
                ),
            );
        }
        if self.n_spots < 3 {
            return bad("n_spots", "need at least 3".into());
        }
        if self.n_times < 2 {
            return bad("n_times", "need at least 2".into());
        }
        if !(self.time_grading >= 1.0) {
            return bad(
                "time_grading",
                format!("must be ≥ 1, got {}", self.time_grading),
            );
        }
        if !(self.tol >= 0.0) {
            return bad("tol", format!("must be nonnegative, got {}", self.tol));
        }
        if self.n_paths < 2 {
            return bad("n_paths", "need at least 2".into());
        }
        if self.n_steps < 1 {
            return bad("n_steps", "need at least 1".into());
        }
        if !STRATEGIES.contains(&self.strategy.as_str()) {
            return bad(
                "strategy",
                format!("expected one of {STRATEGIES:?}, got \"{}\"", self.strategy),
            );
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps_list", "needs positive values".into());
        }
        if self.k.is_empty() {
            return bad("k", "needs at least one exponent".into());
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            sigma: self.sigma,
            gamma: self.gamma,
            eps: self.eps,
        }
    }

    pub fn option(&self) -> Result<OptionSpec> {
        let payoff = match self.payoff {
            PayoffKind::Call => Payoff::Call {
                strike: self.strike,
            },
            PayoffKind::Put => Payoff::Put {
                strike: self.strike,
            },
            PayoffKind::Bond => Payoff::UnitBond,
            PayoffKind::Power => Payoff::Power {
                exponent: self.power,
            },
        };
        OptionSpec::new(payoff, self.maturity)
    }

    /// PDE grid on `[0, maturity] × [s_min, s_max]` with the given resolution.
    pub fn grid_with(&self, n_times: usize, n_spots: usize) -> Result<Arc<Grid2D>> {
        let times = TimeGrid::graded(0.0, self.maturity, n_times, self.time_grading)?;
        Ok(Arc::new(Grid2D::log_spaced(
            times, self.s_min, self.s_max, n_spots,
        )?))
    }

    pub fn grid(&self) -> Result<Arc<Grid2D>> {
        self.grid_with(self.n_times, self.n_spots)
    }

    /// Uniform rollout grid for Monte-Carlo hedging.
    pub fn rollout_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(0.0, self.maturity, self.n_steps)
    }

    /// `x₀`, resolving `"price"` against the initial option price `q0`.
    pub fn initial_cash(&self, q0: f64) -> f64 {
        match &self.x0 {
            InitialCash::Value(v) => *v,
            InitialCash::Keyword(_) => q0 - self.h0 * self.s0,
        }
    }
}
