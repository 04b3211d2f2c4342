use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |γ| the model is treated as geometric Brownian motion.
pub const GAMMA_ZERO_TOL: f64 = 1e-8;

/// CEV volatility scale σ, elasticity γ and illiquidity scale ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, gamma: f64, eps: f64) -> Result<Self> {
        let p = Self { sigma, gamma, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(-0.5..=0.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in [-1/2, 0], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn is_lognormal(&self) -> bool {
        self.gamma.abs() < GAMMA_ZERO_TOL
    }

    /// Local variance σ² S^{2+2γ}.
    #[inline]
    pub fn local_variance(&self, s: f64) -> f64 {
        self.sigma * self.sigma * s.powf(2.0 + 2.0 * self.gamma)
    }

    /// Diffusion coefficient σ S^{1+γ}.
    #[inline]
    pub fn diffusion(&self, s: f64) -> f64 {
        self.sigma * s.powf(1.0 + self.gamma)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// Strictly increasing time nodes from `t0` to maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t0: f64, maturity: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidInput(
                "time grid needs at least one step".into(),
            ));
        }
        if !(maturity > t0) {
            return Err(Error::InvalidInput(format!(
                "maturity {maturity} must exceed start time {t0}"
            )));
        }
        let dt = (maturity - t0) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|i| t0 + i as f64 * dt).collect();
        nodes[n_steps] = maturity;
        Ok(Self { nodes })
    }

    /// Nodes `T - (T - t0)(1 - i/n)^power`; `power > 1` refines towards maturity.
    pub fn graded(t0: f64, maturity: f64, n_steps: usize, power: f64) -> Result<Self> {
        if !(power >= 1.0 && power.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grading power must be ≥ 1, got {power}"
            )));
        }
        let mut g = Self::uniform(t0, maturity, n_steps)?;
        let span = maturity - t0;
        for (i, t) in g.nodes.iter_mut().enumerate() {
            let u = 1.0 - i as f64 / n_steps as f64;
            *t = maturity - span * u.powf(power);
        }
        g.nodes[0] = t0;
        g.nodes[n_steps] = maturity;
        Ok(g)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput(
                "time grid needs at least two nodes".into(),
            ));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "time nodes must be strictly increasing".into(),
            ));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn maturity(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Index `i` with `nodes[i] ≤ t ≤ nodes[i+1]` and the fractional position in that cell.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.nodes.len();
        if t <= self.nodes[0] {
            return (0, 0.0);
        }
        if t >= self.nodes[n - 1] {
            return (n - 2, 1.0);
        }
        let i = self.nodes.partition_point(|&x| x <= t) - 1;
        let i = i.min(n - 2);
        let frac = (t - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (i, frac)
    }
}
