//! CEV dynamics `dS = σ S^{1+γ} dW` with an absorbing origin.
//!
//! For γ < 0 the transform `W = S^{-2γ} / (γ² σ² τ)` turns `S_{t+τ}` into a killed
//! squared Bessel variable: on survival `W` has density
//! `ncx2(W; 2 - 1/γ, λ) · (λ/W)^{-1/(2γ)}` with `λ = S_t^{-2γ} / (γ² σ² τ)`,
//! and the origin is reached by time τ with probability `Q(-1/(2γ), λ/2)`
//! (upper regularized incomplete gamma). For |γ| below
//! [`GAMMA_ZERO_TOL`](crate::params::GAMMA_ZERO_TOL) the lognormal law is used.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::ncx2::NoncentralChiSq;
use crate::params::{ModelParams, TimeGrid};
use crate::rng::path_rng;
use crate::special::{norm_cdf, GaussLegendre};

/// Spot values along one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub spots: Vec<f64>,
    /// First node at which the spot hit zero.
    pub absorbed_at: Option<usize>,
}

/// A batch of paths sharing one time grid.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub grid: TimeGrid,
    pub paths: Vec<SamplePath>,
}

impl PathSet {
    pub fn terminal_spots(&self) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| *p.spots.last().unwrap())
            .collect()
    }
}

/// One Euler–Maruyama step; returns 0 once the step would leave `(0, ∞)`.
#[inline]
pub fn euler_step(params: &ModelParams, s: f64, dt: f64, z: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let next = s + params.diffusion(s) * dt.sqrt() * z;
    if next > 0.0 {
        next
    } else {
        0.0
    }
}

/// Euler path driven by `rng`; the same draws are used by the hedging engine.
pub fn euler_path<R: Rng + ?Sized>(
    params: &ModelParams,
    s0: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> SamplePath {
    let n = grid.n_steps();
    let mut spots = Vec::with_capacity(n + 1);
    spots.push(s0);
    let mut absorbed_at = None;
    let mut s = s0;
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        s = euler_step(params, s, grid.dt(i), z);
        if s == 0.0 && absorbed_at.is_none() {
            absorbed_at = Some(i + 1);
        }
        spots.push(s);
    }
    SamplePath { spots, absorbed_at }
}

/// Euler–Maruyama paths with absorption at zero; path `i` uses stream `(seed, i)`.
pub fn simulate_paths(
    params: &ModelParams,
    s0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial spot must be positive, got {s0}"
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    if grid.n_steps() == 0 {
        return Err(Error::InvalidInput("empty time grid".into()));
    }
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            euler_path(params, s0, grid, &mut rng)
        })
        .collect();
    Ok(PathSet {
        grid: grid.clone(),
        paths,
    })
}

#[derive(Debug, Clone, Copy)]
enum Law {
    Lognormal {
        /// total variance σ²τ
        var: f64,
    },
    Cev {
        /// δ = -2γ
        delta: f64,
        /// c = γ² σ² τ, so that W = S^δ / c
        scale: f64,
        lambda: f64,
    },
    Degenerate,
}

/// Law of `S_{t+τ}` given `S_t = s_t`.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    s_t: f64,
    law: Law,
}

impl Transition {
    pub fn new(params: &ModelParams, s_t: f64, dt: f64) -> Result<Self> {
        if !(s_t > 0.0 && s_t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "spot must be positive, got {s_t}"
            )));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "duration must be nonnegative, got {dt}"
            )));
        }
        params.validate()?;
        let law = if dt == 0.0 {
            Law::Degenerate
        } else if params.is_lognormal() {
            Law::Lognormal {
                var: params.sigma * params.sigma * dt,
            }
        } else {
            let delta = -2.0 * params.gamma;
            let scale = params.gamma * params.gamma * params.sigma * params.sigma * dt;
            Law::Cev {
                delta,
                scale,
                lambda: s_t.powf(delta) / scale,
            }
        };
        Ok(Self { s_t, law })
    }

    pub fn spot(&self) -> f64 {
        self.s_t
    }

    /// Probability that the path has been absorbed at zero.
    pub fn absorption_probability(&self) -> f64 {
        match self.law {
            Law::Cev { delta, lambda, .. } => gamma_ur(1.0 / delta, 0.5 * lambda),
            _ => 0.0,
        }
    }

    /// Law of `W = S^δ/c` on survival is `surviving_w_density`; these are its ingredients.
    fn cev_mixture(delta: f64, lambda: f64) -> NoncentralChiSq {
        NoncentralChiSq::new(2.0 + 2.0 / delta, lambda).expect("valid ncx2 parameters")
    }

    /// Density of the continuous part at `s_u > 0`, per unit spot.
    pub fn density(&self, s_u: f64) -> Result<f64> {
        if !(s_u > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density argument must be positive, got {s_u}"
            )));
        }
        Ok(self.ln_density(s_u).exp())
    }

    pub fn ln_density(&self, s_u: f64) -> f64 {
        match self.law {
            Law::Degenerate => {
                if s_u == self.s_t {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
            Law::Lognormal { var } => {
                let sd = var.sqrt();
                let z = ((s_u / self.s_t).ln() + 0.5 * var) / sd;
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - (s_u * sd).ln()
            }
            Law::Cev {
                delta,
                scale,
                lambda,
            } => {
                // f(s) = ncx2(w) · (s_t/s) · δ w / s   with w = s^δ / c
                let w = s_u.powf(delta) / scale;
                let chi = Self::cev_mixture(delta, lambda);
                chi.ln_pdf(w) + (self.s_t / s_u).ln() + delta.ln() + w.ln() - s_u.ln()
            }
        }
    }

    /// `P(S_{t+τ} ≤ s)`, absorption atom included.
    pub fn cdf(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Ok(0.0);
        }
        match self.law {
            Law::Degenerate => Ok(if s >= self.s_t { 1.0 } else { 0.0 }),
            Law::Lognormal { var } => {
                if s == 0.0 {
                    return Ok(0.0);
                }
                let sd = var.sqrt();
                Ok(norm_cdf(((s / self.s_t).ln() + 0.5 * var) / sd))
            }
            Law::Cev {
                delta,
                scale,
                lambda,
            } => {
                // P(S ≤ s) = 1 - P(χ'²(2/δ, ncp = s^δ/c) ≤ λ)
                let w = s.powf(delta) / scale;
                let dual = NoncentralChiSq::new(2.0 / delta, w)?;
                Ok(dual.sf(lambda)?)
            }
        }
    }

    /// `E[S_{t+τ}^p]` for `p ≥ 0`; the absorbed mass contributes `0^p`.
    pub fn power_moment(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!(
                "spot moment of order {p} is infinite once the origin carries mass"
            )));
        }
        if p == 0.0 {
            return Ok(1.0);
        }
        match self.law {
            Law::Degenerate => Ok(self.s_t.powf(p)),
            Law::Lognormal { var } => Ok(self.s_t.powf(p) * (0.5 * p * (p - 1.0) * var).exp()),
            Law::Cev {
                delta,
                scale,
                lambda,
            } => {
                // E[S^p; alive] = s_t · c^r · E[W^r] under ncx2(2+2/δ, λ), r = (p-1)/δ
                let r = (p - 1.0) / delta;
                let chi = Self::cev_mixture(delta, lambda);
                let rounded = r.round();
                let ln_mom = if (r - rounded).abs() < 1e-12 && (0.0..=32.0).contains(&rounded) {
                    chi.moment(rounded as u32).ln()
                } else {
                    match chi.ln_fractional_moment(r) {
                        Ok(v) => v,
                        Err(Error::Numerical(_)) => {
                            self.fractional_moment_by_quadrature(&chi, r)?.ln()
                        }
                        Err(e) => return Err(e),
                    }
                };
                Ok((self.s_t.ln() + r * scale.ln() + ln_mom).exp())
            }
        }
    }

    fn fractional_moment_by_quadrature(&self, chi: &NoncentralChiSq, r: f64) -> Result<f64> {
        let m = chi.mean();
        let sd = chi.variance().sqrt();
        let lo = (m - 40.0 * sd).max(0.0);
        let hi = m + 40.0 * sd;
        let v = GaussLegendre::standard().integrate(
            |w| {
                if w > 0.0 {
                    (r * w.ln() + chi.ln_pdf(w)).exp()
                } else {
                    0.0
                }
            },
            lo,
            hi,
            320,
        );
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "moment quadrature failed for order {r}"
            )))
        }
    }

    /// One exact draw. For γ < 0: `U ~ Gamma(1/δ)`; absorbed if `U ≥ λ/2`, otherwise
    /// `J ~ Poisson(λ/2 - U)`, `W ~ 2·Gamma(J+1)` and `S = (c W)^{1/δ}`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law {
            Law::Degenerate => self.s_t,
            Law::Lognormal { var } => {
                let z: f64 = StandardNormal.sample(rng);
                self.s_t * (-0.5 * var + var.sqrt() * z).exp()
            }
            Law::Cev {
                delta,
                scale,
                lambda,
            } => {
                let u = Gamma::new(1.0 / delta, 1.0)
                    .expect("positive shape")
                    .sample(rng);
                let rest = 0.5 * lambda - u;
                if rest <= 0.0 {
                    return 0.0;
                }
                let j: f64 = Poisson::new(rest).expect("positive mean").sample(rng);
                let w = 2.0
                    * Gamma::new(j + 1.0, 1.0)
                        .expect("positive shape")
                        .sample(rng);
                ((scale * w).ln() / delta).exp()
            }
        }
    }

    /// `E[g(S_{t+τ})]` by quadrature over the continuous part plus `g(0)` times the
    /// absorbed mass. `kinks` are spot values where `g` is not smooth.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G, kinks: &[f64]) -> Result<f64> {
        let gl = GaussLegendre::standard();
        match self.law {
            Law::Degenerate => Ok(g(self.s_t)),
            Law::Lognormal { var } => {
                let sd = var.sqrt();
                let spot = |z: f64| self.s_t * (-0.5 * var + sd * z).exp();
                let mut cuts: Vec<f64> = kinks
                    .iter()
                    .filter(|&&k| k > 0.0)
                    .map(|&k| ((k / self.s_t).ln() + 0.5 * var) / sd)
                    .filter(|z| z.abs() < 12.0)
                    .collect();
                cuts.push(-12.0);
                cuts.push(12.0);
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let panels = ((w[1] - w[0]) * 4.0).ceil().max(1.0) as usize;
                    total += gl.integrate(
                        |z| g(spot(z)) * crate::special::norm_pdf(z),
                        w[0],
                        w[1],
                        panels,
                    );
                }
                Ok(total)
            }
            Law::Cev {
                delta,
                scale,
                lambda,
            } => {
                let chi = Self::cev_mixture(delta, lambda);
                let m = chi.mean();
                let sd = chi.variance().sqrt();
                let lo = (m - 14.0 * sd).max(0.0);
                let hi = m + 14.0 * sd;
                let spot = |w: f64| ((scale * w).ln() / delta).exp();
                let integrand = |w: f64| {
                    if w <= 0.0 {
                        return 0.0;
                    }
                    let s = spot(w);
                    g(s) * (chi.ln_pdf(w) + (self.s_t / s).ln()).exp()
                };
                let mut cuts: Vec<f64> = kinks
                    .iter()
                    .filter(|&&k| k > 0.0)
                    .map(|&k| k.powf(delta) / scale)
                    .filter(|&w| w > lo && w < hi)
                    .collect();
                cuts.push(lo);
                cuts.push(hi);
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let panels = ((w[1] - w[0]) / (0.5 * sd)).ceil().max(1.0) as usize;
                    total += gl.integrate(integrand, w[0], w[1], panels);
                }
                Ok(total + g(0.0) * self.absorption_probability())
            }
        }
    }
}

/// CEV transition density of `S_{t+dt}` at `s_u` given `S_t = s_t`.
pub fn transition_density(params: &ModelParams, s_t: f64, s_u: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "duration must be positive, got {dt}"
        )));
    }
    Transition::new(params, s_t, dt)?.density(s_u)
}

/// Probability of absorption at zero within `dt`.
pub fn absorption_probability(params: &ModelParams, s_t: f64, dt: f64) -> Result<f64> {
    Ok(Transition::new(params, s_t, dt)?.absorption_probability())
}

/// `E[S_{t+dt}^p | S_t = s_t]`.
pub fn spot_power_moment(params: &ModelParams, s_t: f64, dt: f64, p: f64) -> Result<f64> {
    Transition::new(params, s_t, dt)?.power_moment(p)
}

/// `n` i.i.d. exact draws of `S_{t+dt}`; zero entries are absorbed paths.
pub fn sample_transition_exact(
    params: &ModelParams,
    s_t: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "duration must be positive, got {dt}"
        )));
    }
    let law = Transition::new(params, s_t, dt)?;
    const CHUNK: usize = 4096;
    let chunks = n.div_ceil(CHUNK);
    let out: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = path_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| law.sample(&mut rng)).collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}
