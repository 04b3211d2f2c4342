//! Frictionless benchmark: option price `q(t, S) = E[G(S_T) | S_t = S]` and the
//! tracking target `θ = ∂q/∂S`.
//!
//! Calls and puts use the noncentral χ² representation of the CEV law; absorbed
//! paths pay `G(0)`. Other payoffs are priced by quadrature over the transition
//! density plus the absorbed atom.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::cev::Transition;
use crate::error::{Error, Result};
use crate::grid::{write_fields_csv, CoeffField, Grid2D};
use crate::ncx2::NoncentralChiSq;
use crate::params::ModelParams;
use crate::special::norm_cdf;

/// Terminal payoff `G(S)`.
#[derive(Clone)]
pub enum Payoff {
    Call {
        strike: f64,
    },
    Put {
        strike: f64,
    },
    /// `G ≡ 1`.
    UnitBond,
    /// `G(S) = S^p`, `p ≥ 0`.
    Power {
        exponent: f64,
    },
    /// User-supplied payoff; `kinks` are spots where `G` is not smooth.
    Custom {
        name: String,
        g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        kinks: Vec<f64>,
    },
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Call { strike } => write!(f, "Call(K={strike})"),
            Payoff::Put { strike } => write!(f, "Put(K={strike})"),
            Payoff::UnitBond => write!(f, "UnitBond"),
            Payoff::Power { exponent } => write!(f, "Power(p={exponent})"),
            Payoff::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Payoff {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::UnitBond => 1.0,
            Payoff::Power { exponent } => {
                if s <= 0.0 {
                    if *exponent == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    s.powf(*exponent)
                }
            }
            Payoff::Custom { g, .. } => g(s),
        }
    }

    /// Almost-everywhere derivative of `G`, with the midpoint value at a kink.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            Payoff::Call { strike } => step(s, *strike),
            Payoff::Put { strike } => step(s, *strike) - 1.0,
            Payoff::UnitBond => 0.0,
            Payoff::Power { exponent } => {
                if *exponent == 0.0 {
                    0.0
                } else {
                    exponent * s.powf(exponent - 1.0)
                }
            }
            Payoff::Custom { g, .. } => {
                let h = 1e-5 * s.abs().max(1e-3);
                let lo = (s - h).max(0.0);
                (g(s + h) - g(lo)) / (s + h - lo)
            }
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => Some(*strike),
            _ => None,
        }
    }
}

fn step(s: f64, k: f64) -> f64 {
    if s > k {
        1.0
    } else if s < k {
        0.0
    } else {
        0.5
    }
}

/// European claim paying `payoff` at `maturity`.
#[derive(Debug, Clone)]
pub struct OptionSpec {
    pub payoff: Payoff,
    pub maturity: f64,
}

impl OptionSpec {
    pub fn new(payoff: Payoff, maturity: f64) -> Result<Self> {
        let o = Self { payoff, maturity };
        o.validate()?;
        Ok(o)
    }

    pub fn call(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(Payoff::Call { strike }, maturity)
    }

    pub fn put(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(Payoff::Put { strike }, maturity)
    }

    pub fn unit_bond(maturity: f64) -> Result<Self> {
        Self::new(Payoff::UnitBond, maturity)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "maturity must be positive, got {}",
                self.maturity
            )));
        }
        match &self.payoff {
            Payoff::Call { strike } | Payoff::Put { strike }
                if !(*strike >= 0.0 && strike.is_finite()) =>
            {
                Err(Error::InvalidInput(format!(
                    "strike must be nonnegative, got {strike}"
                )))
            }
            Payoff::Power { exponent } if !(*exponent >= 0.0 && exponent.is_finite()) => {
                Err(Error::InvalidInput(format!(
                    "power exponent must be nonnegative, got {exponent}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Zero-rate Black–Scholes call.
pub fn black_scholes_call(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (s - k).max(0.0);
    }
    if k <= 0.0 {
        return s;
    }
    let v = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + 0.5 * v * v) / v;
    s * norm_cdf(d1) - k * norm_cdf(d1 - v)
}

/// Zero-rate Black–Scholes call delta `Φ(d₁)`.
pub fn black_scholes_delta(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return step(s, k);
    }
    if k <= 0.0 {
        return 1.0;
    }
    let v = sigma * tau.sqrt();
    norm_cdf(((s / k).ln() + 0.5 * v * v) / v)
}

fn check_time(option: &OptionSpec, t: f64) -> Result<f64> {
    let tau = option.maturity - t;
    if !(t >= 0.0) || tau < -1e-12 * option.maturity.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "time {t} outside [0, {}]",
            option.maturity
        )));
    }
    Ok(tau.max(0.0))
}

/// `E[G(S_T) | S_t = s]`.
pub fn price_european(option: &OptionSpec, params: &ModelParams, t: f64, s: f64) -> Result<f64> {
    params.validate()?;
    option.validate()?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "spot must be positive, got {s}"
        )));
    }
    let tau = check_time(option, t)?;
    if tau == 0.0 {
        return Ok(option.payoff.value(s));
    }
    if params.is_lognormal() {
        return match &option.payoff {
            Payoff::Call { strike } => Ok(black_scholes_call(s, *strike, params.sigma, tau)),
            Payoff::Put { strike } => {
                Ok(black_scholes_call(s, *strike, params.sigma, tau) - s + strike)
            }
            _ => price_by_law(option, params, tau, s),
        };
    }
    match &option.payoff {
        Payoff::Call { strike } => {
            let (alive_above, k_below) = cev_call_parts(params, tau, s, *strike)?;
            Ok((s * alive_above - strike * k_below).max(0.0))
        }
        Payoff::Put { strike } => {
            let (alive_above, k_below) = cev_call_parts(params, tau, s, *strike)?;
            // put = K·P(S_T ≤ K) - E[S_T; S_T ≤ K]
            Ok((strike * (1.0 - k_below) - s * (1.0 - alive_above)).max(0.0))
        }
        _ => price_by_law(option, params, tau, s),
    }
}

/// `(P̃(S_T > K), P(S_T > K))` where `P̃` is the share measure, so that
/// `call = s·P̃ - K·P`.
fn cev_call_parts(params: &ModelParams, tau: f64, s: f64, k: f64) -> Result<(f64, f64)> {
    if k <= 0.0 {
        // every surviving path finishes above a zero strike
        let surv = 1.0 - Transition::new(params, s, tau)?.absorption_probability();
        return Ok((1.0, surv));
    }
    let delta = -2.0 * params.gamma;
    let scale = params.gamma * params.gamma * params.sigma * params.sigma * tau;
    let lambda = s.powf(delta) / scale;
    let y = k.powf(delta) / scale;
    let share = NoncentralChiSq::new(2.0 + 2.0 / delta, lambda)?.sf(y)?;
    let prob = NoncentralChiSq::new(2.0 / delta, y)?.cdf(lambda)?;
    Ok((share, prob))
}

fn price_by_law(option: &OptionSpec, params: &ModelParams, tau: f64, s: f64) -> Result<f64> {
    let law = Transition::new(params, s, tau)?;
    match &option.payoff {
        Payoff::UnitBond => Ok(1.0),
        Payoff::Power { exponent } => law.power_moment(*exponent),
        Payoff::Custom { kinks, .. } => law.expectation(|x| option.payoff.value(x), kinks),
        Payoff::Call { strike } | Payoff::Put { strike } => {
            law.expectation(|x| option.payoff.value(x), &[*strike])
        }
    }
}

/// `θ = ∂q/∂S` by a fourth-order central stencil with one Richardson step.
pub fn delta(option: &OptionSpec, params: &ModelParams, t: f64, s: f64) -> Result<f64> {
    params.validate()?;
    option.validate()?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "spot must be positive, got {s}"
        )));
    }
    let tau = check_time(option, t)?;
    if tau == 0.0 {
        return Ok(option.payoff.derivative(s));
    }
    match &option.payoff {
        Payoff::UnitBond => return Ok(0.0),
        Payoff::Call { strike } if *strike == 0.0 => return Ok(1.0),
        Payoff::Call { strike } if params.is_lognormal() => {
            return Ok(black_scholes_delta(s, *strike, params.sigma, tau))
        }
        Payoff::Put { strike } if params.is_lognormal() => {
            return Ok(black_scholes_delta(s, *strike, params.sigma, tau) - 1.0)
        }
        _ => {}
    }
    let q = |x: f64| price_european(option, params, t, x);
    let h = (0.05 * params.diffusion(s) * tau.sqrt()).min(0.2 * s);
    let d_h = stencil(&q, s, h)?;
    let d_half = stencil(&q, s, 0.5 * h)?;
    Ok((16.0 * d_half - d_h) / 15.0)
}

fn stencil(q: &impl Fn(f64) -> Result<f64>, s: f64, h: f64) -> Result<f64> {
    if s - 2.0 * h > 0.0 {
        Ok((-q(s + 2.0 * h)? + 8.0 * q(s + h)? - 8.0 * q(s - h)? + q(s - 2.0 * h)?) / (12.0 * h))
    } else {
        // one-sided fourth-order stencil
        Ok(
            (-25.0 * q(s)? + 48.0 * q(s + h)? - 36.0 * q(s + 2.0 * h)? + 16.0 * q(s + 3.0 * h)?
                - 3.0 * q(s + 4.0 * h)?)
                / (12.0 * h),
        )
    }
}

/// Price and delta on every node of a grid.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub q: CoeffField,
    pub theta: CoeffField,
}

impl PriceSurface {
    pub fn build(option: &OptionSpec, params: &ModelParams, grid: Arc<Grid2D>) -> Result<Self> {
        if grid.times().maturity() > option.maturity * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "grid ends at {} after maturity {}",
                grid.times().maturity(),
                option.maturity
            )));
        }
        let nodes: Vec<(f64, f64)> = grid
            .times()
            .nodes()
            .iter()
            .flat_map(|&t| grid.spots().iter().map(move |&s| (t, s)))
            .collect();
        let pairs: Vec<(f64, f64)> = nodes
            .par_iter()
            .map(|&(t, s)| {
                Ok((
                    price_european(option, params, t, s)?,
                    delta(option, params, t, s)?,
                ))
            })
            .collect::<Result<_>>()?;
        let (q, theta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        Ok(Self {
            q: CoeffField::from_values(grid.clone(), q)?,
            theta: CoeffField::from_values(grid, theta)?,
        })
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        self.q.grid()
    }

    /// θ at `(t, s)`, spot clamped to the grid window.
    #[inline]
    pub fn theta_at(&self, t: f64, s: f64) -> f64 {
        self.theta.interpolate_clamped(t, s)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_fields_csv(
            out,
            "# cevhedge-surface v1",
            &["q", "theta"],
            &[&self.q, &self.theta],
        )
    }
}

/// `max |∂_t q + ½σ²S^{2+2γ} ∂_SS q|` over interior nodes, by central differences
/// on the exact price evaluated at the grid nodes.
pub fn pde_residual_q(option: &OptionSpec, params: &ModelParams, grid: &Grid2D) -> Result<f64> {
    let times = grid.times().nodes();
    let spots = grid.spots();
    let (nt, ns) = (times.len(), spots.len());
    if nt < 3 {
        return Err(Error::InvalidInput(
            "residual needs at least three time nodes".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = times
        .par_iter()
        .map(|&t| {
            spots
                .iter()
                .map(|&s| price_european(option, params, t, s))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 1..nt - 1 {
        let (dtm, dtp) = (times[i] - times[i - 1], times[i + 1] - times[i]);
        for j in 1..ns - 1 {
            let q_t = second_order_slope(rows[i - 1][j], rows[i][j], rows[i + 1][j], dtm, dtp);
            let (hm, hp) = (spots[j] - spots[j - 1], spots[j + 1] - spots[j]);
            let q_ss = 2.0 * (hm * rows[i][j + 1] - (hm + hp) * rows[i][j] + hp * rows[i][j - 1])
                / (hm * hp * (hm + hp));
            let r = q_t + 0.5 * params.local_variance(spots[j]) * q_ss;
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// First derivative at the middle of three unevenly spaced samples.
fn second_order_slope(fm: f64, f0: f64, fp: f64, hm: f64, hp: f64) -> f64 {
    (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / (hm * hp * (hm + hp))
}

/// Fitted growth constants for `|θ| ≤ C(1+S^α)` and `|∂θ/∂S| ≤ C₁(1+S^β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthReport {
    pub c: f64,
    pub alpha: f64,
    pub c1: f64,
    pub beta: f64,
    pub satisfied: bool,
}

/// Largest exponent admissible for the bounds.
pub const MAX_GROWTH_EXPONENT: f64 = 4.0;

/// Fits the growth exponent as the steepest log–log tail slope over the upper
/// quarter of the spot window (any time row), then the smallest constant for it.
pub fn growth_bound_check(surface: &PriceSurface) -> GrowthReport {
    let grid = surface.grid();
    let spots = grid.spots();
    let nt = grid.n_times();
    let ns = grid.n_spots();
    let theta_rows: Vec<Vec<f64>> = (0..nt).map(|i| surface.theta.row(i).to_vec()).collect();
    let gamma_rows: Vec<Vec<f64>> = theta_rows
        .iter()
        .map(|row| {
            (0..ns)
                .map(|j| {
                    let (a, b) = (j.saturating_sub(1), (j + 1).min(ns - 1));
                    (row[b] - row[a]) / (spots[b] - spots[a])
                })
                .collect()
        })
        .collect();
    let (alpha, c) = fit_growth(spots, &theta_rows);
    let (beta, c1) = fit_growth(spots, &gamma_rows);
    GrowthReport {
        c,
        alpha,
        c1,
        beta,
        satisfied: alpha <= MAX_GROWTH_EXPONENT && beta <= MAX_GROWTH_EXPONENT,
    }
}

fn fit_growth(spots: &[f64], rows: &[Vec<f64>]) -> (f64, f64) {
    let ns = spots.len();
    let start = (3 * ns) / 4;
    let mut exponent: f64 = 0.0;
    for row in rows {
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            continue;
        }
        let pts: Vec<(f64, f64)> = (start..ns)
            .filter(|&j| row[j].abs() > 1e-8 * peak)
            .map(|j| (spots[j].ln(), row[j].abs().ln()))
            .collect();
        if pts.len() < 3 {
            continue;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        if sxx > 0.0 {
            exponent = exponent.max(sxy / sxx);
        }
    }
    // round to two decimals, upward, so that small fitting noise does not undercut the bound
    let exponent = (exponent * 100.0 - 1e-6).ceil().max(0.0) / 100.0;
    let constant = rows
        .iter()
        .flat_map(|row| {
            row.iter()
                .zip(spots)
                .map(|(v, s)| v.abs() / (1.0 + s.powf(exponent)))
        })
        .fold(0.0, f64::max);
    (exponent, constant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::TimeGrid;

    fn cev(gamma: f64, sigma: f64) -> ModelParams {
        ModelParams::new(sigma, gamma, 0.01).unwrap()
    }

    #[test]
    fn black_scholes_reference() {
        let p = cev(0.0, 0.2);
        let o = OptionSpec::call(100.0, 1.0).unwrap();
        let v = price_european(&o, &p, 0.0, 100.0).unwrap();
        // 100·(2Φ(0.1) − 1)
        assert!((v - 7.965567455405804).abs() < 1e-10, "{v}");
        let d = delta(&o, &p, 0.0, 100.0).unwrap();
        assert!((d - 0.539827837277029).abs() < 1e-10);
    }

    #[test]
    fn zero_strike_call_is_the_spot() {
        for &gamma in &[-0.5, -0.25, 0.0] {
            let p = cev(gamma, 0.3);
            let o = OptionSpec::call(0.0, 2.0).unwrap();
            for &s in &[0.5, 10.0, 100.0] {
                assert!((price_european(&o, &p, 0.3, s).unwrap() - s).abs() < 1e-9 * s.max(1.0));
                assert_eq!(delta(&o, &p, 0.3, s).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn put_call_parity() {
        for &(gamma, sigma, t, s, k) in &[
            (-0.25, 0.2, 0.0, 100.0, 100.0),
            (-0.5, 0.3, 0.5, 1.0, 1.2),
            (-0.1, 0.25, 0.9, 80.0, 120.0),
            (-0.4, 0.15, 0.2, 150.0, 90.0),
        ] {
            let p = cev(gamma, sigma);
            let c = price_european(&OptionSpec::call(k, 1.0).unwrap(), &p, t, s).unwrap();
            let pu = price_european(&OptionSpec::put(k, 1.0).unwrap(), &p, t, s).unwrap();
            assert!(
                (c - pu - (s - k)).abs() < 1e-9 * s.max(k),
                "{gamma}: {c} {pu}"
            );
        }
    }

    #[test]
    fn closed_form_agrees_with_density_quadrature() {
        for &(gamma, sigma, s, k, tau) in &[
            (-0.25, 0.2, 100.0, 100.0, 1.0),
            (-0.5, 0.3, 0.5, 0.6, 1.0),
            (-0.4, 0.5, 2.0, 1.0, 2.0),
        ] {
            let p = cev(gamma, sigma);
            let o = OptionSpec::call(k, tau).unwrap();
            let closed = price_european(&o, &p, 0.0, s).unwrap();
            let quad = price_by_law(&o, &p, tau, s).unwrap();
            assert!((closed - quad).abs() < 1e-8 * s, "{closed} vs {quad}");
            let po = OptionSpec::put(k, tau).unwrap();
            let closed = price_european(&po, &p, 0.0, s).unwrap();
            let quad = price_by_law(&po, &p, tau, s).unwrap();
            assert!((closed - quad).abs() < 1e-8 * s, "put {closed} vs {quad}");
        }
    }

    #[test]
    fn near_lognormal_continuity() {
        let o = OptionSpec::call(100.0, 1.0).unwrap();
        let v = price_european(&o, &cev(-1e-6, 0.2), 0.0, 100.0).unwrap();
        let bs = black_scholes_call(100.0, 100.0, 0.2, 1.0);
        assert!((v - bs).abs() < 1e-4, "{v} vs {bs}");
    }

    #[test]
    fn delta_matches_lognormal_limit_and_vanishes_out_of_the_money() {
        let o = OptionSpec::call(100.0, 1.0).unwrap();
        let d = delta(&o, &cev(-1e-6, 0.2), 0.0, 100.0).unwrap();
        assert!((d - 0.539827837277029).abs() < 1e-4, "{d}");
        let far = delta(
            &OptionSpec::call(100.0, 0.25).unwrap(),
            &cev(-0.25, 0.2),
            0.0,
            1.0,
        )
        .unwrap();
        assert!(far.abs() < 1e-6, "{far}");
    }

    #[test]
    fn delta_agrees_with_analytic_cev_share_probability() {
        // independent route: for a call, q = s·P̃ − K·P; differentiate by wide central bumps
        let p = cev(-0.25, 0.2);
        let o = OptionSpec::call(100.0, 1.0).unwrap();
        let d = delta(&o, &p, 0.0, 100.0).unwrap();
        let h = 1e-3;
        let up = price_european(&o, &p, 0.0, 100.0 + h).unwrap();
        let dn = price_european(&o, &p, 0.0, 100.0 - h).unwrap();
        assert!((d - (up - dn) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn terminal_delta_convention() {
        let p = cev(-0.25, 0.2);
        let c = OptionSpec::call(100.0, 1.0).unwrap();
        let pu = OptionSpec::put(100.0, 1.0).unwrap();
        assert_eq!(delta(&c, &p, 1.0, 100.0).unwrap(), 0.5);
        assert_eq!(delta(&c, &p, 1.0, 101.0).unwrap(), 1.0);
        assert_eq!(delta(&pu, &p, 1.0, 99.0).unwrap(), -1.0);
        assert_eq!(price_european(&c, &p, 1.0, 130.0).unwrap(), 30.0);
        assert!(price_european(&c, &p, 1.5, 100.0).is_err());
    }

    #[test]
    fn residual_vanishes_for_harmonic_claims() {
        let grid =
            Grid2D::log_spaced(TimeGrid::uniform(0.0, 1.0, 20).unwrap(), 50.0, 200.0, 30).unwrap();
        let p = cev(-0.25, 0.2);
        let lin = pde_residual_q(&OptionSpec::call(0.0, 1.0).unwrap(), &p, &grid).unwrap();
        assert!(lin < 1e-9, "{lin}");
        let one = pde_residual_q(&OptionSpec::unit_bond(1.0).unwrap(), &p, &grid).unwrap();
        assert_eq!(one, 0.0);
    }

    #[test]
    fn growth_bounds_for_standard_claims() {
        let grid = Arc::new(
            Grid2D::log_spaced(TimeGrid::uniform(0.0, 1.0, 8).unwrap(), 50.0, 200.0, 40).unwrap(),
        );
        let p = cev(-0.25, 0.2);
        let call =
            PriceSurface::build(&OptionSpec::call(100.0, 1.0).unwrap(), &p, grid.clone()).unwrap();
        let r = growth_bound_check(&call);
        assert!(r.satisfied);
        assert!(r.c <= 1.0 && call.theta.min() >= -1e-9 && call.theta.max() <= 1.0 + 1e-9);
        let sq = OptionSpec::new(Payoff::Power { exponent: 2.0 }, 1.0).unwrap();
        let r = growth_bound_check(&PriceSurface::build(&sq, &p, grid).unwrap());
        assert!(r.alpha >= 0.99, "{r:?}");
        assert!(r.satisfied);
    }
}
