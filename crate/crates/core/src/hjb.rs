//! Quadratic value function `V(H, S, t) = a H² + b H + c`.
//!
//! With `L = ∂_t + ½σ²S^{2+2γ}∂_SS` the coefficients solve
//!
//! ```text
//! 0 = L(a) + ½σ²S^{2+2γ}    − 2a²/(Sε)
//! 0 = L(b) − σ²S^{2+2γ}θ    − 2ab/(Sε)
//! 0 = L(c) + ½σ²S^{2+2γ}θ²  − b²/(2Sε)
//! ```
//!
//! with zero terminal values. The first equation is solved by iterating the
//! antitone map `Ψ(α)`: the solution of `0 = L(u) + ½σ²S^{2+2γ} − (2α/(εS))·u`.
//! Starting from `a⁽⁰⁾ = 0`, even iterates increase and odd iterates decrease,
//! so the pair brackets the fixed point and their distance certifies the error.
//! The other two equations are linear once `a` (and `b`) are known.

use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{write_fields_csv, CoeffField, Grid2D};
use crate::params::ModelParams;
use crate::pricing::PriceSurface;
use crate::rng::path_rng;

/// Solves `0 = ∂_t u + ½σ²S^{2+2γ}∂_SS u + f − r·u`, `u(T, ·) = 0`, backward in time.
///
/// Fully implicit in time, central differences in `ln S`. The far-field nodes use
/// `∂_SS u = 0`, which leaves an ODE in time there. The system matrix is an
/// M-matrix whenever `r ≥ 0` and the log-spacing is at most 2.
pub fn solve_linear_parabolic(
    source: &CoeffField,
    kill_rate: &CoeffField,
    params: &ModelParams,
    grid: &Arc<Grid2D>,
) -> Result<CoeffField> {
    if source.values().len() != kill_rate.values().len()
        || source.values().len() != grid.n_times() * grid.n_spots()
    {
        return Err(Error::InvalidInput(
            "source/kill fields do not match the grid".into(),
        ));
    }
    if let Some(bad) = kill_rate
        .values()
        .iter()
        .find(|r| !(**r >= 0.0) || !r.is_finite())
    {
        return Err(Error::Numerical(format!(
            "kill rate must be finite and nonnegative, found {bad}; system would lose diagonal dominance"
        )));
    }
    let spots = grid.spots();
    let ns = spots.len();
    let times = grid.times().nodes();
    let nt = times.len();

    // spatial operator ½σ²S^{2γ}(u_xx − u_x) in x = ln S, as (lower, diag, upper)
    let x: Vec<f64> = spots.iter().map(|s| s.ln()).collect();
    let mut lower = vec![0.0; ns];
    let mut upper = vec![0.0; ns];
    for j in 1..ns - 1 {
        let (hm, hp) = (x[j] - x[j - 1], x[j + 1] - x[j]);
        if hm > 2.0 || hp > 2.0 {
            return Err(Error::Numerical(format!(
                "log-spot spacing {:.3} exceeds 2; refine the spot grid",
                hm.max(hp)
            )));
        }
        let d = 0.5 * params.sigma * params.sigma * spots[j].powf(2.0 * params.gamma);
        let den = hm * hp * (hm + hp);
        upper[j] = d * hm * (2.0 - hm) / den;
        lower[j] = d * hp * (2.0 + hp) / den;
    }

    let mut values = vec![0.0; nt * ns];
    let mut sub = vec![0.0; ns];
    let mut diag = vec![0.0; ns];
    let mut sup = vec![0.0; ns];
    let mut rhs = vec![0.0; ns];
    for i in (0..nt - 1).rev() {
        let dt = times[i + 1] - times[i];
        let (done, todo) = values.split_at_mut((i + 1) * ns);
        let next = &todo[..ns];
        let cur = &mut done[i * ns..];
        let f = &source.values()[i * ns..(i + 1) * ns];
        let r = &kill_rate.values()[i * ns..(i + 1) * ns];
        for j in 0..ns {
            sub[j] = -dt * lower[j];
            sup[j] = -dt * upper[j];
            diag[j] = 1.0 + dt * (r[j] + lower[j] + upper[j]);
            rhs[j] = next[j] + dt * f[j];
        }
        thomas(&sub, &diag, &sup, &mut rhs)?;
        cur[..ns].copy_from_slice(&rhs);
    }
    CoeffField::from_values(grid.clone(), values)
}

/// In-place tridiagonal solve; `rhs` receives the solution.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    rhs[0] /= beta;
    for j in 1..n {
        c[j - 1] = sup[j - 1] / beta;
        beta = diag[j] - sub[j] * c[j - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        rhs[j] = (rhs[j] - sub[j] * rhs[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
    Ok(())
}

/// `½σ²S^{2+2γ}` on every node.
pub fn variance_source(params: &ModelParams, grid: &Arc<Grid2D>) -> CoeffField {
    CoeffField::from_fn(grid.clone(), |_, s| 0.5 * params.local_variance(s))
}

/// Killing rate `2α/(εS)` induced by a coefficient field `α`.
pub fn kill_rate_of(a: &CoeffField, params: &ModelParams) -> CoeffField {
    let grid = a.grid().clone();
    let ns = grid.n_spots();
    let values = a
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| 2.0 * v / (params.eps * grid.spots()[k % ns]))
        .collect();
    CoeffField::from_values(grid, values).expect("same grid")
}

/// `Ψ(α)`: solution of the linear PDE with source `½σ²S^{2+2γ}` and kill rate `2α/(εS)`.
pub fn psi_apply(
    a_in: &CoeffField,
    params: &ModelParams,
    grid: &Arc<Grid2D>,
) -> Result<CoeffField> {
    if a_in.min() < 0.0 {
        return Err(Error::InvalidInput(
            "Ψ is applied to nonnegative fields only".into(),
        ));
    }
    solve_linear_parabolic(
        &variance_source(params, grid),
        &kill_rate_of(a_in, params),
        params,
        grid,
    )
}

/// Outcome of the Ψ iteration.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `sup |upper − lower|` at exit.
    pub gap: f64,
    pub tol: f64,
    /// Gap after each iteration (between the two latest iterates).
    pub gap_history: Vec<f64>,
    /// `sup a⁽¹⁾ = sup Ψ(0)`, the natural scale of `a`.
    pub scale: f64,
    /// Largest violation of the sandwich ordering seen (0 when it held exactly).
    pub sandwich_violation: f64,
    pub residuals: Option<HjbResiduals>,
    #[serde(skip)]
    pub lower: Option<CoeffField>,
    #[serde(skip)]
    pub upper: Option<CoeffField>,
}

/// Default stopping tolerance relative to `sup a⁽¹⁾`.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Iterates `a⁽ⁿ⁺¹⁾ = Ψ(a⁽ⁿ⁾)` from zero until the even/odd envelopes are within `tol`.
///
/// Returns the midpoint of the final envelopes. `max_iter` counts Ψ applications.
pub fn solve_a(
    params: &ModelParams,
    grid: &Arc<Grid2D>,
    tol: f64,
    max_iter: usize,
) -> Result<(CoeffField, SolveReport)> {
    params.validate()?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let mut prev = CoeffField::zeros(grid.clone()); // a⁽⁰⁾
    let mut lower = prev.clone();
    let mut upper: Option<CoeffField> = None;
    let mut history = Vec::new();
    let mut violation: f64 = 0.0;
    let mut scale = 0.0;
    let mut last_gap = f64::INFINITY;
    for n in 1..=max_iter {
        let next = psi_apply(&prev, params, grid)?;
        if n == 1 {
            scale = next.sup_abs();
        }
        if n % 2 == 1 {
            if let Some(u) = &upper {
                // odd iterates decrease
                violation = violation.max(max_excess(&next, u));
            }
            upper = Some(next.clone());
        } else {
            // even iterates increase
            violation = violation.max(max_excess(&lower, &next));
            lower = next.clone();
        }
        let up = upper.as_ref().unwrap();
        violation = violation.max(max_excess(&lower, up));
        let gap = up.sup_distance(&lower);
        history.push(gap);
        last_gap = gap;
        prev = next;
        if gap < tol {
            let mid = lower.zip_map(up, |l, u| 0.5 * (l + u))?;
            let report = SolveReport {
                iterations: n,
                gap,
                tol,
                gap_history: history,
                scale,
                sandwich_violation: violation,
                residuals: None,
                lower: Some(lower),
                upper: upper.clone(),
            };
            return Ok((mid, report));
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        last_gap,
        tol,
    })
}

/// `max(first − second)⁺` over all nodes.
fn max_excess(first: &CoeffField, second: &CoeffField) -> f64 {
    first
        .values()
        .iter()
        .zip(second.values())
        .fold(0.0, |m, (a, b)| m.max(a - b))
}

/// Linear coefficient: source `−σ²S^{2+2γ}θ`, kill rate `2a/(εS)`.
pub fn solve_b(
    a: &CoeffField,
    theta: &PriceSurface,
    params: &ModelParams,
    grid: &Arc<Grid2D>,
) -> Result<CoeffField> {
    let source = CoeffField::from_values(
        grid.clone(),
        node_map(grid, |k, _, s| {
            -params.local_variance(s) * theta.theta.values()[k]
        }),
    )?;
    solve_linear_parabolic(&source, &kill_rate_of(a, params), params, grid)
}

/// Constant coefficient: source `½σ²S^{2+2γ}θ² − b²/(2εS)`, no killing.
pub fn solve_c(
    _a: &CoeffField,
    b: &CoeffField,
    theta: &PriceSurface,
    params: &ModelParams,
    grid: &Arc<Grid2D>,
) -> Result<CoeffField> {
    let th = theta.theta.values();
    let bv = b.values();
    let source = CoeffField::from_values(
        grid.clone(),
        node_map(grid, |k, _, s| {
            0.5 * params.local_variance(s) * th[k] * th[k] - bv[k] * bv[k] / (2.0 * params.eps * s)
        }),
    )?;
    solve_linear_parabolic(&source, &CoeffField::zeros(grid.clone()), params, grid)
}

fn node_map(grid: &Grid2D, f: impl Fn(usize, f64, f64) -> f64) -> Vec<f64> {
    let ns = grid.n_spots();
    let mut out = Vec::with_capacity(grid.n_times() * ns);
    for (i, &t) in grid.times().nodes().iter().enumerate() {
        for (j, &s) in grid.spots().iter().enumerate() {
            out.push(f(i * ns + j, t, s));
        }
    }
    out
}

/// `V = aH² + bH + c` at `(t, s)` by bilinear interpolation; errors outside the grid.
pub fn assemble_value(
    a: &CoeffField,
    b: &CoeffField,
    c: &CoeffField,
    h: f64,
    s: f64,
    t: f64,
) -> Result<f64> {
    Ok(a.interpolate(t, s)? * h * h + b.interpolate(t, s)? * h + c.interpolate(t, s)?)
}

/// Optimal trading rate `−(2aH + b)/(Sε)`.
pub fn optimal_control(
    a: &CoeffField,
    b: &CoeffField,
    h: f64,
    s: f64,
    t: f64,
    params: &ModelParams,
) -> Result<f64> {
    let v_h = 2.0 * a.interpolate(t, s)? * h + b.interpolate(t, s)?;
    Ok(-v_h / (s * params.eps))
}

/// Largest absolute residual of each coefficient equation over interior nodes,
/// and the same divided by the sup of that equation's forcing term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HjbResiduals {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_relative: f64,
    pub b_relative: f64,
    pub c_relative: f64,
}

impl HjbResiduals {
    pub fn max_relative(&self) -> f64 {
        self.a_relative.max(self.b_relative).max(self.c_relative)
    }
}

/// Residuals of the three coefficient equations, evaluated with central
/// differences in time and three-point differences in `S` (a different stencil
/// from the solver's), so they measure the discretization error of the fields.
pub fn hjb_residual(
    a: &CoeffField,
    b: &CoeffField,
    c: &CoeffField,
    theta: &PriceSurface,
    params: &ModelParams,
    grid: &Grid2D,
) -> HjbResiduals {
    let times = grid.times().nodes();
    let spots = grid.spots();
    let (nt, ns) = (times.len(), spots.len());
    let th = theta.theta.values();
    let mut worst = [0.0f64; 3];
    let mut forcing = [0.0f64; 3];
    for i in 1..nt.saturating_sub(1) {
        let (tm, tp) = (times[i] - times[i - 1], times[i + 1] - times[i]);
        for j in 1..ns - 1 {
            let s = spots[j];
            let var = params.local_variance(s);
            let k = i * ns + j;
            let op = |f: &CoeffField| {
                let v = |ii: usize, jj: usize| f.values()[ii * ns + jj];
                let u_t = (tm * tm * v(i + 1, j) - tp * tp * v(i - 1, j)
                    + (tp * tp - tm * tm) * v(i, j))
                    / (tm * tp * (tm + tp));
                let (hm, hp) = (spots[j] - spots[j - 1], spots[j + 1] - spots[j]);
                let u_ss = 2.0 * (hm * v(i, j + 1) - (hm + hp) * v(i, j) + hp * v(i, j - 1))
                    / (hm * hp * (hm + hp));
                u_t + 0.5 * var * u_ss
            };
            let (av, bv) = (a.values()[k], b.values()[k]);
            let se = s * params.eps;
            let ra = op(a) + 0.5 * var - 2.0 * av * av / se;
            let rb = op(b) - var * th[k] - 2.0 * av * bv / se;
            let rc = op(c) + 0.5 * var * th[k] * th[k] - bv * bv / (2.0 * se);
            for (w, r) in worst.iter_mut().zip([ra, rb, rc]) {
                *w = w.max(r.abs());
            }
            forcing[0] = forcing[0].max(0.5 * var);
            forcing[1] = forcing[1].max(var * th[k].abs());
            forcing[2] = forcing[2].max(0.5 * var * th[k] * th[k]);
        }
    }
    let rel = |w: f64, f: f64| if f > 0.0 { w / f } else { w };
    HjbResiduals {
        a: worst[0],
        b: worst[1],
        c: worst[2],
        a_relative: rel(worst[0], forcing[0]),
        b_relative: rel(worst[1], forcing[1]),
        c_relative: rel(worst[2], forcing[2]),
    }
}

/// All coefficient fields for one claim.
#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub a: CoeffField,
    pub b: CoeffField,
    pub c: CoeffField,
    pub surface: PriceSurface,
    pub report: SolveReport,
}

impl HjbSolution {
    /// Solves for `a`, then `b` and `c`, and attaches the residual diagnostics.
    pub fn solve(
        params: &ModelParams,
        surface: PriceSurface,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let grid = surface.grid().clone();
        let (a, mut report) = solve_a(params, &grid, tol, max_iter)?;
        let b = solve_b(&a, &surface, params, &grid)?;
        let c = solve_c(&a, &b, &surface, params, &grid)?;
        report.residuals = Some(hjb_residual(&a, &b, &c, &surface, params, &grid));
        Ok(Self {
            a,
            b,
            c,
            surface,
            report,
        })
    }

    pub fn value(&self, h: f64, s: f64, t: f64) -> Result<f64> {
        assemble_value(&self.a, &self.b, &self.c, h, s, t)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let g = self.a.grid();
        let header = format!(
            "# cevhedge-fields v1 n_times={} n_spots={} t0={} T={} s_min={} s_max={}",
            g.n_times(),
            g.n_spots(),
            g.times().start(),
            g.times().maturity(),
            g.s_min(),
            g.s_max()
        );
        write_fields_csv(
            out,
            &header,
            &["a", "b", "c", "q", "theta"],
            &[
                &self.a,
                &self.b,
                &self.c,
                &self.surface.q,
                &self.surface.theta,
            ],
        )
    }
}

/// Monte-Carlo Feynman–Kac evaluation of `Ψ(α)(t, s)`:
/// `E ∫_t^T ½σ²S_u^{2+2γ} exp(−∫_t^u 2α/(εS)) du`, with `α` clamped to its grid.
///
/// Returns the estimate and its standard error.
pub fn feynman_kac_psi(
    alpha: &CoeffField,
    params: &ModelParams,
    t: f64,
    s: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let maturity = alpha.grid().times().maturity();
    if !(t < maturity) || n_paths < 2 || n_steps == 0 {
        return Err(Error::InvalidInput(
            "need t < T, at least two paths and one step".into(),
        ));
    }
    let dt = (maturity - t) / n_steps as f64;
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let (mut x, mut log_disc, mut acc) = (s, 0.0f64, 0.0);
            for k in 0..n_steps {
                if x <= 0.0 {
                    break;
                }
                let u = t + k as f64 * dt;
                let rate = 2.0 * alpha.interpolate_clamped(u, x) / (params.eps * x);
                // trapezoid in the discount over the step, source at the left end
                let f = 0.5 * params.local_variance(x);
                let z: f64 = StandardNormal.sample(&mut rng);
                let next = (x + params.diffusion(x) * dt.sqrt() * z).max(0.0);
                let rate_next = if next > 0.0 {
                    2.0 * alpha.interpolate_clamped(u + dt, next) / (params.eps * next)
                } else {
                    0.0
                };
                let step_disc = 0.5 * (rate + rate_next) * dt;
                // exact integral of e^{-r τ} over the step for the left-end source
                let w = if step_disc > 1e-12 {
                    (1.0 - (-step_disc).exp()) / step_disc
                } else {
                    1.0
                };
                acc += f * (-log_disc).exp() * w * dt;
                log_disc += step_disc;
                x = next;
            }
            acc
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::TimeGrid;
    use crate::pricing::OptionSpec;

    fn grid(nt: usize, ns: usize) -> Arc<Grid2D> {
        Arc::new(
            Grid2D::log_spaced(TimeGrid::uniform(0.0, 1.0, nt).unwrap(), 50.0, 200.0, ns).unwrap(),
        )
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = grid(20, 30);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let kill = CoeffField::from_fn(g.clone(), |t, s| t + s * 1e-3);
        let u = solve_linear_parabolic(&CoeffField::zeros(g.clone()), &kill, &p, &g).unwrap();
        assert_eq!(u.sup_abs(), 0.0);
    }

    #[test]
    fn constant_source_integrates_in_time() {
        let g = grid(40, 30);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let u = solve_linear_parabolic(
            &CoeffField::from_fn(g.clone(), |_, _| 3.0),
            &CoeffField::zeros(g.clone()),
            &p,
            &g,
        )
        .unwrap();
        for (i, &t) in g.times().nodes().iter().enumerate() {
            for j in 0..g.n_spots() {
                assert!((u.at(i, j) - 3.0 * (1.0 - t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_kill_rate_is_rejected() {
        let g = grid(4, 10);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let r = CoeffField::from_fn(g.clone(), |_, _| -1.0);
        assert!(matches!(
            solve_linear_parabolic(&CoeffField::zeros(g.clone()), &r, &p, &g),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn gbm_second_moment_without_killing() {
        let g = Arc::new(
            Grid2D::log_spaced(TimeGrid::uniform(0.0, 1.0, 400).unwrap(), 25.0, 400.0, 400)
                .unwrap(),
        );
        let p = ModelParams::new(0.2, 0.0, 0.01).unwrap();
        let u = psi_apply(&CoeffField::zeros(g.clone()), &p, &g).unwrap();
        for &s in &[60.0, 100.0, 150.0] {
            let want = 0.5 * s * s * (0.04f64.exp() - 1.0);
            let got = u.interpolate(0.0, s).unwrap();
            assert!(((got - want) / want).abs() < 1e-3, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn large_killing_suppresses_psi() {
        let g = grid(50, 40);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let free = psi_apply(&CoeffField::zeros(g.clone()), &p, &g).unwrap();
        let heavy = psi_apply(&CoeffField::from_fn(g.clone(), |_, _| 1e6), &p, &g).unwrap();
        assert!(heavy.sup_abs() / free.sup_abs() < 0.01);
    }

    #[test]
    fn vanishing_liquidity_cost_needs_two_iterations() {
        let g = grid(50, 40);
        let p = ModelParams::new(0.2, -0.25, 1e9).unwrap();
        let a1 = psi_apply(&CoeffField::zeros(g.clone()), &p, &g).unwrap();
        let (a, rep) = solve_a(&p, &g, 1e-3 * a1.sup_abs(), 2).unwrap();
        assert!(rep.iterations <= 2);
        assert!(a.sup_distance(&a1) / a1.sup_abs() < 1e-3);
    }

    #[test]
    fn unreachable_tolerance_reports_last_gap() {
        let g = grid(20, 20);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        match solve_a(&p, &g, 0.0, 5) {
            Err(Error::Convergence {
                iterations,
                last_gap,
                ..
            }) => {
                assert_eq!(iterations, 5);
                assert!(last_gap > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn unit_bond_has_trivial_linear_and_constant_parts() {
        let g = grid(40, 40);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let surface =
            PriceSurface::build(&OptionSpec::unit_bond(1.0).unwrap(), &p, g.clone()).unwrap();
        let sol = HjbSolution::solve(&p, surface, 1e-6, 60).unwrap();
        assert!(sol.b.values().iter().all(|&v| v == 0.0));
        assert!(sol.c.values().iter().all(|&v| v == 0.0));
        assert_eq!(
            optimal_control(&sol.a, &sol.b, 0.0, 100.0, 0.3, &p).unwrap(),
            0.0
        );
        assert_eq!(sol.value(0.0, 100.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn value_is_quadratic_in_holdings() {
        let g = grid(40, 40);
        let p = ModelParams::new(0.2, -0.25, 0.01).unwrap();
        let surface =
            PriceSurface::build(&OptionSpec::call(100.0, 1.0).unwrap(), &p, g.clone()).unwrap();
        let sol = HjbSolution::solve(&p, surface, 1e-6, 80).unwrap();
        let (t, s) = (0.2, 110.0);
        let a = sol.a.interpolate(t, s).unwrap();
        let b = sol.b.interpolate(t, s).unwrap();
        let c = sol.c.interpolate(t, s).unwrap();
        assert_eq!(sol.value(0.0, s, t).unwrap(), c);
        // brute-force minimization over a fine H grid
        let (mut best_h, mut best_v) = (0.0, f64::INFINITY);
        for k in 0..=40_000 {
            let h = -1.0 + 3.0 * k as f64 / 40_000.0;
            let v = sol.value(h, s, t).unwrap();
            if v < best_v {
                best_v = v;
                best_h = h;
            }
        }
        assert!((best_h + b / (2.0 * a)).abs() < 1e-4);
        assert!((best_v - (c - b * b / (4.0 * a))).abs() < 1e-8 * c.abs().max(1.0));
        let h_star = -b / (2.0 * a);
        assert!(
            optimal_control(&sol.a, &sol.b, h_star, s, t, &p)
                .unwrap()
                .abs()
                < 1e-9
        );
        assert!(optimal_control(&sol.a, &sol.b, h_star + 0.1, s, t, &p).unwrap() < 0.0);
        assert!(optimal_control(&sol.a, &sol.b, h_star - 0.1, s, t, &p).unwrap() > 0.0);
        // finite-difference derivative in H
        let hh = 0.3;
        let fd = (sol.value(hh + 1e-4, s, t).unwrap() - sol.value(hh - 1e-4, s, t).unwrap()) / 2e-4;
        let ctrl = optimal_control(&sol.a, &sol.b, hh, s, t, &p).unwrap();
        assert!(((-fd / (s * p.eps)) - ctrl).abs() < 1e-8 * ctrl.abs().max(1.0));
        assert_eq!(sol.value(0.7, s, 1.0).unwrap(), 0.0);
    }
}
