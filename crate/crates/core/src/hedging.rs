//! Monte-Carlo evaluation of trading-rate policies.
//!
//! A policy is rolled out along Euler paths of the spot with the rate held
//! constant over each step (evaluated at the left end). Each path accumulates
//!
//! * tracking cost `½∫(θ − H)²σ²S^{2+2γ}dt`,
//! * liquidity cost `∫S·(ε/2)h²dt`,
//! * the classic portfolio `ξ = H₀S₀ + x₀ + ∫H dS`.
//!
//! Trading stops once a path is absorbed at zero. All strategies in one run see
//! the same spot paths, so differences between them carry paired errors.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::cev::euler_path;
use crate::error::{Error, Result};
use crate::grid::CoeffField;
use crate::params::{ModelParams, TimeGrid};
use crate::pricing::{price_european, OptionSpec, PriceSurface};
use crate::rng::path_rng;

/// State seen by a policy when choosing its rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyInput {
    pub t: f64,
    pub s: f64,
    pub holdings: f64,
    pub theta: f64,
}

/// Trading-rate policy.
#[derive(Clone)]
pub enum StrategySpec {
    /// `h = −(2aH + b)/(Sε)` from solved coefficient fields (spot clamped to their grid).
    OptimalFeedback { a: CoeffField, b: CoeffField },
    /// `h̄ = σS^{1/2+γ}(θ − H)/√ε`.
    NaiveBenchmark,
    /// Never trade.
    Zero,
    /// `h = κ(θ − H)`.
    DeltaTracking { kappa: f64 },
    CustomRate {
        name: String,
        rate: Arc<dyn Fn(&PolicyInput) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl StrategySpec {
    pub fn name(&self) -> String {
        match self {
            StrategySpec::OptimalFeedback { .. } => "optimal".into(),
            StrategySpec::NaiveBenchmark => "naive".into(),
            StrategySpec::Zero => "zero".into(),
            StrategySpec::DeltaTracking { kappa } => format!("delta-tracking(kappa={kappa})"),
            StrategySpec::CustomRate { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn rate(&self, params: &ModelParams, x: &PolicyInput) -> f64 {
        match self {
            StrategySpec::OptimalFeedback { a, b } => {
                let v_h = 2.0 * a.interpolate_clamped(x.t, x.s) * x.holdings
                    + b.interpolate_clamped(x.t, x.s);
                -v_h / (x.s * params.eps)
            }
            StrategySpec::NaiveBenchmark => naive_rate(params, x.theta, x.holdings, x.s),
            StrategySpec::Zero => 0.0,
            StrategySpec::DeltaTracking { kappa } => kappa * (x.theta - x.holdings),
            StrategySpec::CustomRate { rate, .. } => rate(x),
        }
    }
}

/// Benchmark rate `σS^{1/2+γ}(θ − H)ε^{−1/2}`: relaxes `H` towards `θ`.
pub fn naive_rate(params: &ModelParams, theta: f64, holdings: f64, s: f64) -> f64 {
    params.sigma * s.powf(0.5 + params.gamma) * (theta - holdings) / params.eps.sqrt()
}

/// Market, claim and Monte-Carlo settings shared by every strategy in a run.
#[derive(Debug, Clone)]
pub struct MarketSetup {
    pub params: ModelParams,
    pub option: OptionSpec,
    pub surface: Arc<PriceSurface>,
    pub s0: f64,
    pub h0: f64,
    pub x0: f64,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

impl MarketSetup {
    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_paths < 2 {
            return Err(Error::InvalidInput("need at least two paths".into()));
        }
        if !(self.s0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "initial spot must be positive, got {}",
                self.s0
            )));
        }
        if (self.grid.maturity() - self.option.maturity).abs() > 1e-12 * self.option.maturity {
            return Err(Error::InvalidInput(format!(
                "rollout grid ends at {} but the claim matures at {}",
                self.grid.maturity(),
                self.option.maturity
            )));
        }
        Ok(())
    }

    /// `q₀ = q(t₀, S₀)`.
    pub fn initial_price(&self) -> Result<f64> {
        price_european(&self.option, &self.params, self.grid.start(), self.s0)
    }
}

/// Pathwise totals of one rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathOutcome {
    pub tracking: f64,
    pub liquidity: f64,
    /// `G(S_T) − ξ_T`.
    pub terminal_error: f64,
    /// `∫H²σ²S^{2+2γ}dt`.
    pub holdings_qv: f64,
}

/// Rolls one strategy along a given spot path.
pub fn rollout(
    strategy: &StrategySpec,
    setup: &MarketSetup,
    spots: &[f64],
    path_index: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<PathOutcome> {
    let params = &setup.params;
    let nodes = setup.grid.nodes();
    let mut h_cur = setup.h0;
    let mut xi = setup.h0 * setup.s0 + setup.x0;
    let mut out = PathOutcome::default();
    for k in 0..nodes.len() - 1 {
        let (t, s) = (nodes[k], spots[k]);
        let dt = nodes[k + 1] - t;
        let (theta, rate) = if s > 0.0 {
            let theta = setup.surface.theta_at(t, s);
            let x = PolicyInput {
                t,
                s,
                holdings: h_cur,
                theta,
            };
            (theta, strategy.rate(params, &x))
        } else {
            (setup.surface.theta_at(t, 0.0), 0.0)
        };
        if s > 0.0 {
            let var = params.local_variance(s);
            out.liquidity += s * 0.5 * params.eps * rate * rate * dt;
            out.tracking += 0.5 * (theta - h_cur) * (theta - h_cur) * var * dt;
            out.holdings_qv += h_cur * h_cur * var * dt;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRow {
                t,
                s,
                holdings: h_cur,
                theta,
                rate,
                cum_liquidity_cost: out.liquidity,
                xi,
            });
        }
        xi += h_cur * (spots[k + 1] - s);
        h_cur += rate * dt;
        if !(out.liquidity.is_finite()
            && out.tracking.is_finite()
            && xi.is_finite()
            && h_cur.is_finite())
        {
            return Err(Error::Numerical(format!(
                "non-finite accumulator for strategy {} on path {path_index} at step {k}",
                strategy.name()
            )));
        }
    }
    let s_t = *spots.last().unwrap();
    if let Some(tr) = trace {
        tr.push(TraceRow {
            t: setup.grid.maturity(),
            s: s_t,
            holdings: h_cur,
            theta: setup.surface.theta_at(setup.grid.maturity(), s_t),
            rate: 0.0,
            cum_liquidity_cost: out.liquidity,
            xi,
        });
    }
    out.terminal_error = setup.option.payoff.value(s_t) - xi;
    Ok(out)
}

/// Mean and standard error of a sample, summed pairwise for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if xs.len() > 1 {
            pairwise_sum(&dev) / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

/// Monte-Carlo cost estimates of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub format: &'static str,
    pub strategy: String,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub threads: usize,
    /// `½E∫(θ − H)²σ²S^{2+2γ}dt`
    pub tracking_term: Estimate,
    /// `E∫S(ε/2)h²dt`
    pub liquidity_term: Estimate,
    /// tracking + liquidity
    pub psi: Estimate,
    /// `½(x₀ + H₀S₀ − q₀)²`
    pub initial_mismatch: f64,
    /// initial mismatch + ψ
    pub psi0: Estimate,
    /// `½E(G(S_T) − ξ_T)²`
    pub terminal_sq_error: Estimate,
    /// terminal squared error + liquidity: the undecomposed form of ψ₀
    pub psi0_direct: Estimate,
    /// `psi0_direct − psi0`, with its paired standard error
    pub psi0_gap: Estimate,
    /// `E∫H²σ²S^{2+2γ}dt`
    pub holdings_qv: Estimate,
    pub absorbed_paths: usize,
}

pub const COST_REPORT_FORMAT: &str = "cevhedge-cost-report/1";

impl CostReport {
    fn from_outcomes(
        strategy: String,
        setup: &MarketSetup,
        outcomes: &[PathOutcome],
        absorbed_paths: usize,
        initial_mismatch: f64,
    ) -> Self {
        let col =
            |f: &dyn Fn(&PathOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
        let tracking = col(&|o| o.tracking);
        let liquidity = col(&|o| o.liquidity);
        let psi = col(&|o| o.tracking + o.liquidity);
        let terminal = col(&|o| 0.5 * o.terminal_error * o.terminal_error);
        let direct = col(&|o| 0.5 * o.terminal_error * o.terminal_error + o.liquidity);
        let gap =
            col(&|o| 0.5 * o.terminal_error * o.terminal_error - initial_mismatch - o.tracking);
        let psi_est = Estimate::of(&psi);
        Self {
            format: COST_REPORT_FORMAT,
            strategy,
            n_paths: outcomes.len(),
            n_steps: setup.grid.n_steps(),
            seed: setup.seed,
            threads: rayon::current_num_threads(),
            tracking_term: Estimate::of(&tracking),
            liquidity_term: Estimate::of(&liquidity),
            psi: psi_est,
            initial_mismatch,
            psi0: Estimate {
                mean: initial_mismatch + psi_est.mean,
                std_error: psi_est.std_error,
            },
            terminal_sq_error: Estimate::of(&terminal),
            psi0_direct: Estimate::of(&direct),
            psi0_gap: Estimate::of(&gap),
            holdings_qv: Estimate::of(&col(&|o| o.holdings_qv)),
            absorbed_paths,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-path outcomes of several strategies on common paths: `[path][strategy]`.
fn run_common(
    strategies: &[&StrategySpec],
    setup: &MarketSetup,
) -> Result<(Vec<Vec<PathOutcome>>, usize)> {
    setup.validate()?;
    let rows: Vec<(Vec<PathOutcome>, bool)> = (0..setup.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(setup.seed, p as u64);
            let path = euler_path(&setup.params, setup.s0, &setup.grid, &mut rng);
            let outs = strategies
                .iter()
                .map(|st| rollout(st, setup, &path.spots, p, None))
                .collect::<Result<Vec<_>>>()?;
            Ok((outs, path.absorbed_at.is_some()))
        })
        .collect::<Result<_>>()?;
    let absorbed = rows.iter().filter(|r| r.1).count();
    Ok((rows.into_iter().map(|r| r.0).collect(), absorbed))
}

/// Cost report of one strategy.
pub fn simulate_hedge(strategy: &StrategySpec, setup: &MarketSetup) -> Result<CostReport> {
    let (rows, absorbed) = run_common(&[strategy], setup)?;
    let outcomes: Vec<PathOutcome> = rows.into_iter().map(|r| r[0]).collect();
    let q0 = setup.initial_price()?;
    let mismatch = 0.5 * (setup.x0 + setup.h0 * setup.s0 - q0).powi(2);
    Ok(CostReport::from_outcomes(
        strategy.name(),
        setup,
        &outcomes,
        absorbed,
        mismatch,
    ))
}

/// Paired comparison of two strategies' ψ.
#[derive(Debug, Clone, Serialize)]
pub struct PairedDifference {
    pub first: String,
    pub second: String,
    /// `ψ(first) − ψ(second)`
    pub diff: Estimate,
    pub verdict: Ordering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// below by more than three paired standard errors
    Lower,
    Higher,
    Indistinguishable,
}

/// Cost reports on common paths plus all pairwise ψ differences.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub reports: Vec<CostReport>,
    pub pairs: Vec<PairedDifference>,
}

impl Comparison {
    pub fn report(&self, name: &str) -> Option<&CostReport> {
        self.reports.iter().find(|r| r.strategy == name)
    }

    pub fn pair(&self, first: &str, second: &str) -> Option<&PairedDifference> {
        self.pairs
            .iter()
            .find(|p| p.first == first && p.second == second)
    }
}

pub fn compare_strategies(strategies: &[StrategySpec], setup: &MarketSetup) -> Result<Comparison> {
    let refs: Vec<&StrategySpec> = strategies.iter().collect();
    let (rows, absorbed) = run_common(&refs, setup)?;
    let q0 = setup.initial_price()?;
    let mismatch = 0.5 * (setup.x0 + setup.h0 * setup.s0 - q0).powi(2);
    let column = |k: usize| -> Vec<PathOutcome> { rows.iter().map(|r| r[k]).collect() };
    let reports = (0..strategies.len())
        .map(|k| {
            CostReport::from_outcomes(strategies[k].name(), setup, &column(k), absorbed, mismatch)
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..strategies.len() {
        for j in 0..strategies.len() {
            if i == j {
                continue;
            }
            let d: Vec<f64> = rows
                .iter()
                .map(|r| (r[i].tracking + r[i].liquidity) - (r[j].tracking + r[j].liquidity))
                .collect();
            let diff = Estimate::of(&d);
            let verdict = if diff.mean < -3.0 * diff.std_error {
                Ordering::Lower
            } else if diff.mean > 3.0 * diff.std_error {
                Ordering::Higher
            } else {
                Ordering::Indistinguishable
            };
            pairs.push(PairedDifference {
                first: strategies[i].name(),
                second: strategies[j].name(),
                diff,
                verdict,
            });
        }
    }
    Ok(Comparison { reports, pairs })
}

/// Paired `ψ(Δt) − ψ(Δt/2)` for the configured rollout grid.
///
/// Each spot path is simulated on the halved grid; the coarse rollout sees the
/// same path at every other node, so the difference isolates the policy's
/// time-discretization error. For a first-order scheme the bias of `ψ(Δt)` is
/// about twice this difference.
pub fn step_refinement(strategy: &StrategySpec, setup: &MarketSetup) -> Result<Estimate> {
    setup.validate()?;
    let nodes = setup.grid.nodes();
    let mut fine_nodes = Vec::with_capacity(2 * nodes.len());
    for w in nodes.windows(2) {
        fine_nodes.push(w[0]);
        fine_nodes.push(0.5 * (w[0] + w[1]));
    }
    fine_nodes.push(setup.grid.maturity());
    let fine = MarketSetup {
        grid: TimeGrid::from_nodes(fine_nodes)?,
        ..setup.clone()
    };
    let diffs: Vec<f64> = (0..setup.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(setup.seed, p as u64);
            let path = euler_path(&setup.params, setup.s0, &fine.grid, &mut rng);
            let coarse_spots: Vec<f64> = path.spots.iter().step_by(2).copied().collect();
            let f = rollout(strategy, &fine, &path.spots, p, None)?;
            let c = rollout(strategy, setup, &coarse_spots, p, None)?;
            Ok((c.tracking + c.liquidity) - (f.tracking + f.liquidity))
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::of(&diffs))
}

/// Finiteness diagnostics for a policy's holdings and trading.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub strategy: String,
    /// `E∫H²σ²S^{2+2γ}dt` at the configured step, with half the paths, and at half the step
    pub holdings_qv: Estimate,
    pub holdings_qv_half_paths: Estimate,
    pub holdings_qv_refined: Estimate,
    /// `E∫l(h)S dt` likewise
    pub liquidity: Estimate,
    pub liquidity_half_paths: Estimate,
    pub liquidity_refined: Estimate,
    pub flagged: bool,
    pub reasons: Vec<String>,
}

/// Growth that counts as divergence under refinement (on top of 3 standard errors).
const DIVERGENCE_GROWTH: f64 = 0.25;

/// Estimates both admissibility functionals, then repeats with half the paths and
/// with the time step halved; flags a functional that moves by more than three
/// standard errors under path doubling, or grows by more than 25% under refinement.
pub fn admissibility_diagnostics(
    strategy: &StrategySpec,
    setup: &MarketSetup,
) -> Result<AdmissibilityReport> {
    let (rows, _) = run_common(&[strategy], setup)?;
    let base: Vec<PathOutcome> = rows.iter().map(|r| r[0]).collect();
    let half = &base[..base.len() / 2];
    let mut refined_nodes = Vec::with_capacity(2 * setup.grid.nodes().len());
    for w in setup.grid.nodes().windows(2) {
        refined_nodes.push(w[0]);
        refined_nodes.push(0.5 * (w[0] + w[1]));
    }
    refined_nodes.push(setup.grid.maturity());
    let refined_setup = MarketSetup {
        grid: TimeGrid::from_nodes(refined_nodes)?,
        ..setup.clone()
    };
    let (rows_r, _) = run_common(&[strategy], &refined_setup)?;
    let refined: Vec<PathOutcome> = rows_r.iter().map(|r| r[0]).collect();

    let est = |xs: &[PathOutcome], f: fn(&PathOutcome) -> f64| {
        Estimate::of(&xs.iter().map(f).collect::<Vec<_>>())
    };
    let qv = |o: &PathOutcome| o.holdings_qv;
    let liq = |o: &PathOutcome| o.liquidity;
    let report_parts = [
        (
            "holdings quadratic variation",
            est(&base, qv),
            est(half, qv),
            est(&refined, qv),
        ),
        (
            "liquidity cost",
            est(&base, liq),
            est(half, liq),
            est(&refined, liq),
        ),
    ];
    let mut reasons = Vec::new();
    for (name, full, halfp, fine) in &report_parts {
        let se_h = (full.std_error.powi(2) + halfp.std_error.powi(2)).sqrt();
        if (full.mean - halfp.mean).abs() > 3.0 * se_h.max(1e-300) && full.mean.abs() > 0.0 {
            reasons.push(format!(
                "{name}: estimate moves from {:.4e} to {:.4e} when doubling paths",
                halfp.mean, full.mean
            ));
        }
        let se_r = (full.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
        if fine.mean - full.mean > 3.0 * se_r && fine.mean > (1.0 + DIVERGENCE_GROWTH) * full.mean {
            reasons.push(format!(
                "{name}: estimate grows from {:.4e} to {:.4e} when halving the time step",
                full.mean, fine.mean
            ));
        }
    }
    let [(_, q_full, q_half, q_fine), (_, l_full, l_half, l_fine)] = report_parts;
    Ok(AdmissibilityReport {
        strategy: strategy.name(),
        holdings_qv: q_full,
        holdings_qv_half_paths: q_half,
        holdings_qv_refined: q_fine,
        liquidity: l_full,
        liquidity_half_paths: l_half,
        liquidity_refined: l_fine,
        flagged: !reasons.is_empty(),
        reasons,
    })
}

/// One step of a rollout trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub s: f64,
    pub holdings: f64,
    pub theta: f64,
    pub rate: f64,
    pub cum_liquidity_cost: f64,
    pub xi: f64,
}

/// Full state history of one path (the same spot path the batch run uses).
pub fn trace_path(
    strategy: &StrategySpec,
    setup: &MarketSetup,
    path_index: usize,
) -> Result<Vec<TraceRow>> {
    setup.validate()?;
    let mut rng = path_rng(setup.seed, path_index as u64);
    let path = euler_path(&setup.params, setup.s0, &setup.grid, &mut rng);
    let mut rows = Vec::with_capacity(path.spots.len());
    rollout(strategy, setup, &path.spots, path_index, Some(&mut rows))?;
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(out: &mut W, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "# cevhedge-trace v1")?;
    writeln!(out, "t,S,H,theta,h,cum_liq_cost,xi")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t, r.s, r.holdings, r.theta, r.rate, r.cum_liquidity_cost, r.xi
        )?;
    }
    Ok(())
}
