use std::sync::Arc;

use cev_hedge::cev::euler_path;
use cev_hedge::config::ExperimentConfig;
use cev_hedge::experiments::{market_setup, solve_config, sweep};
use cev_hedge::hedging::{
    admissibility_diagnostics, compare_strategies, rollout, step_refinement, StrategySpec,
};
use cev_hedge::rng::path_rng;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard(1.0);
    cfg.n_times = 80;
    cfg.n_spots = 80;
    cfg.n_paths = 20_000;
    cfg.n_steps = 200;
    cfg
}

#[test]
fn decomposition_holds_for_every_strategy_and_start() {
    let sol = solve_config(&small()).unwrap();
    for (h0, x0) in [(0.0, None), (0.3, Some(2.0)), (1.0, Some(-50.0))] {
        let mut cfg = small();
        cfg.h0 = h0;
        if let Some(x) = x0 {
            cfg.x0 = cev_hedge::config::InitialCash::Value(x);
        }
        let setup = market_setup(&cfg, cfg.params(), Arc::new(sol.surface.clone())).unwrap();
        let strategies = [
            StrategySpec::OptimalFeedback {
                a: sol.a.clone(),
                b: sol.b.clone(),
            },
            StrategySpec::NaiveBenchmark,
            StrategySpec::Zero,
            StrategySpec::DeltaTracking { kappa: 10.0 },
        ];
        for r in &compare_strategies(&strategies, &setup).unwrap().reports {
            let g = r.psi0_gap;
            assert!(
                g.mean.abs() <= 3.0 * g.std_error,
                "H0 = {h0}, {}: gap {g:?}",
                r.strategy
            );
            assert!(r.tracking_term.mean >= 0.0 && r.liquidity_term.mean >= 0.0);
        }
    }
}

#[test]
fn cost_accumulators_are_nonnegative_on_every_path() {
    let cfg = small();
    let sol = solve_config(&cfg).unwrap();
    let setup = market_setup(&cfg, cfg.params(), Arc::new(sol.surface.clone())).unwrap();
    let strategies = [
        StrategySpec::OptimalFeedback {
            a: sol.a.clone(),
            b: sol.b.clone(),
        },
        StrategySpec::NaiveBenchmark,
        StrategySpec::DeltaTracking { kappa: 50.0 },
    ];
    for p in 0..2_000 {
        let mut rng = path_rng(cfg.seed, p as u64);
        let path = euler_path(&setup.params, setup.s0, &setup.grid, &mut rng);
        for st in &strategies {
            let o = rollout(st, &setup, &path.spots, p, None).unwrap();
            assert!(o.tracking >= 0.0 && o.liquidity >= 0.0 && o.holdings_qv >= 0.0);
        }
    }
}

#[test]
fn optimal_policy_is_admissible() {
    let cfg = small();
    let sol = solve_config(&cfg).unwrap();
    let setup = market_setup(&cfg, cfg.params(), Arc::new(sol.surface.clone())).unwrap();
    let opt = StrategySpec::OptimalFeedback {
        a: sol.a.clone(),
        b: sol.b.clone(),
    };
    let rep = admissibility_diagnostics(&opt, &setup).unwrap();
    assert!(!rep.flagged, "{:?}", rep.reasons);
    assert!(rep.holdings_qv.mean.is_finite() && rep.liquidity.mean.is_finite());
}

#[test]
fn halving_the_rollout_step_moves_psi_by_less_than_its_standard_error() {
    let mut cfg = ExperimentConfig::standard(1.0);
    cfg.n_paths = 100_000;
    cfg.n_steps = 500;
    let sol = solve_config(&cfg).unwrap();
    let setup = market_setup(&cfg, cfg.params(), Arc::new(sol.surface.clone())).unwrap();
    let opt = StrategySpec::OptimalFeedback {
        a: sol.a.clone(),
        b: sol.b.clone(),
    };
    let psi = compare_strategies(std::slice::from_ref(&opt), &setup)
        .unwrap()
        .reports[0]
        .psi;
    let step = step_refinement(&opt, &setup).unwrap();
    assert!(
        step.mean.abs() < psi.std_error,
        "ψ(Δt) − ψ(Δt/2) = {:.5} ± {:.5}, MC standard error of ψ {:.5}",
        step.mean,
        step.std_error,
        psi.std_error
    );
}

#[test]
fn sweep_respects_the_upper_bound() {
    let mut cfg = small();
    cfg.n_paths = 5_000;
    let res = sweep(&cfg, &[0.01, 0.1, 0.001], &[1, 2]).unwrap();
    let eps: Vec<f64> = res.rows.iter().map(|r| r.eps).collect();
    assert_eq!(eps, [0.1, 0.01, 0.001]);
    for r in &res.rows {
        assert!(
            r.v_opt <= r.psi_naive.mean + 3.0 * r.psi_naive.std_error,
            "ε = {}: V {} vs ψ(naive) {:?}",
            r.eps,
            r.v_opt,
            r.psi_naive
        );
        assert!(r.naive_minus_opt.mean > -3.0 * r.naive_minus_opt.std_error);
    }
    assert!(res.decay_slope.unwrap() < 0.0);
}
