use rand::Rng;

use cev_hedge::config::ExperimentConfig;
use cev_hedge::experiments::{market_setup, solve_config};
use cev_hedge::grid::CoeffField;
use cev_hedge::hedging::{simulate_hedge, StrategySpec};
use cev_hedge::hjb::{assemble_value, feynman_kac_psi, optimal_control, psi_apply, HjbSolution};
use cev_hedge::rng::path_rng;

fn config(gamma: f64, n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard(1.0);
    cfg.gamma = gamma;
    cfg.n_times = n;
    cfg.n_spots = n;
    cfg
}

/// Deterministic interior probe nodes `(t, s)`.
fn probes(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = path_rng(seed, 0);
    (0..n)
        .map(|_| (rng.gen_range(0.0..0.9), rng.gen_range(70.0..150.0)))
        .collect()
}

#[test]
fn solved_a_is_a_feynman_kac_fixed_point() {
    let cfg = config(0.0, 200);
    let sol = solve_config(&cfg).unwrap();
    let lower = sol.report.lower.as_ref().unwrap();
    let upper = sol.report.upper.as_ref().unwrap();
    for (k, v) in sol.a.values().iter().enumerate() {
        assert!(lower.values()[k] <= *v && *v <= upper.values()[k]);
    }
    let mut misses = Vec::new();
    for (k, &(t, s)) in probes(20, 1).iter().enumerate() {
        let (a, mc, se) = fk_probe(&sol, &cfg, t, s, 100 + k as u64);
        if (mc - a).abs() > 3.0 * se {
            misses.push(format!(
                "({t:.3}, {s:.1}): a {a:.5} vs FK {mc:.5} ± {se:.5}"
            ));
        }
    }
    assert!(misses.is_empty(), "{misses:#?}");
}

fn fk_probe(
    sol: &HjbSolution,
    cfg: &ExperimentConfig,
    t: f64,
    s: f64,
    seed: u64,
) -> (f64, f64, f64) {
    let (mc, se) = feynman_kac_psi(&sol.a, &cfg.params(), t, s, 20_000, 400, seed).unwrap();
    (sol.a.interpolate(t, s).unwrap(), mc, se)
}

#[test]
fn fixed_point_defect_is_first_order_in_time() {
    let worst = |n_times: usize| {
        let mut cfg = config(0.0, 200);
        cfg.n_times = n_times;
        let sol = solve_config(&cfg).unwrap();
        probes(20, 1)
            .iter()
            .map(|&(t, s)| {
                let (a, mc, _) = fk_probe(&sol, &cfg, t, s, 7);
                (mc - a).abs()
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (worst(200), worst(800));
    assert!(coarse / fine >= 3.0, "{coarse} -> {fine}");
}

#[test]
fn a_lies_below_the_first_iterate_and_the_gap_shrinks() {
    let cfg = config(-0.25, 80);
    let sol = solve_config(&cfg).unwrap();
    let grid = sol.a.grid().clone();
    let a1 = psi_apply(&CoeffField::zeros(grid.clone()), &cfg.params(), &grid).unwrap();
    for (a, top) in sol.a.values().iter().zip(a1.values()) {
        assert!(*a >= 0.0 && *a <= top + 1e-12);
    }
    assert!(sol.a.row(grid.n_times() - 1).iter().all(|&v| v == 0.0));
    let h = &sol.report.gap_history;
    assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{h:?}");
}

#[test]
fn b_is_minus_two_a_times_an_averaged_target() {
    let cfg = config(-0.25, 100);
    let sol = solve_config(&cfg).unwrap();
    let grid = sol.a.grid().clone();
    assert!(sol.b.max() <= 0.0, "call has b ≤ 0");
    for &(t, s) in &probes(20, 2) {
        let (a, b) = (
            sol.a.interpolate(t, s).unwrap(),
            sol.b.interpolate(t, s).unwrap(),
        );
        let theta_eff = -b / (2.0 * a);
        let (i0, _) = grid.times().locate(t);
        let remaining = (i0..grid.n_times()).flat_map(|i| sol.surface.theta.row(i).to_vec());
        let (lo, hi) = remaining.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| {
            (l.min(x), h.max(x))
        });
        assert!(
            lo - 1e-5 <= theta_eff && theta_eff <= hi + 1e-5,
            "θ_eff {theta_eff} outside [{lo}, {hi}] at ({t}, {s})"
        );
    }
}

#[test]
fn value_is_minimized_near_the_target() {
    let cfg = config(0.0, 100);
    let sol = solve_config(&cfg).unwrap();
    assert!(sol.c.min() >= 0.0);
    for &(t, s) in &probes(20, 3) {
        let c = sol.c.interpolate(t, s).unwrap();
        let theta = sol.surface.theta.interpolate(t, s).unwrap();
        let v = assemble_value(&sol.a, &sol.b, &sol.c, theta, s, t).unwrap();
        assert!(v <= c, "V(θ) {v} > c {c} at ({t}, {s})");

        // brute-force minimization over holdings
        let (a, b) = (
            sol.a.interpolate(t, s).unwrap(),
            sol.b.interpolate(t, s).unwrap(),
        );
        let h_star = -b / (2.0 * a);
        let (h_scan, v_scan) = (0..=4000)
            .map(|k| -1.0 + k as f64 * 0.0005)
            .map(|h| (h, assemble_value(&sol.a, &sol.b, &sol.c, h, s, t).unwrap()))
            .fold(
                (0.0, f64::INFINITY),
                |best, x| if x.1 < best.1 { x } else { best },
            );
        assert!((h_scan - h_star).abs() <= 0.0005, "{h_scan} vs {h_star}");
        assert!((v_scan - (c - b * b / (4.0 * a))).abs() <= a * 0.0005f64.powi(2) + 1e-10);
    }
}

#[test]
fn control_is_the_holdings_gradient_of_the_value() {
    let cfg = config(-0.25, 60);
    let sol = solve_config(&cfg).unwrap();
    let params = cfg.params();
    for &(t, s) in &probes(20, 4) {
        for h in [-0.7, 0.0, 0.3, 1.2] {
            let step = 1e-3;
            let v = |x: f64| assemble_value(&sol.a, &sol.b, &sol.c, x, s, t).unwrap();
            let fd = -(v(h + step) - v(h - step)) / (2.0 * step) / (s * params.eps);
            let rate = optimal_control(&sol.a, &sol.b, h, s, t, &params).unwrap();
            assert!(
                (fd - rate).abs() <= 1e-8 * rate.abs().max(1.0),
                "{fd} vs {rate}"
            );
        }
        let (a, b) = (
            sol.a.interpolate(t, s).unwrap(),
            sol.b.interpolate(t, s).unwrap(),
        );
        let h_star = -b / (2.0 * a);
        assert!(
            optimal_control(&sol.a, &sol.b, h_star, s, t, &params)
                .unwrap()
                .abs()
                < 1e-9
        );
        assert!(optimal_control(&sol.a, &sol.b, h_star + 0.1, s, t, &params).unwrap() < 0.0);
        assert!(optimal_control(&sol.a, &sol.b, h_star - 0.1, s, t, &params).unwrap() > 0.0);
    }
}

#[test]
fn far_field_window_does_not_matter() {
    let narrow = config(0.0, 200);
    let mut wide = narrow.clone();
    wide.s_min = 25.0;
    wide.s_max = 400.0;
    wide.n_spots = 400; // same log spacing
    wide.max_iter = 500; // Ψ contracts more slowly where S is large
    let coarse = config(0.0, 100);
    let v = |cfg: &ExperimentConfig| -> (HjbSolution, f64) {
        let sol = solve_config(cfg).unwrap();
        let v = sol.value(0.0, 100.0, 0.0).unwrap();
        (sol, v)
    };
    let ((sn, vn), (sw, vw), (_, vc)) = (v(&narrow), v(&wide), v(&coarse));
    let grid_tol = (vn - vc).abs();
    assert!(
        (vn - vw).abs() < grid_tol,
        "narrow {vn} wide {vw} (grid tolerance {grid_tol})"
    );
    for &(t, s) in &probes(20, 5) {
        let (an, aw) = (
            sn.a.interpolate(t, s).unwrap(),
            sw.a.interpolate(t, s).unwrap(),
        );
        assert!(
            (an - aw).abs() < 1e-3 * an.abs().max(1e-3),
            "a at ({t}, {s}): {an} vs {aw}"
        );
    }
}

fn a_residual(n_times: usize, n_spots: usize) -> f64 {
    let mut cfg = config(0.0, n_times);
    cfg.n_spots = n_spots;
    solve_config(&cfg)
        .unwrap()
        .report
        .residuals
        .unwrap()
        .a_relative
}

#[test]
fn residual_is_small_on_the_reference_grid() {
    let r = a_residual(200, 200);
    assert!(r < 1e-2, "relative a-residual {r} on 200×200");
}

#[test]
fn residual_halves_when_the_grid_is_doubled() {
    let (coarse, fine) = (a_residual(100, 100), a_residual(200, 200));
    assert!(coarse / fine >= 1.8, "{coarse} -> {fine}");
}

#[test]
fn cheaper_trading_cannot_cost_more() {
    let psi = |eps: f64| {
        let mut cfg = config(-0.25, 80);
        cfg.eps = eps;
        cfg.n_paths = 20_000;
        cfg.n_steps = 250;
        let sol = solve_config(&cfg).unwrap();
        let setup =
            market_setup(&cfg, cfg.params(), std::sync::Arc::new(sol.surface.clone())).unwrap();
        let opt = StrategySpec::OptimalFeedback {
            a: sol.a.clone(),
            b: sol.b.clone(),
        };
        simulate_hedge(&opt, &setup).unwrap().psi
    };
    let (cheap, dear) = (psi(0.005), psi(0.02));
    assert!(
        cheap.mean < dear.mean - 3.0 * (cheap.std_error.powi(2) + dear.std_error.powi(2)).sqrt()
    );
}
