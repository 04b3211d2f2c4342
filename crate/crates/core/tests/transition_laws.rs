use cev_hedge::cev::{sample_transition_exact, simulate_paths, spot_power_moment, Transition};
use cev_hedge::hedging::Estimate;
use cev_hedge::params::{ModelParams, TimeGrid};

fn params(sigma: f64, gamma: f64) -> ModelParams {
    ModelParams::new(sigma, gamma, 0.01).unwrap()
}

/// `sup |F_n − F|` of a sample against a reference CDF.
fn ks_one_sample(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // step over ties (the absorption atom)
        let mut j = i;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        d = d
            .max((j as f64 / n - f).abs())
            .max((i as f64 / n - f).abs());
        i = j;
    }
    d
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[test]
fn exact_sampler_matches_its_cdf() {
    for (p, s) in [(params(0.2, -0.25), 100.0), (params(0.5, -0.5), 1.0)] {
        let law = Transition::new(&p, s, 1.0).unwrap();
        let xs = sample_transition_exact(&p, s, 1.0, 100_000, 5).unwrap();
        let d = ks_one_sample(xs, |x| law.cdf(x).unwrap());
        assert!(d < 0.01, "Kolmogorov distance {d} for s = {s}");
    }
}

#[test]
fn exact_and_euler_terminal_laws_agree() {
    for (p, s) in [(params(0.2, -0.25), 100.0), (params(0.4, -0.5), 4.0)] {
        let grid = TimeGrid::uniform(0.0, 1.0, 2048).unwrap();
        let euler = simulate_paths(&p, s, &grid, 100_000, 11)
            .unwrap()
            .terminal_spots();
        let exact = sample_transition_exact(&p, s, 1.0, 100_000, 12).unwrap();
        let d = ks_two_sample(euler, exact);
        assert!(
            d < 0.02,
            "Kolmogorov distance {d} for (σ, γ, s) = ({}, {}, {s})",
            p.sigma,
            p.gamma
        );
    }
}

#[test]
fn exact_samples_are_a_martingale() {
    for gamma in [-0.5, -0.25, -0.1] {
        let p = params(0.3, gamma);
        let xs = sample_transition_exact(&p, 100.0, 1.0, 1_000_000, 3).unwrap();
        let e = Estimate::of(&xs);
        assert!(
            (e.mean - 100.0).abs() < 3.0 * e.std_error,
            "γ = {gamma}: {e:?}"
        );
    }
}

#[test]
fn euler_paths_are_a_martingale_with_absorption() {
    for gamma in [-0.5, -0.25, 0.0] {
        let p = params(0.6, gamma);
        let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let set = simulate_paths(&p, 2.0, &grid, 100_000, 9).unwrap();
        let e = Estimate::of(&set.terminal_spots());
        assert!(
            (e.mean - 2.0).abs() < 3.0 * e.std_error,
            "γ = {gamma}: {e:?}"
        );
        for path in &set.paths {
            if let Some(k) = path.absorbed_at {
                assert!(path.spots[k..].iter().all(|&x| x == 0.0));
                assert!(path.spots[..k].iter().all(|&x| x > 0.0));
            }
        }
    }
}

#[test]
fn fractional_moment_matches_exact_samples() {
    let p = params(0.2, -0.25);
    let m = spot_power_moment(&p, 100.0, 0.5, 1.5).unwrap();
    let xs: Vec<f64> = sample_transition_exact(&p, 100.0, 0.5, 1_000_000, 21)
        .unwrap()
        .into_iter()
        .map(|x| x.powf(1.5))
        .collect();
    let e = Estimate::of(&xs);
    assert!(
        (e.mean - m).abs() < 3.0 * e.std_error,
        "moment {m} vs {e:?}"
    );
}

#[test]
fn tiny_step_barely_moves() {
    let p = params(0.2, -0.25);
    let xs = sample_transition_exact(&p, 100.0, 1e-8, 10_000, 2).unwrap();
    assert!(
        xs.iter().all(|&x| (x - 100.0).abs() <= 0.1),
        "{:?}",
        xs.iter().cloned().fold(0.0, f64::max)
    );
}
