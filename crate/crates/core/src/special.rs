//! Special functions used by the noncentral χ² kernel and the pricers.
//!
//! Poisson and gamma densities follow Loader's saddle-point formulation so that
//! log-weights keep full relative precision for large arguments. Bessel
//! functions are only needed in exponentially scaled log form.

use std::f64::consts::PI;
use std::sync::OnceLock;

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling-formula remainder `ln Γ(n+1) - (n+½) ln n + n - ln √(2π)`.
pub fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation near `x = np`.
pub fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let s0 = (x - np) * v;
        let mut s = s0;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `ln(e^{-λ} λ^x / Γ(x+1))` for real `x ≥ 0`.
pub fn ln_poisson_pmf(x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x == 0.0 {
        return -lambda;
    }
    if !lambda.is_finite() {
        return f64::NEG_INFINITY;
    }
    -stirlerr(x) - bd0(x, lambda) - 0.5 * (2.0 * PI * x).ln()
}

/// Log-density of the central χ² law with `df` degrees of freedom at `x > 0`.
pub fn ln_chi2_pdf(x: f64, df: f64) -> f64 {
    let shape = 0.5 * df;
    let y = 0.5 * x;
    if shape < 1.0 {
        ln_poisson_pmf(shape, y) + shape.ln() - x.ln()
    } else {
        ln_poisson_pmf(shape - 1.0, y) - std::f64::consts::LN_2
    }
}

/// `ln I_ν(z) - z` for `ν ≥ 0`, `z > 0`.
pub fn ln_bessel_i_scaled(nu: f64, z: f64) -> f64 {
    debug_assert!(nu >= 0.0 && z > 0.0);
    if z * z < 4.0e10 {
        ln_bessel_i_series(nu, z) - z
    } else if nu * nu < z / 20.0 {
        ln_bessel_i_hankel_scaled(nu, z)
    } else {
        ln_bessel_i_debye_scaled(nu, z)
    }
}

fn ln_bessel_i_series(nu: f64, z: f64) -> f64 {
    // terms (z/2)^{2j+ν} / (j! Γ(j+ν+1)), summed outward from the largest one
    let q = 0.25 * z * z;
    let j_peak = {
        let b = nu + 2.0;
        let c = nu + 1.0 - q;
        let disc = (b * b - 4.0 * c).max(0.0);
        ((-b + disc.sqrt()) / 2.0).max(0.0).floor()
    };
    let half_ln = (0.5 * z).ln();
    let ln_peak =
        (2.0 * j_peak + nu) * half_ln - ln_gamma(j_peak + 1.0) - ln_gamma(j_peak + nu + 1.0);
    let mut sum = 1.0;
    let mut t = 1.0;
    let mut j = j_peak;
    loop {
        t *= q / ((j + 1.0) * (j + nu + 1.0));
        sum += t;
        j += 1.0;
        if t < 1e-17 * sum {
            break;
        }
    }
    t = 1.0;
    j = j_peak;
    while j > 0.0 {
        t *= j * (j + nu) / q;
        sum += t;
        j -= 1.0;
        if t < 1e-17 * sum {
            break;
        }
    }
    ln_peak + sum.ln()
}

fn ln_bessel_i_hankel_scaled(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = -term * (mu - odd * odd) / (kf * 8.0 * z);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum.ln() - 0.5 * (2.0 * PI * z).ln()
}

fn ln_bessel_i_debye_scaled(nu: f64, z: f64) -> f64 {
    let zeta = z / nu;
    let root = (1.0 + zeta * zeta).sqrt();
    let p = 1.0 / root;
    // ν η - z with η = √(1+ζ²) + ln(ζ / (1 + √(1+ζ²)))
    let eta_minus = nu / (root + zeta) - nu * (1.0 / zeta).asinh();
    let p2 = p * p;
    let u1 = p * (3.0 - 5.0 * p2) / 24.0;
    let u2 = p2 * (81.0 + p2 * (-462.0 + p2 * 385.0)) / 1152.0;
    let u3 = p * p2 * (30375.0 + p2 * (-369_603.0 + p2 * (765_765.0 - p2 * 425_425.0))) / 414_720.0;
    let u4 = p2
        * p2
        * (4_465_125.0
            + p2 * (-94_121_676.0
                + p2 * (349_922_430.0 + p2 * (-446_185_740.0 + p2 * 185_910_725.0))))
        / 39_813_120.0;
    let u5 = p
        * p2
        * p2
        * (1_519_035_525.0
            + p2 * (-49_286_948_607.0
                + p2 * (284_499_769_554.0
                    + p2 * (-614_135_872_350.0
                        + p2 * (566_098_157_625.0 - p2 * 188_699_385_875.0)))))
        / 6_688_604_160.0;
    let inv = 1.0 / nu;
    let series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * (u4 + inv * u5))));
    eta_minus - 0.5 * (2.0 * PI * nu).ln() - 0.25 * (1.0 + zeta * zeta).ln() + series.ln()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pn1 = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared 20-point rule.
    pub fn standard() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(20))
    }

    /// Composite integral of `f` over `[lo, hi]` split into `panels` equal pieces.
    pub fn integrate<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        lo: f64,
        hi: f64,
        panels: usize,
    ) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let width = (hi - lo) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let mid = a + 0.5 * width;
            let half = 0.5 * width;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + half * x);
            }
            total += s * half;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values from mpmath at 40 digits: log(besseli(nu, z)) - z
    #[test]
    fn bessel_scaled_matches_reference() {
        let cases = [
            // (nu, z, ln(ive(nu, z)))
            (0.5, 1.0, -1.0643519910735317),
            (2.0, 10.0, -2.267403285958575),
            (2.0, 3.0e5, -7.224713660034259),
            (1.0e3, 1.0e6, -8.326693895520238),
            (5.0e5, 2.5e13, -16.348887003603043),
            (150.0, 2.0e5, -7.078224368957201),
        ];
        for (nu, z, want) in cases {
            let got = ln_bessel_i_scaled(nu, z);
            assert!((got - want).abs() < 1e-9, "nu={nu} z={z}: {got} vs {want}");
        }
    }

    #[test]
    fn poisson_log_pmf_is_exact_for_integers() {
        for &(k, lam) in &[(0.0, 3.0), (3.0, 3.0), (50.0, 40.0), (1000.0, 1020.5)] {
            let direct = -lam + k * f64::ln(lam) - ln_gamma(k + 1.0);
            assert!((ln_poisson_pmf(k, lam) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::new(20);
        let v = gl.integrate(|x| x.powi(7) - 3.0 * x * x + 1.0, -1.0, 2.0, 1);
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0) + 3.0;
        assert!((v - exact).abs() < 1e-12);
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.3) + norm_cdf(-1.3) - 1.0).abs() < 1e-15);
        assert!((norm_cdf(0.1) - 0.539827837277029).abs() < 1e-14);
    }
}
