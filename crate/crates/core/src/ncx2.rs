//! Noncentral χ² distribution.
//!
//! Density and distribution function are Poisson mixtures of central χ² laws,
//! summed outward from the dominant mixture index with ratio recurrences.
//! Absolute tolerance of the series is [`SERIES_TOL`]; the iteration cap is
//! [`MAX_TERMS`]. When the noncentrality is so large that the series would need
//! more terms than the cap allows, the density switches to the Bessel form with
//! large-argument asymptotics and the distribution function integrates it.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::special::{ln_bessel_i_scaled, ln_chi2_pdf, ln_poisson_pmf, GaussLegendre};

pub const SERIES_TOL: f64 = 1e-12;
pub const MAX_TERMS: usize = 1_000_000;

/// Above this Poisson mean the distribution function is integrated from the density.
const CDF_SERIES_MAX_MEAN: f64 = 1.0e6;
/// Above this Bessel argument the density uses the asymptotic Bessel form.
const PDF_SERIES_MAX_ARG: f64 = 2.0e5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoncentralChiSq {
    df: f64,
    ncp: f64,
}

impl NoncentralChiSq {
    pub fn new(df: f64, ncp: f64) -> Result<Self> {
        if !(df > 0.0 && df.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be positive, got {df}"
            )));
        }
        if !(ncp >= 0.0 && ncp.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noncentrality must be nonnegative, got {ncp}"
            )));
        }
        Ok(Self { df, ncp })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn ncp(&self) -> f64 {
        self.ncp
    }

    pub fn mean(&self) -> f64 {
        self.df + self.ncp
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.df + 4.0 * self.ncp
    }

    /// `j`-th cumulant: `2^{j-1} (j-1)! (df + j·ncp)`, read off the log-MGF.
    pub fn cumulant(&self, j: u32) -> f64 {
        assert!(j >= 1);
        let mut fact = 1.0;
        for i in 1..j {
            fact *= i as f64;
        }
        2f64.powi(j as i32 - 1) * fact * (self.df + j as f64 * self.ncp)
    }

    /// Raw moment `E[X^n]` from the moment–cumulant recurrence
    /// `μ'_n = Σ_{j=1}^{n} C(n-1, j-1) κ_j μ'_{n-j}`.
    pub fn moment(&self, n: u32) -> f64 {
        let mut raw = vec![1.0f64; n as usize + 1];
        for m in 1..=n as usize {
            let mut s = 0.0;
            let mut binom = 1.0; // C(m-1, j-1)
            for j in 1..=m {
                s += binom * self.cumulant(j as u32) * raw[m - j];
                binom = binom * (m - j) as f64 / j as f64;
            }
            raw[m] = s;
        }
        raw[n as usize]
    }

    /// Lyapunov/Hölder bound `E[X^r] ≤ E[X^n]^{r/n}` with `n = ⌈r⌉`, for `r > 0`.
    pub fn holder_moment_bound(&self, r: f64) -> f64 {
        let n = r.ceil().max(1.0) as u32;
        self.moment(n).powf(r / n as f64)
    }

    /// Natural log of `E[X^r]` for real `r > -df/2`, summed over the Poisson mixture
    /// `Σ_j P(j; ncp/2) 2^r Γ(df/2 + j + r) / Γ(df/2 + j)`.
    pub fn ln_fractional_moment(&self, r: f64) -> Result<f64> {
        let half = 0.5 * self.df;
        if r <= -half {
            return Err(Error::Domain(format!(
                "moment of order {r} diverges for df = {}",
                self.df
            )));
        }
        let mu = 0.5 * self.ncp;
        let ln_term = |j: f64| -> f64 {
            ln_poisson_pmf(j, mu)
                + r * std::f64::consts::LN_2
                + statrs::function::gamma::ln_gamma(half + j + r)
                - statrs::function::gamma::ln_gamma(half + j)
        };
        let start = mu.floor();
        let anchor = ln_term(start);
        let mut sum = 1.0;
        let mut ratio = 1.0;
        let mut j = start;
        let mut count = 0usize;
        // upward: t_{j+1}/t_j = μ/(j+1) · (h+j+r)/(h+j)
        loop {
            ratio *= mu / (j + 1.0) * (half + j + r) / (half + j);
            sum += ratio;
            j += 1.0;
            count += 1;
            if (ratio < 1e-17 * sum && j > mu) || count > MAX_TERMS {
                break;
            }
        }
        ratio = 1.0;
        j = start;
        while j > 0.0 {
            ratio *= j / mu * (half + j - 1.0) / (half + j - 1.0 + r);
            sum += ratio;
            j -= 1.0;
            count += 1;
            if ratio < 1e-17 * sum || count > MAX_TERMS {
                break;
            }
        }
        if count > MAX_TERMS {
            return Err(Error::Numerical(format!(
                "fractional moment series did not converge within {MAX_TERMS} terms (df={}, ncp={}, r={r})",
                self.df, self.ncp
            )));
        }
        Ok(anchor + sum.ln())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return if self.df < 2.0 {
                f64::INFINITY
            } else if self.df == 2.0 {
                0.5 * (-0.5 * self.ncp).exp()
            } else {
                0.0
            };
        }
        self.ln_pdf(x).exp()
    }

    /// Log-density at `x > 0`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if self.ncp == 0.0 {
            return ln_chi2_pdf(x, self.df);
        }
        let z = (self.ncp * x).sqrt();
        if z <= PDF_SERIES_MAX_ARG {
            self.ln_pdf_series(x)
        } else {
            self.ln_pdf_bessel(x)
        }
    }

    fn ln_pdf_series(&self, x: f64) -> f64 {
        let mu = 0.5 * self.ncp;
        let half = 0.5 * self.df;
        let q = mu * 0.5 * x;
        // dominant index solves (j+1)(h+j) = q
        let b = half + 1.0;
        let disc = (b * b - 4.0 * (half - q)).max(0.0);
        let j0 = ((-b + disc.sqrt()) / 2.0).max(0.0).floor();
        let anchor = ln_poisson_pmf(j0, mu) + ln_chi2_pdf(x, self.df + 2.0 * j0);
        let mut sum = 1.0;
        let mut t = 1.0;
        let mut j = j0;
        loop {
            t *= q / ((j + 1.0) * (half + j));
            sum += t;
            j += 1.0;
            if t < 1e-17 * sum {
                break;
            }
        }
        t = 1.0;
        j = j0;
        while j > 0.0 {
            t *= j * (half + j - 1.0) / q;
            sum += t;
            j -= 1.0;
            if t < 1e-17 * sum {
                break;
            }
        }
        anchor + sum.ln()
    }

    fn ln_pdf_bessel(&self, x: f64) -> f64 {
        // ½ e^{-(x+λ)/2} (x/λ)^{df/4-1/2} I_{df/2-1}(√(λx)), with the exponent folded
        // into -(√x-√λ)²/2 to avoid cancellation
        let lam = self.ncp;
        let nu = 0.5 * self.df - 1.0;
        let z = (lam * x).sqrt();
        let gap = (x - lam) / (x.sqrt() + lam.sqrt());
        let ln_bessel = if nu >= 0.0 {
            ln_bessel_i_scaled(nu, z)
        } else {
            // I_{-ν} = I_ν + (2/π) sin(νπ) K_ν; K is exponentially negligible here
            ln_bessel_i_scaled(-nu, z)
        };
        -std::f64::consts::LN_2 - 0.5 * gap * gap
            + (0.25 * self.df - 0.5) * ((x - lam) / lam).ln_1p()
            + ln_bessel
    }

    /// Distribution function `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x.is_infinite() {
            return Ok(1.0);
        }
        if 0.5 * self.ncp > CDF_SERIES_MAX_MEAN {
            return self.tail_by_quadrature(x, true);
        }
        self.series_tail(x, true)
    }

    /// Survival function `P(X > x)`.
    pub fn sf(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(1.0);
        }
        if x.is_infinite() {
            return Ok(0.0);
        }
        if 0.5 * self.ncp > CDF_SERIES_MAX_MEAN {
            return self.tail_by_quadrature(x, false);
        }
        self.series_tail(x, false)
    }

    /// `Σ_j P(j; ncp/2) G_j(x/2)` where `G_j` is the lower (`lower = true`) or upper
    /// regularized incomplete gamma at shape `df/2 + j`.
    fn series_tail(&self, x: f64, lower: bool) -> Result<f64> {
        let mu = 0.5 * self.ncp;
        let half = 0.5 * self.df;
        let y = 0.5 * x;
        let j0 = mu.floor();
        let a0 = half + j0;
        let w0 = ln_poisson_pmf(j0, mu).exp();
        let g0 = if lower {
            gamma_lr(a0, y)
        } else {
            gamma_ur(a0, y)
        };
        // d_j = e^{-y} y^{a_j} / Γ(a_j + 1), so P(a+1) = P(a) - d and Q(a+1) = Q(a) + d
        let d0 = ln_poisson_pmf(a0, y).exp();
        let sign = if lower { -1.0 } else { 1.0 };

        let mut total = w0 * g0;
        let mut terms = 1usize;

        // upward
        let (mut w, mut g, mut d, mut j) = (w0, g0, d0, j0);
        loop {
            w *= mu / (j + 1.0);
            g = (g + sign * d).clamp(0.0, 1.0);
            d *= y / (half + j + 1.0);
            j += 1.0;
            total += w * g;
            terms += 1;
            let rest_bound = if j + 2.0 > mu {
                w / (1.0 - mu / (j + 2.0))
            } else {
                f64::INFINITY
            };
            if rest_bound < 0.1 * SERIES_TOL {
                break;
            }
            if terms > MAX_TERMS {
                return Err(self.budget_error(x));
            }
        }
        // downward: d_{j-1} = d_j a_j / y
        let (mut w, mut g, mut d, mut j) = (w0, g0, d0, j0);
        while j > 0.0 {
            w *= j / mu;
            d *= (half + j) / y;
            g = (g - sign * d).clamp(0.0, 1.0);
            j -= 1.0;
            total += w * g;
            terms += 1;
            let r = j / mu;
            if r < 1.0 && w * r / (1.0 - r) < 0.1 * SERIES_TOL {
                break;
            }
            if terms > MAX_TERMS {
                return Err(self.budget_error(x));
            }
        }
        Ok(total.clamp(0.0, 1.0))
    }

    fn budget_error(&self, x: f64) -> Error {
        Error::Numerical(format!(
            "noncentral chi-square series exceeded {MAX_TERMS} terms (df={}, ncp={}, x={x})",
            self.df, self.ncp
        ))
    }

    /// Integrates the density over the lighter tail.
    fn tail_by_quadrature(&self, x: f64, lower: bool) -> Result<f64> {
        let m = self.mean();
        let sd = self.variance().sqrt();
        let lo = (m - 40.0 * sd).max(0.0);
        let hi = m + 40.0 * sd;
        let gl = GaussLegendre::standard();
        let pdf = |t: f64| self.pdf(t);
        let panel = 0.25 * sd;
        let integrate = |a: f64, b: f64| -> f64 {
            if b <= a {
                return 0.0;
            }
            let panels = (((b - a) / panel).ceil() as usize).clamp(1, 4000);
            gl.integrate(pdf, a, b, panels)
        };
        let xc = x.clamp(lo, hi);
        let (left, right) = if x < m {
            let left = integrate(lo, xc);
            (left, 1.0 - left)
        } else {
            let right = integrate(xc, hi);
            (1.0 - right, right)
        };
        let v = if lower { left } else { right };
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "quadrature of noncentral chi-square density failed (df={}, ncp={}, x={x})",
                self.df, self.ncp
            )));
        }
        Ok(v.clamp(0.0, 1.0))
    }

    /// One draw via the Poisson mixture: `N ~ Poisson(ncp/2)`, `X ~ 2·Gamma(df/2 + N)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mu = 0.5 * self.ncp;
        let n = if mu > 0.0 {
            Poisson::new(mu).expect("positive mean").sample(rng)
        } else {
            0.0
        };
        let shape = 0.5 * self.df + n;
        2.0 * Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // (df, ncp, x, ln pdf, cdf, sf) from scipy.stats.ncx2 (Boost backend)
    const REFERENCE: [(f64, f64, f64, f64, f64, f64); 9] = [
        (
            4.0,
            2.0,
            3.0,
            -2.113316961886371,
            0.24627270146198138,
            0.7537272985380187,
        ),
        (
            2.0,
            0.5,
            0.1,
            -0.9806860274351843,
            0.03821846412948689,
            0.9617815358705131,
        ),
        (
            6.0,
            4000.0,
            4100.0,
            -6.049707866473822,
            0.7722878782990785,
            0.22771212170092084,
        ),
        (
            6.0,
            4000.0,
            3800.0,
            -7.08032357005683,
            0.05035176638577947,
            0.9496482336142221,
        ),
        (
            3.5,
            1.2,
            10.0,
            -3.62985191531169,
            0.920244748421357,
            0.07975525157864302,
        ),
        (
            1.0,
            3.0,
            2.0,
            -2.001743020116305,
            0.37447734620034817,
            0.6255226537996518,
        ),
        (
            4.0,
            1.6e6,
            1.603e6,
            -9.456841322206037,
            0.8818159266298388,
            0.11818407337019765,
        ),
        (
            2.0,
            2.0e5,
            1.991e5,
            -8.22138614748647,
            0.15661097466778492,
            0.8433890253322255,
        ),
        (
            4.0,
            5.0e6,
            5.002e6,
            -9.424440048941982,
            0.6723812683579279,
            0.3276187316421065,
        ),
    ];

    #[test]
    fn matches_reference_values() {
        for &(df, ncp, x, lnpdf, cdf, sf) in &REFERENCE {
            let d = NoncentralChiSq::new(df, ncp).unwrap();
            assert!(
                (d.ln_pdf(x) - lnpdf).abs() < 1e-9,
                "ln pdf df={df} ncp={ncp} x={x}: {}",
                d.ln_pdf(x)
            );
            let c = d.cdf(x).unwrap();
            let s = d.sf(x).unwrap();
            assert!(
                (c - cdf).abs() < 1e-10,
                "cdf df={df} ncp={ncp} x={x}: {c} vs {cdf}"
            );
            assert!(
                (s - sf).abs() < 1e-10,
                "sf df={df} ncp={ncp} x={x}: {s} vs {sf}"
            );
        }
    }

    #[test]
    fn central_case_and_support_edge() {
        let d = NoncentralChiSq::new(2.0, 0.0).unwrap();
        assert_eq!(d.mean(), 2.0);
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        // χ²_2 is exponential with mean 2
        assert!((d.cdf(3.0).unwrap() - (1.0 - (-1.5f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn first_moment_is_df_plus_ncp() {
        let d = NoncentralChiSq::new(3.5, 1.2).unwrap();
        assert!((d.moment(1) - 4.7).abs() < 1e-14);
        let var = d.moment(2) - d.moment(1).powi(2);
        assert!((var - d.variance()).abs() < 1e-12);
    }

    #[test]
    fn fractional_moment_agrees_with_integer_recurrence() {
        let d = NoncentralChiSq::new(6.0, 37.5).unwrap();
        for n in 1..5u32 {
            let a = d.ln_fractional_moment(n as f64).unwrap().exp();
            let b = d.moment(n);
            assert!(((a - b) / b).abs() < 1e-12, "n={n}: {a} vs {b}");
        }
        // Hölder bound dominates the exact fractional moment
        let r = 1.7;
        assert!(d.ln_fractional_moment(r).unwrap().exp() <= d.holder_moment_bound(r));
        assert!(d.ln_fractional_moment(-3.0).is_err());
    }

    #[test]
    fn density_integrates_to_cdf() {
        let d = NoncentralChiSq::new(4.0, 2.0).unwrap();
        let gl = GaussLegendre::standard();
        let v = gl.integrate(|t| d.pdf(t), 0.0, 7.5, 64);
        assert!((v - d.cdf(7.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn huge_noncentrality_density_is_normalized() {
        let d = NoncentralChiSq::new(1.0e6 + 2.0, 2.5e13).unwrap();
        let sd = d.variance().sqrt();
        let gl = GaussLegendre::standard();
        let lo = d.mean() - 30.0 * sd;
        let hi = d.mean() + 30.0 * sd;
        let mass = gl.integrate(|t| d.pdf(t), lo, hi, 240);
        let mean = gl.integrate(|t| (t - d.mean()) * d.pdf(t), lo, hi, 240);
        assert!((mass - 1.0).abs() < 1e-10, "{mass}");
        assert!(mean.abs() < 1e-6 * sd, "{mean}");
        let c = d.cdf(d.mean()).unwrap();
        let s = d.sf(d.mean()).unwrap();
        assert!((c + s - 1.0).abs() < 1e-10);
        assert!(c > 0.45 && c < 0.55);
    }

    #[test]
    fn sampler_mean_matches() {
        let d = NoncentralChiSq::new(4.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let se = (d.variance() / n as f64).sqrt();
        assert!((m - d.mean()).abs() < 4.0 * se);
    }
}
