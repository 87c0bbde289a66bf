//! Chi-square quantiles and sample covariance.
//!
//! The quantile is obtained by bisecting the chi-square CDF, which is the
//! regularized lower incomplete gamma function `P(dof/2, x/2)`. `P` follows
//! the classic split: a power series for `x < a + 1` and a Lentz-style
//! continued fraction for the upper tail otherwise, with a Lanczos
//! log-gamma supplying the normalization. No table constants are baked in.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Lanczos g=7, n=9 coefficients.
#[rustfmt::skip]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
   -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
   -176.615_029_162_140_59,
    12.507_343_278_686_905,
   -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos argument in its accurate range.
        let pi = core::f64::consts::PI;
        return fmath::ln(pi / fmath::sin(pi * x)) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    let half_ln_2pi = 0.918_938_533_204_672_7;
    half_ln_2pi + (x + 0.5) * fmath::ln(t) - t + fmath::ln(acc)
}

/// Regularized lower incomplete gamma `P(a, x)` for `a > 0`, `x >= 0`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_contfrac(a, x)
    }
}

fn gamma_scale(a: f64, x: f64) -> f64 {
    fmath::exp(a * fmath::ln(x) - x - ln_gamma(a))
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if fmath::abs(term) < fmath::abs(sum) * 1e-17 {
            break;
        }
    }
    sum * gamma_scale(a, x)
}

fn gamma_q_contfrac(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b.max(tiny);
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if fmath::abs(d) < tiny {
            d = tiny;
        }
        c = b + an / c;
        if fmath::abs(c) < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if fmath::abs(delta - 1.0) < 1e-17 {
            break;
        }
    }
    h * gamma_scale(a, x)
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-square needs dof >= 1".into()));
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_p(dof as f64 / 2.0, x / 2.0))
}

/// Critical value `q` with `P(X > q) = alpha` for `X ~ chi2(dof)`.
///
/// Bisection over `[0, dof + 40]`, a bracket that covers every significance
/// level this pipeline uses (upper tails down to well below 1e-6 for dof 3).
pub fn chi2_quantile(dof: u32, alpha: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-square needs dof >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    let target = 1.0 - alpha;
    let mut lo = 0.0;
    let mut hi = dof as f64 + 40.0;
    if chi2_cdf(dof, hi)? < target {
        return Err(Error::NoConvergence(format!(
            "chi-square quantile for alpha {alpha} lies outside the bracket [0, {hi}]"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sample mean and covariance of a point cloud.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub mean: Vec<f64>,
    /// `[n, n]`, symmetric positive semidefinite by construction.
    pub matrix: Tensor,
}

/// Two-pass covariance of `points` given as an `[S, n]` matrix.
///
/// `unbiased` divides by `S - 1` (needs `S >= 2`); otherwise by `S`.
pub fn sample_covariance(points: &Tensor, unbiased: bool) -> Result<Covariance> {
    let (s, n) = points.dims2()?;
    let needed = if unbiased { 2 } else { 1 };
    if s < needed {
        return Err(Error::TooFewSamples { needed, got: s });
    }
    points.ensure_finite("covariance input")?;

    let mut mean = alloc::vec![0.0; n];
    for i in 0..s {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += points.at2(i, j);
        }
    }
    for m in mean.iter_mut() {
        *m /= s as f64;
    }

    let denom = if unbiased { (s - 1) as f64 } else { s as f64 };
    let mut matrix = Tensor::zeros(&[n, n]);
    for i in 0..s {
        for j in 0..n {
            let dj = points.at2(i, j) - mean[j];
            for k in j..n {
                let dk = points.at2(i, k) - mean[k];
                let v = matrix.at2(j, k) + dj * dk;
                matrix.set2(j, k, v);
            }
        }
    }
    for j in 0..n {
        for k in j..n {
            let v = matrix.at2(j, k) / denom;
            matrix.set2(j, k, v);
            matrix.set2(k, j, v);
        }
    }
    Ok(Covariance { mean, matrix })
}
