//! χ² distribution functions.
//!
//! Everything is evaluated through the regularised incomplete gamma function,
//! with log-space variants so that degrees of freedom up to 10⁴ and deep tails
//! stay finite.

use alloc::format;

use libm::{exp, fabs, lgamma, log, log1p};

use crate::error::{Error, Result};
use crate::roots;

const LN_2: f64 = core::f64::consts::LN_2;
const MAX_ITER: usize = 200_000;

fn check_dof(dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::domain("chi-square degrees of freedom must be positive"));
    }
    Ok(f64::from(dof))
}

/// `ln P(a, x)` via the power series, valid for any `x >= 0` but used for `x < a + 1`.
fn ln_lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 1.0;
    while n < MAX_ITER as f64 {
        term *= x / (a + n);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        n += 1.0;
    }
    a * log(x) - x - lgamma(a + 1.0) + log(sum)
}

/// `ln Q(a, x)` via the Lentz continued fraction, used for `x >= a + 1`.
fn ln_upper_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if fabs(delta - 1.0) < 1e-16 {
            break;
        }
    }
    a * log(x) - x - lgamma(a) + log(h)
}

/// `(ln P(a,x), ln Q(a,x))`.
fn ln_incomplete_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if x.is_infinite() {
        return (0.0, f64::NEG_INFINITY);
    }
    if x < a + 1.0 {
        let lp = ln_lower_series(a, x);
        (lp, ln_one_minus_exp(lp))
    } else {
        let lq = ln_upper_cf(a, x);
        (ln_one_minus_exp(lq), lq)
    }
}

/// `ln(1 - e^l)` for `l <= 0`.
fn ln_one_minus_exp(l: f64) -> f64 {
    if l > -LN_2 {
        log(-libm::expm1(l))
    } else {
        log1p(-exp(l))
    }
}

/// Cumulative distribution function of χ²(dof).
pub fn chi2_cdf(x: f64, dof: u32) -> Result<f64> {
    Ok(exp(chi2_logcdf(x, dof)?))
}

/// Survival function `1 - CDF`, accurate in the upper tail.
pub fn chi2_sf(x: f64, dof: u32) -> Result<f64> {
    let k = check_dof(dof)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("chi-square argument must be >= 0, got {x}")));
    }
    Ok(exp(ln_incomplete_gamma(0.5 * k, 0.5 * x).1))
}

/// Natural log of the CDF, finite wherever the CDF is positive.
pub fn chi2_logcdf(x: f64, dof: u32) -> Result<f64> {
    let k = check_dof(dof)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("chi-square argument must be >= 0, got {x}")));
    }
    Ok(ln_incomplete_gamma(0.5 * k, 0.5 * x).0)
}

/// Natural log of the density.
pub fn chi2_logpdf(x: f64, dof: u32) -> Result<f64> {
    let k = check_dof(dof)?;
    if !(x > 0.0) {
        return Err(Error::domain(format!("chi-square log-density needs x > 0, got {x}")));
    }
    let a = 0.5 * k;
    Ok((a - 1.0) * log(x) - 0.5 * x - a * LN_2 - lgamma(a))
}

/// Mode of χ²(dof): `max(dof - 2, 0)`.
pub fn chi2_mode(dof: u32) -> f64 {
    f64::from(dof.saturating_sub(2))
}

/// Quantile function: the `x` with `chi2_cdf(x, dof) = p`.
pub fn chi2_quantile(p: f64, dof: u32) -> Result<f64> {
    let k = check_dof(dof)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain(format!(
            "quantile probability must be in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if dof == 2 {
        return Ok(-2.0 * log1p(-p));
    }
    // Bracket around the Wilson-Hilferty guess, then refine.
    let z = normal_quantile_approx(p);
    let h = 2.0 / (9.0 * k);
    let wh = k * libm::pow((1.0 - h + z * libm::sqrt(h)).max(1e-3), 3.0);
    let f = |x: f64| -> f64 {
        if p < 0.5 {
            exp(ln_incomplete_gamma(0.5 * k, 0.5 * x).0) - p
        } else {
            (1.0 - p) - exp(ln_incomplete_gamma(0.5 * k, 0.5 * x).1)
        }
    };
    let mut lo = (0.5 * wh).min(k);
    while lo > 1e-300 && f(lo) > 0.0 {
        lo *= 0.25;
    }
    if f(lo) > 0.0 {
        return Ok(lo);
    }
    let hi = roots::grow_upper(f, wh.max(1.0))?;
    roots::brent(f, lo, hi, 1e-15 * hi.max(1e-300), 500)
}

/// Acklam's rational approximation of the standard normal quantile (|rel err| < 1.2e-9).
pub(crate) fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = libm::sqrt(-2.0 * log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile_approx(1.0 - p)
    }
}

/// Upper-tail quantile: the `x` with `chi2_sf(x, dof) = q`, accurate for tiny `q`.
pub fn chi2_isf(q: f64, dof: u32) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::domain(format!(
            "upper-tail probability must be in (0, 1], got {q}"
        )));
    }
    if q >= 0.5 {
        return chi2_quantile(1.0 - q, dof);
    }
    let k = check_dof(dof)?;
    let ln_q = log(q);
    let f = |x: f64| ln_q - ln_incomplete_gamma(0.5 * k, 0.5 * x).1;
    let hi = roots::grow_upper(f, k.max(1.0))?;
    roots::brent(f, 0.0, hi, 1e-15 * hi, 500)
}
