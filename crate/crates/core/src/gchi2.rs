//! Central generalised χ² distribution: the law of `Σ dᵢ Zᵢ²` for independent
//! standard normal `Zᵢ` and nonnegative weights `dᵢ`.
//!
//! The CDF is obtained by Imhof's inversion of the characteristic function,
//!
//! ```text
//! F(q) = 1/2 - 1/π ∫₀^∞ sin θ(u) / (u ρ(u)) du
//! θ(u) = ½ Σ atan(dᵢ u) - ½ q u,   ρ(u) = Π (1 + dᵢ² u²)^{1/4}
//! ```
//!
//! The integrand only decays like `u^{-1-m/2}` (m = number of weights), so a
//! plain truncated quadrature is hopeless for small `m`. Beyond the maximum of
//! `θ` the phase is strictly decreasing; the integral is split at the zeros of
//! `sin θ`, which turns the tail into an alternating series of smooth terms that
//! is summed with repeated averaging of partial sums.

use alloc::format;
use alloc::vec::Vec;

use libm::{atan, exp, fabs, log1p, sin};

use crate::error::{Error, Result};
use crate::roots;

const PI: f64 = core::f64::consts::PI;

/// Weights below this fraction of the largest weight are treated as zero.
pub const WEIGHT_CUTOFF: f64 = 1e-12;

/// A central generalised χ² distribution with nonnegative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedChiSquare {
    /// Positive weights, descending.
    weights: Vec<f64>,
}

impl WeightedChiSquare {
    /// Build from raw weights (e.g. eigenvalues). Entries with magnitude below
    /// [`WEIGHT_CUTOFF`] times the largest weight are dropped as round-off;
    /// anything more negative than that is rejected.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("generalised chi-square weights must be finite"));
        }
        let max = weights.iter().copied().fold(0.0f64, f64::max);
        if !(max > 0.0) {
            return Err(Error::domain(
                "at least one generalised chi-square weight must be positive",
            ));
        }
        let cut = WEIGHT_CUTOFF * max;
        if let Some(w) = weights.iter().find(|&&w| w < -cut) {
            return Err(Error::domain(format!("negative generalised chi-square weight {w}")));
        }
        let mut kept: Vec<f64> = weights.iter().copied().filter(|&w| w > cut).collect();
        kept.sort_by(|a, b| b.total_cmp(a));
        Ok(WeightedChiSquare { weights: kept })
    }

    /// `k` unit weights, i.e. χ²(k).
    pub fn chi2(k: usize) -> Self {
        assert!(k > 0);
        WeightedChiSquare {
            weights: alloc::vec![1.0; k],
        }
    }

    /// Retained weights, descending.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of retained weights.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Always `false`: construction requires a positive weight.
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ dᵢ`.
    pub fn mean(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `2 Σ dᵢ²`.
    pub fn variance(&self) -> f64 {
        2.0 * self.weights.iter().map(|d| d * d).sum::<f64>()
    }

    /// `P(Σ dᵢ Zᵢ² <= q)`.
    pub fn cdf(&self, q: f64) -> Result<f64> {
        if !q.is_finite() {
            return Err(Error::domain(format!("generalised chi-square CDF at non-finite {q}")));
        }
        if q <= 0.0 {
            return Ok(0.0);
        }
        let scale = self.weights[0];
        let lams: Vec<f64> = self.weights.iter().map(|w| w / scale).collect();
        imhof(&lams, q / scale)
    }

    /// Quantile: the `q` with `cdf(q) = p`, by bracketing and Brent refinement.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::domain(format!(
                "quantile probability must be in [0, 1), got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(0.0);
        }
        let mut cdf_err = None;
        let mut f = |q: f64| match self.cdf(q) {
            Ok(c) => c - p,
            Err(e) => {
                cdf_err = Some(e);
                f64::NAN
            }
        };
        let start = self.mean() + 3.0 * libm::sqrt(self.variance());
        let hi = roots::grow_upper(&mut f, start)?;
        let root = roots::brent(&mut f, 0.0, hi, 1e-12 * hi, 300);
        if let Some(e) = cdf_err {
            return Err(e);
        }
        root
    }
}

/// CDF of a generalised χ² distribution.
pub fn gchi2_cdf(q: f64, dist: &WeightedChiSquare) -> Result<f64> {
    dist.cdf(q)
}

/// Quantile of a generalised χ² distribution.
pub fn gchi2_quantile(p: f64, dist: &WeightedChiSquare) -> Result<f64> {
    dist.quantile(p)
}

struct Integrand<'a> {
    lams: &'a [f64],
    q: f64,
}

impl Integrand<'_> {
    fn theta(&self, u: f64) -> f64 {
        0.5 * self.lams.iter().map(|l| atan(l * u)).sum::<f64>() - 0.5 * self.q * u
    }

    fn value(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.5 * (self.lams.iter().sum::<f64>() - self.q);
        }
        let log_rho = 0.25 * self.lams.iter().map(|l| log1p(l * l * u * u)).sum::<f64>();
        sin(self.theta(u)) / (u * exp(log_rho))
    }
}

/// Imhof integral for weights normalised to `max = 1`.
fn imhof(lams: &[f64], q: f64) -> Result<f64> {
    let m = lams.len() as f64;
    let g = Integrand { lams, q };
    let total: f64 = lams.iter().sum();

    // θ'(u) = ½ Σ λ/(1+λ²u²) - q/2 vanishes at u*; θ decreases afterwards.
    let u_star = if total > q {
        let slope = |u: f64| q - lams.iter().map(|l| l / (1.0 + l * l * u * u)).sum::<f64>();
        let hi = roots::grow_upper(slope, 1.0)?;
        roots::brent(slope, 0.0, hi, 1e-15 * hi, 300)?
    } else {
        0.0
    };

    let mut integral = if u_star > 0.0 {
        adaptive_gk15(&|u| g.value(u), 0.0, u_star, 1e-14)
    } else {
        0.0
    };

    let theta_star = g.theta(u_star);
    let mut n = libm::ceil(theta_star / PI) - 1.0;
    // Guard against θ* sitting exactly on a multiple of π.
    if n * PI >= theta_star {
        n -= 1.0;
    }
    let mut prev = u_star;
    let mut partial_sums: Vec<f64> = Vec::new();
    let mut last_estimate = f64::NAN;
    let mut stable = 0;
    for _ in 0..20_000 {
        let level = n * PI;
        let phase = |u: f64| level - g.theta(u);
        // θ(u) < mπ/4 - qu/2, so θ(hi) <= nπ at this hi.
        let hi = (2.0 * (m * PI / 4.0 - level) / q).max(prev) * (1.0 + 1e-12) + 1e-300;
        let zero = roots::brent(phase, prev, hi, 1e-15 * hi, 300)?;
        let piece = adaptive_gk15(&|u| g.value(u), prev, zero, 1e-15);
        integral += piece;
        partial_sums.push(integral);
        prev = zero;
        n -= 1.0;

        let estimate = averaged_limit(&partial_sums);
        if fabs(estimate - last_estimate) < 1e-12 {
            stable += 1;
            if stable >= 3 && partial_sums.len() >= 8 {
                integral = estimate;
                return Ok((0.5 - integral / PI).clamp(0.0, 1.0));
            }
        } else {
            stable = 0;
        }
        last_estimate = estimate;
    }
    Err(Error::numeric(format!(
        "Imhof tail did not converge (q = {q}, {} weights)",
        lams.len()
    )))
}

/// Limit of an alternating sequence of partial sums by repeated pairwise averaging.
fn averaged_limit(sums: &[f64]) -> f64 {
    let depth = sums.len().saturating_sub(1).min(24);
    let mut row: Vec<f64> = sums[sums.len() - 1 - depth..].to_vec();
    while row.len() > 1 {
        for i in 0..row.len() - 1 {
            row[i] = 0.5 * (row[i] + row[i + 1]);
        }
        row.pop();
    }
    row[0]
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One Gauss-Kronrod 7/15 panel: `(kronrod, |kronrod - gauss|)`.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut gs = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            gs += WG[i / 2] * s;
        }
    }
    (k * h, fabs((k - gs) * h))
}

fn adaptive_gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (val, err) = whole;
        if err <= tol || depth >= 40 || b - a <= 1e-14 * fabs(a).max(1e-300) {
            return val;
        }
        let mid = 0.5 * (a + b);
        let left = gk15(f, a, mid);
        let right = gk15(f, mid, b);
        recurse(f, a, mid, 0.5 * tol, left, depth + 1) + recurse(f, mid, b, 0.5 * tol, right, depth + 1)
    }
    if b <= a {
        return 0.0;
    }
    let whole = gk15(f, a, b);
    recurse(f, a, b, tol.max(1e-15 * fabs(whole.0)), whole, 0)
}
