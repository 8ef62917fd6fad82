//! Closed-form results for simple hypothesis tests (`A = I`).
//!
//! With blocks ordered by descending size the nightmare covariance has
//! eigenvalue `i` with multiplicity `N_i - N_{i+1}`, which gives the variance
//! of the naive statistic in closed form. From there an upper bound on the
//! derating quantile follows from the Vysochanskij–Petunin inequality, and a
//! cheap fitted approximation is available for `γ = 0.997`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;

use crate::chi2::chi2_quantile;
use crate::derate::DEFAULT_GAMMA;
use crate::error::{Error, Result};

/// Block sizes sorted descending, with `k` and the average block number `ī`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockProfile {
    sizes: Vec<usize>,
    k: usize,
    i_bar: f64,
}

impl BlockProfile {
    /// Sizes in any order; they are sorted descending.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::domain("block sizes must be positive and non-empty"));
        }
        let mut sorted = sizes.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let k: usize = sorted.iter().sum();
        let weighted: usize = sorted.iter().enumerate().map(|(i, n)| (i + 1) * n).sum();
        Ok(BlockProfile {
            i_bar: weighted as f64 / k as f64,
            sizes: sorted,
            k,
        })
    }

    /// `n` blocks of equal size `size`.
    pub fn uniform(n: usize, size: usize) -> Result<Self> {
        Self::new(&alloc::vec![size; n])
    }

    /// Sizes, descending.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total number of bins.
    pub fn k(&self) -> usize {
        self.k
    }

    /// `ī = Σ i N_i / k` with blocks numbered from 1.
    pub fn i_bar(&self) -> f64 {
        self.i_bar
    }

    /// Nightmare eigenvalues: `i` with multiplicity `N_i - N_{i+1}`.
    pub fn nightmare_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sizes[0]);
        for (idx, &n) in self.sizes.iter().enumerate() {
            let next = self.sizes.get(idx + 1).copied().unwrap_or(0);
            out.extend(core::iter::repeat((idx + 1) as f64).take(n - next));
        }
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }
}

/// `Var = 2(2ī - 1)k` of the naive statistic under the nightmare covariance.
pub fn naive_variance(profile: &BlockProfile) -> f64 {
    2.0 * (2.0 * profile.i_bar() - 1.0) * profile.k() as f64
}

/// Upper bound on the `γ` quantile of the naive statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VpBound {
    /// `√(Var (4/(9(1-γ)) - 1)) + k`.
    pub value: f64,
    /// The bound divided by the χ²(k) quantile: a bound on the derating factor.
    pub alpha_bound: f64,
    /// Whether the inequality's validity condition `r² > (5/3) Var` holds at
    /// the bound point `r = value - k`.
    pub valid: bool,
}

/// Vysochanskij–Petunin bound on the quantile and the derating factor.
pub fn vp_idf_bound(profile: &BlockProfile, gamma: f64) -> Result<VpBound> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!(
            "confidence level must be in (0, 1), got {gamma}"
        )));
    }
    let var = naive_variance(profile);
    let factor = 4.0 / (9.0 * (1.0 - gamma)) - 1.0;
    let r = sqrt(var * factor.max(0.0));
    let value = r + profile.k() as f64;
    let dof = u32::try_from(profile.k()).map_err(|_| Error::domain("too many bins"))?;
    Ok(VpBound {
        value,
        alpha_bound: value / chi2_quantile(gamma, dof)?,
        valid: r * r > 5.0 / 3.0 * var,
    })
}

/// `α_≈ = √(1 + 120 (ī - √ī) / (k + 25))`, fitted for `γ = 0.997`.
pub fn alpha_approx(profile: &BlockProfile) -> f64 {
    let i = profile.i_bar();
    sqrt(1.0 + 120.0 * (i - sqrt(i)) / (profile.k() as f64 + 25.0))
}

/// [`alpha_approx`] with a warning if `gamma` is not the level it was fitted for.
pub fn alpha_approx_for(profile: &BlockProfile, gamma: f64) -> (f64, Option<String>) {
    let warning = ((gamma - DEFAULT_GAMMA).abs() > 1e-12)
        .then(|| format!("the approximate derating factor is calibrated for gamma = {DEFAULT_GAMMA}, not {gamma}"));
    (alpha_approx(profile), warning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockCovariance, BlockStructure};
    use crate::derate::simple_derating;
    use alloc::vec;

    fn nightmare_alpha(p: &BlockProfile) -> (f64, Vec<f64>) {
        let st = BlockStructure::new(p.sizes()).unwrap();
        let r = simple_derating(&BlockCovariance::identity(st), DEFAULT_GAMMA).unwrap();
        (r.alpha, r.weights.weights().to_vec())
    }

    fn grid() -> Vec<BlockProfile> {
        let mut out = Vec::new();
        for n in 2..=12usize {
            for size in [1usize, 2, 3, 5] {
                if n * size <= 60 {
                    out.push(BlockProfile::uniform(n, size).unwrap());
                }
            }
        }
        for sizes in [
            vec![10usize, 5, 1],
            vec![20, 10, 5, 5],
            vec![8, 4, 2, 1, 1],
            vec![30, 3],
            vec![12, 12, 6, 6, 3],
        ] {
            out.push(BlockProfile::new(&sizes).unwrap());
        }
        out
    }

    #[test]
    fn simple_profiles() {
        let single = BlockProfile::new(&[7]).unwrap();
        assert_eq!(single.i_bar(), 1.0);
        assert_eq!(naive_variance(&single), 14.0);
        assert_eq!(alpha_approx(&single), 1.0);
        let p = BlockProfile::new(&[1, 3, 2]).unwrap();
        assert_eq!(p.sizes(), &[3, 2, 1]);
        assert!((p.i_bar() - 5.0 / 3.0).abs() < 1e-15);
        assert!((naive_variance(&p) - 28.0).abs() < 1e-12);
        assert_eq!(p.nightmare_weights(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn approx_for_two_fives() {
        let p = BlockProfile::uniform(2, 5).unwrap();
        let expect = sqrt(1.0 + 120.0 * (1.5 - sqrt(1.5)) / 35.0);
        assert!((alpha_approx(&p) - expect).abs() < 1e-15);
        assert!((alpha_approx(&p) - 1.394).abs() < 5e-4);
        assert!(alpha_approx_for(&p, 0.997).1.is_none());
        assert!(alpha_approx_for(&p, 0.95).1.is_some());
    }

    #[test]
    fn vp_bound_values() {
        let p = BlockProfile::uniform(2, 5).unwrap();
        let b = vp_idf_bound(&p, 0.997).unwrap();
        let var = naive_variance(&p);
        let expect = sqrt(var * (4.0 / (9.0 * 0.003) - 1.0)) + 10.0;
        assert!((b.value - expect).abs() < 1e-12);
        assert!(b.valid);
        let single = vp_idf_bound(&BlockProfile::new(&[4]).unwrap(), 0.997).unwrap();
        assert!(single.alpha_bound >= 1.0);
        assert!(vp_idf_bound(&p, 1.0).is_err());
        // Low confidence: the validity condition fails and is flagged.
        assert!(!vp_idf_bound(&p, 0.5).unwrap().valid);
    }

    #[test]
    fn variance_matches_multiplicity_sum() {
        for p in grid() {
            let w = p.nightmare_weights();
            let brute: f64 = 2.0 * w.iter().map(|x| x * x).sum::<f64>();
            assert!((brute - naive_variance(&p)).abs() < 1e-9 * brute);
            let sum: f64 = w.iter().sum();
            assert!((sum - p.k() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn formula_monotonicity() {
        for k in [10usize, 20, 40, 80] {
            let mut prev = 0.0;
            for n in 1..=k {
                if k % n != 0 {
                    continue;
                }
                let a = alpha_approx(&BlockProfile::uniform(n, k / n).unwrap());
                assert!(a >= 1.0 && a >= prev - 1e-15);
                prev = a;
            }
        }
        let a = alpha_approx(&BlockProfile::uniform(4, 5).unwrap());
        let b = alpha_approx(&BlockProfile::uniform(4, 10).unwrap());
        // Same ī, larger k.
        assert!(b < a);
    }

    #[test]
    fn cross_module_agreement() {
        for p in grid() {
            let (alpha, weights) = nightmare_alpha(&p);
            let var: f64 = 2.0 * weights.iter().map(|x| x * x).sum::<f64>();
            assert!((var - naive_variance(&p)).abs() < 1e-8 * var, "{:?}", p.sizes());
            let approx = alpha_approx(&p);
            assert!(
                (approx / alpha - 1.0).abs() < 0.2,
                "{:?}: {approx} vs {alpha}",
                p.sizes()
            );
            let bound = vp_idf_bound(&p, DEFAULT_GAMMA).unwrap();
            assert!(bound.alpha_bound >= alpha - 1e-9, "{:?}", p.sizes());
        }
    }
}
