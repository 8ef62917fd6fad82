//! The f-max family of robust test statistics.
//!
//! Each variant applies a strictly increasing map `f_i` to the block
//! M-distances and takes the maximum. Under the null hypothesis with
//! uncorrelated blocks the CDF of the maximum is `Π_i F_χ²(N_i)(f_i⁻¹(z))`, and
//! this is conservative for any true inter-block correlation.
//!
//! - [`FMaxVariant::Fitted`]: `f_i(x) = x`, the maximal block M-distance.
//! - [`FMaxVariant::PMin`]: `f_i(x) = F_χ²(N_i)(x)`, i.e. the smallest block p-value.
//! - [`FMaxVariant::FMaxOpt`]: `f_i(x) = ln F_χ²(N_i)(x) - ln f_χ²(N_i)(x)`.

use alloc::format;
use alloc::vec::Vec;

use libm::{exp, expm1, log1p};

use crate::blocks::BlockMDistances;
use crate::chi2::{chi2_logcdf, chi2_logpdf, chi2_mode, chi2_quantile, chi2_sf};
use crate::error::{Error, Result};
use crate::roots;

/// Which increasing map the statistic applies per block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FMaxVariant {
    /// Maximum block M-distance.
    Fitted,
    /// Smallest block p-value.
    PMin,
    /// Log of CDF over density.
    FMaxOpt,
}

impl FMaxVariant {
    /// All variants, in table order.
    pub const ALL: [FMaxVariant; 3] = [FMaxVariant::Fitted, FMaxVariant::PMin, FMaxVariant::FMaxOpt];

    /// Lower-case name used in reports and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            FMaxVariant::Fitted => "fitted",
            FMaxVariant::PMin => "pmin",
            FMaxVariant::FMaxOpt => "fmaxopt",
        }
    }

    /// Inverse of [`FMaxVariant::name`].
    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// A variant together with the block degrees of freedom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FMaxFamily {
    variant: FMaxVariant,
    dofs: Vec<u32>,
}

impl FMaxFamily {
    /// Needs at least one block, every dof positive.
    pub fn new(variant: FMaxVariant, dofs: &[u32]) -> Result<Self> {
        check_dofs(dofs)?;
        Ok(FMaxFamily {
            variant,
            dofs: dofs.to_vec(),
        })
    }

    /// The variant.
    pub fn variant(&self) -> FMaxVariant {
        self.variant
    }

    /// Block degrees of freedom.
    pub fn dofs(&self) -> &[u32] {
        &self.dofs
    }

    /// `f_i(x)` for block `i`.
    pub fn f(&self, i: usize, x: f64) -> Result<f64> {
        let dof = self.dofs[i];
        match self.variant {
            FMaxVariant::Fitted => Ok(x),
            FMaxVariant::PMin => Ok(exp(chi2_logcdf(x, dof)?)),
            FMaxVariant::FMaxOpt => fmaxopt_f(x, dof),
        }
    }

    /// `f_i⁻¹(z)`, clamped to `[0, ∞]` outside the range of `f_i`.
    pub fn f_inv(&self, i: usize, z: f64) -> Result<f64> {
        let dof = self.dofs[i];
        match self.variant {
            FMaxVariant::Fitted => Ok(z.max(0.0)),
            FMaxVariant::PMin => {
                if z <= 0.0 {
                    Ok(0.0)
                } else if z >= 1.0 {
                    Ok(f64::INFINITY)
                } else {
                    chi2_quantile(z, dof)
                }
            }
            FMaxVariant::FMaxOpt => fmaxopt_f_inv(z, dof),
        }
    }
}

fn check_dofs(dofs: &[u32]) -> Result<()> {
    if dofs.is_empty() {
        return Err(Error::domain("no blocks given"));
    }
    if dofs.contains(&0) {
        return Err(Error::domain("block degrees of freedom must be positive"));
    }
    Ok(())
}

/// Result of a combined robust test.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedTestResult {
    /// Statistic used.
    pub variant: FMaxVariant,
    /// Value of the statistic.
    pub statistic_value: f64,
    /// Combined p-value.
    pub p_value: f64,
    /// Number of blocks.
    pub n_blocks: usize,
    /// χ² p-value of each block on its own.
    pub per_block_p: Vec<f64>,
}

/// Maximum block M-distance.
pub fn fitted_statistic(d: &BlockMDistances) -> Result<f64> {
    let last = *d.ordering().last().ok_or_else(|| Error::domain("no blocks given"))?;
    Ok(d.per_block()[last].d_squared)
}

/// `Π_i F_χ²(N_i)(z)`, the CDF of the maximum of independent χ² variables.
pub fn ceesq_cdf(z: f64, dofs: &[u32]) -> Result<f64> {
    Ok(exp(ceesq_logcdf(z, dofs)?))
}

fn ceesq_logcdf(z: f64, dofs: &[u32]) -> Result<f64> {
    check_dofs(dofs)?;
    if z.is_nan() {
        return Err(Error::domain("statistic is NaN"));
    }
    if z <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    dofs.iter().map(|&k| chi2_logcdf(z, k)).sum()
}

/// `1 - exp(l)` without cancellation.
fn one_minus_exp(l: f64) -> f64 {
    (-expm1(l)).clamp(0.0, 1.0)
}

/// Combine block p-values through their minimum: `1 - (1 - p_min)^N`.
pub fn pmin_combine(per_block_p: &[f64]) -> Result<CombinedTestResult> {
    if per_block_p.is_empty() {
        return Err(Error::domain("no blocks given"));
    }
    if let Some(p) = per_block_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("block p-value {p} outside [0, 1]")));
    }
    let p_min = per_block_p.iter().copied().fold(1.0, f64::min);
    let n = per_block_p.len();
    let p_value = if p_min >= 1.0 {
        1.0
    } else {
        one_minus_exp(n as f64 * log1p(-p_min))
    };
    Ok(CombinedTestResult {
        variant: FMaxVariant::PMin,
        statistic_value: 1.0 - p_min,
        p_value,
        n_blocks: n,
        per_block_p: per_block_p.to_vec(),
    })
}

fn fmaxopt_f(x: f64, dof: u32) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::domain(format!("squared distance must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(chi2_logcdf(x, dof)? - chi2_logpdf(x, dof)?)
}

fn fmaxopt_f_inv(z: f64, dof: u32) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::domain("statistic is NaN"));
    }
    if z == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let g = |x: f64| fmaxopt_f(x, dof).map(|v| v - z).unwrap_or(f64::NAN);
    let start = chi2_mode(dof).max(1.0);
    let mut lo = start;
    let mut found = false;
    for _ in 0..1100 {
        if g(lo) <= 0.0 {
            found = true;
            break;
        }
        lo *= 0.5;
    }
    if !found {
        return Err(Error::numeric(format!(
            "cannot bracket inverse of f-max-opt at z = {z}"
        )));
    }
    let hi = roots::grow_upper(g, start)?;
    if lo == hi {
        return Ok(lo);
    }
    roots::brent(g, lo, hi, 1e-12 * hi.max(1e-300), 500)
}

/// `max_i [ln F_χ²(N_i)(D²_i) - ln f_χ²(N_i)(D²_i)]`; `-∞` if every `D²_i` is zero.
pub fn fmaxopt_statistic(d: &BlockMDistances) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for b in d.per_block() {
        best = best.max(fmaxopt_f(b.d_squared, b.dof)?);
    }
    Ok(best)
}

/// `F_fmax(z) = Π_i F_χ²(N_i)(f_i⁻¹(z))`.
pub fn fmax_cdf(z: f64, family: &FMaxFamily) -> Result<f64> {
    Ok(exp(fmax_logcdf(z, family)?))
}

fn fmax_logcdf(z: f64, family: &FMaxFamily) -> Result<f64> {
    let mut acc = 0.0;
    for (i, &dof) in family.dofs().iter().enumerate() {
        let x = family.f_inv(i, z)?;
        acc += if x.is_infinite() { 0.0 } else { chi2_logcdf(x, dof)? };
    }
    Ok(acc)
}

/// `ln F_fmax(z)` where `z` is the observed maximum: `f_i` depends only on the
/// dof, so blocks sharing the maximising block's dof invert to its `D²`
/// exactly and the root search runs once per remaining distinct dof.
fn fmaxopt_logcdf_at_max(d: &BlockMDistances, z: f64) -> Result<f64> {
    let top = *d.ordering().last().ok_or_else(|| Error::domain("no blocks given"))?;
    let mut arg = d.per_block()[top];
    for b in d.per_block() {
        if fmaxopt_f(b.d_squared, b.dof)? == z {
            arg = *b;
            break;
        }
    }
    let mut cache: Vec<(u32, f64)> = alloc::vec![(arg.dof, arg.d_squared)];
    let mut acc = 0.0;
    for b in d.per_block() {
        let x = match cache.iter().find(|(k, _)| *k == b.dof) {
            Some(&(_, x)) => x,
            None => {
                let x = fmaxopt_f_inv(z, b.dof)?;
                cache.push((b.dof, x));
                x
            }
        };
        acc += if x.is_infinite() { 0.0 } else { chi2_logcdf(x, b.dof)? };
    }
    Ok(acc)
}

/// Compute the chosen statistic and its p-value `1 - F_fmax(statistic)`.
pub fn combine(d: &BlockMDistances, variant: FMaxVariant) -> Result<CombinedTestResult> {
    let per_block_p = d
        .per_block()
        .iter()
        .map(|b| chi2_sf(b.d_squared, b.dof))
        .collect::<Result<Vec<_>>>()?;
    let dofs = d.dofs();
    match variant {
        FMaxVariant::Fitted => {
            let z = fitted_statistic(d)?;
            Ok(CombinedTestResult {
                variant,
                statistic_value: z,
                p_value: one_minus_exp(ceesq_logcdf(z, &dofs)?),
                n_blocks: d.len(),
                per_block_p,
            })
        }
        FMaxVariant::PMin => pmin_combine(&per_block_p),
        FMaxVariant::FMaxOpt => {
            let z = fmaxopt_statistic(d)?;
            Ok(CombinedTestResult {
                variant,
                statistic_value: z,
                p_value: one_minus_exp(fmaxopt_logcdf_at_max(d, z)?),
                n_blocks: d.len(),
                per_block_p,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chi2::chi2_cdf;
    use alloc::vec;

    fn dist(pairs: &[(f64, u32)]) -> BlockMDistances {
        BlockMDistances::new(pairs).unwrap()
    }

    #[test]
    fn fitted_is_maximum() {
        let d = dist(&[(19.59, 8), (13.91, 8)]);
        assert_eq!(fitted_statistic(&d).unwrap(), 19.59);
        let d = dist(&[(13.91, 8), (19.59, 8)]);
        assert_eq!(fitted_statistic(&d).unwrap(), 19.59);
        assert_eq!(fitted_statistic(&dist(&[(4.2, 3)])).unwrap(), 4.2);
    }

    #[test]
    fn ceesq_examples() {
        let p = 1.0 - ceesq_cdf(19.59, &[8, 8]).unwrap();
        assert!((p - 0.024).abs() < 0.0015);
        let p = 1.0 - ceesq_cdf(19.69, &[7, 13]).unwrap();
        assert!((p - 0.109).abs() < 0.0015);
        assert!((ceesq_cdf(3.3, &[4]).unwrap() - chi2_cdf(3.3, 4).unwrap()).abs() < 1e-15);
        assert_eq!(ceesq_cdf(0.0, &[1, 2]).unwrap(), 0.0);
        assert!(ceesq_cdf(1.0, &[]).is_err());
    }

    #[test]
    fn pmin_examples() {
        let ps = [chi2_sf(17.03, 7).unwrap(), chi2_sf(19.69, 13).unwrap()];
        let r = pmin_combine(&ps).unwrap();
        assert!((r.p_value - 0.034).abs() < 0.0015);
        assert_eq!(pmin_combine(&[0.0, 0.5]).unwrap().p_value, 0.0);
        assert_eq!(pmin_combine(&[1.0, 1.0]).unwrap().p_value, 1.0);
        assert!(pmin_combine(&[]).is_err());
        assert!(pmin_combine(&[1.5]).is_err());
    }

    #[test]
    fn pmin_small_p_is_linear() {
        for n in 1..=10usize {
            for &p in &[1e-3, 1e-4, 1e-6] {
                let mut ps = vec![0.5; n];
                ps[n / 2] = p;
                let r = pmin_combine(&ps).unwrap().p_value;
                assert!((r / (n as f64 * p) - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn fmaxopt_is_strictly_increasing_below_mode() {
        for &dof in &[1u32, 2, 5, 13, 40] {
            let hi = chi2_mode(dof).max(2.0);
            let n = 2000;
            let mut prev = fmaxopt_f(hi * 1e-4, dof).unwrap();
            for j in 1..=n {
                let x = hi * (1e-4 + (1.0 - 1e-4) * j as f64 / n as f64);
                let v = fmaxopt_f(x, dof).unwrap();
                assert!(v > prev, "dof {dof} at x {x}");
                prev = v;
            }
        }
    }

    #[test]
    fn fmaxopt_inverse_round_trips() {
        for &dof in &[1u32, 2, 5, 13, 40, 500] {
            for &x in &[1e-6, 0.3, 1.0, 7.5, 60.0, 900.0] {
                let z = fmaxopt_f(x, dof).unwrap();
                let back = fmaxopt_f_inv(z, dof).unwrap();
                assert!((back - x).abs() <= 1e-9 * x.max(1.0), "dof {dof} x {x} -> {back}");
            }
        }
    }

    #[test]
    fn zero_distances() {
        let d = dist(&[(0.0, 1), (0.0, 4)]);
        assert_eq!(fmaxopt_statistic(&d).unwrap(), f64::NEG_INFINITY);
        assert_eq!(combine(&d, FMaxVariant::FMaxOpt).unwrap().p_value, 1.0);
        let d = dist(&[(0.0, 1), (2.0, 4)]);
        assert_eq!(fmaxopt_statistic(&d).unwrap(), fmaxopt_f(2.0, 4).unwrap());
    }

    #[test]
    fn single_block_reduces_to_chi2() {
        for v in FMaxVariant::ALL {
            let r = combine(&dist(&[(11.3, 6)]), v).unwrap();
            let p = chi2_sf(11.3, 6).unwrap();
            assert!((r.p_value - p).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn equal_dofs_make_variants_agree() {
        let d = dist(&[(19.59, 8), (13.91, 8)]);
        let a = combine(&d, FMaxVariant::Fitted).unwrap().p_value;
        let b = combine(&d, FMaxVariant::FMaxOpt).unwrap().p_value;
        let c = combine(&d, FMaxVariant::PMin).unwrap().p_value;
        assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
    }

    #[test]
    fn table_spot_checks() {
        let d = dist(&[(17.03, 7), (19.69, 13)]);
        let p = combine(&d, FMaxVariant::FMaxOpt).unwrap().p_value;
        assert!((p - 0.038).abs() < 0.0015);
    }

    #[test]
    fn family_cdfs() {
        let dofs = [3u32, 7, 12];
        let fit = FMaxFamily::new(FMaxVariant::Fitted, &dofs).unwrap();
        for &z in &[0.5, 4.0, 20.0] {
            assert!((fmax_cdf(z, &fit).unwrap() - ceesq_cdf(z, &dofs).unwrap()).abs() < 1e-14);
        }
        let pm = FMaxFamily::new(FMaxVariant::PMin, &dofs).unwrap();
        for &q in &[0.1, 0.5, 0.99] {
            assert!((fmax_cdf(q, &pm).unwrap() - q * q * q).abs() < 1e-9);
        }
        // Nondecreasing in z.
        let opt = FMaxFamily::new(FMaxVariant::FMaxOpt, &dofs).unwrap();
        let mut prev = 0.0;
        for j in -40..60 {
            let v = fmax_cdf(j as f64 * 0.25, &opt).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn monotone_transform_of_fitted_keeps_p() {
        // Statistic g(max x) with g(x) = 2x + 1 and CDF Π F(g⁻¹(z)).
        let d = dist(&[(9.1, 3), (14.2, 9), (5.0, 1)]);
        let z = 2.0 * fitted_statistic(&d).unwrap() + 1.0;
        let p_g = 1.0 - ceesq_cdf((z - 1.0) / 2.0, &d.dofs()).unwrap();
        let p = combine(&d, FMaxVariant::Fitted).unwrap().p_value;
        assert!((p - p_g).abs() < 1e-12);
    }

    #[test]
    fn multiplicative_over_block_subsets() {
        let fam = |d: &[u32]| FMaxFamily::new(FMaxVariant::FMaxOpt, d).unwrap();
        let z = 1.7;
        let whole = fmax_cdf(z, &fam(&[2, 5, 11])).unwrap();
        let parts = fmax_cdf(z, &fam(&[2, 11])).unwrap() * fmax_cdf(z, &fam(&[5])).unwrap();
        assert!((whole - parts).abs() < 1e-13);
    }

    #[test]
    fn dilution() {
        let x = chi2_quantile(0.95, 5).unwrap();
        for n in 2..6usize {
            let d = dist(&vec![(x, 5); n]);
            for v in FMaxVariant::ALL {
                let p = combine(&d, v).unwrap().p_value;
                let expect = 1.0 - libm::pow(0.95, n as f64);
                assert!((p - expect).abs() < 1e-8 && p > 0.05);
            }
        }
    }
}
