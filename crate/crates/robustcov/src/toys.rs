//! Monte Carlo toys: correlated Gaussian data, empirical CDFs of the test
//! statistics and the real significance level at a nominal one.
//!
//! Draws are generated in fixed-size chunks. Chunk `c` uses a ChaCha8 stream
//! selected by `(seed, c)`, so every result is a pure function of the seed and
//! does not depend on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use robustcov_core::blocks::{BlockMDistances, BlockStructure};
use robustcov_core::chi2::{chi2_cdf, chi2_sf};
use robustcov_core::derate::{derating_factor, fit_statistic_distribution};
use robustcov_core::projection::{build_projection, LinearModel};
use robustcov_core::robust::{combine, fmax_cdf, FMaxFamily, FMaxVariant};
use robustcov_core::{BlockCovariance, Error, Matrix, Result, SymmetricMatrix};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 997;

/// Draws per chunk.
pub const CHUNK: usize = 1 << 14;

/// Nominal levels at which coverage is checked.
pub const CHECK_LEVELS: [f64; 4] = [0.1, 0.0455, 0.01, 0.0027];

/// Number of points of the statistic grid.
pub const GRID_POINTS: usize = 512;

/// Upper end of the statistic grid, as an empirical CDF value.
pub const GRID_UPPER_CDF: f64 = 1.0 - 1e-4;

/// Eigenvalues below `-NEGATIVE_EIGEN_TOL · max(1, λ_max)` are rejected; others are clipped.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-9;

/// Identity diagonal blocks, `ρ I` between every pair of equally sized blocks.
pub fn correlated_covariance(structure: &BlockStructure, rho: f64) -> Result<SymmetricMatrix> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("correlation must be in [-1, 1], got {rho}")));
    }
    let m = structure.sizes()[0];
    if structure.sizes().iter().any(|&s| s != m) {
        return Err(Error::Validation("toy blocks must all have the same size".into()));
    }
    let n = structure.total_dim();
    let mut v = Matrix::identity(n);
    for a in 0..n {
        for b in 0..n {
            if a != b && a % m == b % m {
                v[(a, b)] = rho;
            }
        }
    }
    SymmetricMatrix::new(v)
}

/// `V = (I₅, ρI₅; ρI₅, I₅)`.
pub fn toy_covariance(rho: f64) -> Result<SymmetricMatrix> {
    correlated_covariance(&toy_structure(), rho)
}

/// Two blocks of five.
pub fn toy_structure() -> BlockStructure {
    BlockStructure::new(&[5, 5]).expect("valid sizes")
}

/// The 10 × 2 toy Jacobian: a falling slope `9, 8, …, 0` and an alternating
/// `+1, -1` pattern.
pub fn toy_jacobian() -> Matrix {
    let cols = vec![
        (0..10).map(|i| 9.0 - i as f64).collect::<Vec<_>>(),
        (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
    ];
    Matrix::from_columns(10, &cols)
}

/// The toy linear model through the origin.
pub fn toy_model() -> LinearModel {
    LinearModel::through_origin(toy_jacobian(), toy_structure()).expect("full rank")
}

/// Eigenvalue-clipped factor `L` with `L Lᵀ = cov`.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: Matrix,
}

impl GaussianSampler {
    /// Factorise a positive semidefinite covariance.
    pub fn new(cov: &SymmetricMatrix) -> Result<Self> {
        let eig = cov.eigen()?;
        let top = eig.values[0].max(1.0);
        let n = cov.dim();
        let mut cols = Vec::new();
        for (j, &l) in eig.values.iter().enumerate() {
            if l < -NEGATIVE_EIGEN_TOL * top {
                return Err(Error::Domain(format!(
                    "covariance is not positive semidefinite (eigenvalue {l:e})"
                )));
            }
            if l > 0.0 {
                let s = l.sqrt();
                cols.push(eig.vectors.column(j).iter().map(|v| v * s).collect());
            }
        }
        Ok(GaussianSampler {
            factor: Matrix::from_columns(n, &cols),
        })
    }

    /// Dimension of the draws.
    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.factor.row(i).iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        }
    }

    /// Apply `f` to `n` draws, in draw order.
    pub fn map_draws<T, F>(&self, n: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let chunks: Vec<Vec<T>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = chunk_rng(seed, c);
                let len = CHUNK.min(n - c * CHUNK);
                let mut z = vec![0.0; self.factor.ncols()];
                let mut x = vec![0.0; self.dim()];
                (0..len)
                    .map(|_| {
                        self.draw(&mut rng, &mut z, &mut x);
                        f(&x)
                    })
                    .collect()
            })
            .collect();
        chunks.into_iter().flatten().collect()
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// `n` zero-mean draws with covariance `cov`, one row per draw.
pub fn sample_gaussian(cov: &SymmetricMatrix, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(GaussianSampler::new(cov)?.map_draws(n, seed, |x| x.to_vec()))
}

/// Test statistics available to the toys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ToyStatistic {
    /// `xᵀ S₀⁻¹ x` against χ²(n).
    Naive,
    /// Maximum block M-distance against the Cee-squared CDF.
    Fitted,
    /// Smallest block p-value.
    PMin,
    /// f-max-opt.
    FMaxOpt,
    /// Parameter statistic `θ̂ᵀ S_θ0⁻¹ θ̂` against χ²(k).
    ProjectedNaive,
    /// Parameter statistic divided by the configured `alpha`.
    ProjectedInflated,
}

impl ToyStatistic {
    /// All statistics.
    pub const ALL: [ToyStatistic; 6] = [
        ToyStatistic::Naive,
        ToyStatistic::Fitted,
        ToyStatistic::PMin,
        ToyStatistic::FMaxOpt,
        ToyStatistic::ProjectedNaive,
        ToyStatistic::ProjectedInflated,
    ];

    /// Name used in configs and file names.
    pub fn name(self) -> &'static str {
        match self {
            ToyStatistic::Naive => "naive",
            ToyStatistic::Fitted => "fitted",
            ToyStatistic::PMin => "pmin",
            ToyStatistic::FMaxOpt => "fmaxopt",
            ToyStatistic::ProjectedNaive => "projected-naive",
            ToyStatistic::ProjectedInflated => "projected-inflated",
        }
    }

    /// Inverse of [`ToyStatistic::name`].
    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn fmax_variant(self) -> Option<FMaxVariant> {
        match self {
            ToyStatistic::Fitted => Some(FMaxVariant::Fitted),
            ToyStatistic::PMin => Some(FMaxVariant::PMin),
            ToyStatistic::FMaxOpt => Some(FMaxVariant::FMaxOpt),
            _ => None,
        }
    }
}

/// A toy study: equally sized blocks with identity covariance, coupled by `ρ`.
#[derive(Clone, Debug)]
pub struct ToyConfig {
    /// Block structure; all blocks must have the same size.
    pub structure: BlockStructure,
    /// True correlation factors, each in `[0, 1]`.
    pub rho_list: Vec<f64>,
    /// Draws per `ρ`.
    pub n_samples: usize,
    /// Master seed.
    pub seed: u64,
    /// Linear model for the projected statistics.
    pub model: Option<LinearModel>,
    /// Inflation factor for [`ToyStatistic::ProjectedInflated`].
    pub alpha: Option<f64>,
}

impl ToyConfig {
    /// Two blocks of five, `ρ ∈ {0, 0.5, 0.9, 0.99}`, the toy model, 10⁶ draws.
    pub fn two_blocks(seed: u64) -> Self {
        ToyConfig {
            structure: toy_structure(),
            rho_list: vec![0.0, 0.5, 0.9, 0.99],
            n_samples: 1_000_000,
            seed,
            model: Some(toy_model()),
            alpha: None,
        }
    }

    /// Check the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be at least 1".into()));
        }
        if self.rho_list.is_empty() {
            return Err(Error::Validation("rho_list is empty".into()));
        }
        if let Some(r) = self.rho_list.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Validation(format!("rho must be in [0, 1], got {r}")));
        }
        if let Some(m) = &self.model {
            if m.dim() != self.structure.total_dim() {
                return Err(Error::Shape("model and block structure dimensions differ".into()));
            }
        }
        correlated_covariance(&self.structure, 0.0).map(|_| ())
    }
}

/// Coverage at one nominal level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelCheck {
    /// True correlation.
    pub rho: f64,
    /// Nominal significance level.
    pub assumed_level: f64,
    /// Fraction of draws rejected at the nominal level.
    pub real_level: f64,
    /// Binomial standard error at the nominal level.
    pub standard_error: f64,
}

impl LevelCheck {
    /// `real ≤ assumed + 3 SE`.
    pub fn conservative(&self) -> bool {
        self.real_level <= self.assumed_level + 3.0 * self.standard_error
    }

    /// `real > assumed + 3 SE`.
    pub fn undercovers(&self) -> bool {
        !self.conservative()
    }
}

/// Empirical and assumed CDFs of one statistic for every `ρ`.
#[derive(Clone, Debug)]
pub struct CoverageCurve {
    /// Statistic.
    pub statistic: ToyStatistic,
    /// True correlations.
    pub rho_list: Vec<f64>,
    /// Ascending statistic values.
    pub statistic_grid: Vec<f64>,
    /// Empirical CDF on the grid, one sequence per `ρ`.
    pub empirical_cdf: Vec<Vec<f64>>,
    /// Assumed (uncorrelated) CDF on the grid.
    pub assumed_cdf: Vec<f64>,
    /// `(1 - assumed CDF, 1 - empirical CDF)` on the grid, one sequence per `ρ`.
    pub assumed_vs_real: Vec<Vec<(f64, f64)>>,
    /// Coverage at [`CHECK_LEVELS`] for every `ρ`.
    pub checks: Vec<LevelCheck>,
    /// Kolmogorov-Smirnov distance to the assumed CDF, one per `ρ`.
    pub ks_distance: Vec<f64>,
    /// Draws per `ρ`.
    pub n_samples: usize,
    /// Problems that do not stop the run.
    pub warnings: Vec<String>,
}

/// Per-draw statistic value and its nominal p-value.
struct Evaluator {
    statistic: ToyStatistic,
    structure: BlockStructure,
    family: Option<FMaxFamily>,
    q: Option<Matrix>,
    fisher: Option<SymmetricMatrix>,
    alpha: f64,
    dof: u32,
}

impl Evaluator {
    fn new(cfg: &ToyConfig, statistic: ToyStatistic) -> Result<Self> {
        let structure = cfg.structure.clone();
        let dofs: Vec<u32> = structure.sizes().iter().map(|&s| s as u32).collect();
        let family = statistic
            .fmax_variant()
            .map(|v| FMaxFamily::new(v, &dofs))
            .transpose()?;
        let (mut q, mut fisher, mut dof) = (None, None, structure.total_dim() as u32);
        let mut alpha = 1.0;
        if matches!(
            statistic,
            ToyStatistic::ProjectedNaive | ToyStatistic::ProjectedInflated
        ) {
            let model = cfg
                .model
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("statistic '{}' needs a model", statistic.name())))?;
            let proj = build_projection(model, &BlockCovariance::identity(structure.clone()))?;
            fisher = Some(proj.param_cov.cholesky("S_θ0")?.inverse());
            q = Some(proj.q);
            dof = model.n_params() as u32;
        }
        if statistic == ToyStatistic::ProjectedInflated {
            alpha = cfg
                .alpha
                .ok_or_else(|| Error::Validation("statistic 'projected-inflated' needs alpha".into()))?;
            if !(1.0..f64::INFINITY).contains(&alpha) {
                return Err(Error::Validation(format!("alpha must be >= 1, got {alpha}")));
            }
        }
        Ok(Evaluator {
            statistic,
            structure,
            family,
            q,
            fisher,
            alpha,
            dof,
        })
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
        match self.statistic {
            ToyStatistic::Naive => {
                let s: f64 = x.iter().map(|v| v * v).sum();
                Ok((s, chi2_sf(s, self.dof)?))
            }
            ToyStatistic::Fitted | ToyStatistic::PMin | ToyStatistic::FMaxOpt => {
                let pairs: Vec<(f64, u32)> = (0..self.structure.n_blocks())
                    .map(|i| {
                        let r = self.structure.range(i);
                        let d: f64 = x[r.clone()].iter().map(|v| v * v).sum();
                        (d, r.len() as u32)
                    })
                    .collect();
                let variant = self.statistic.fmax_variant().expect("f-max statistic");
                let res = combine(&BlockMDistances::new(&pairs)?, variant)?;
                Ok((res.statistic_value, res.p_value))
            }
            ToyStatistic::ProjectedNaive | ToyStatistic::ProjectedInflated => {
                let theta = self.q.as_ref().expect("model").matvec(x);
                let f = self.fisher.as_ref().expect("model").as_matrix().matvec(&theta);
                let s = theta.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>().max(0.0) / self.alpha;
                Ok((s, chi2_sf(s, self.dof)?))
            }
        }
    }

    fn assumed_cdf(&self, s: f64) -> Result<f64> {
        match &self.family {
            Some(family) => fmax_cdf(s, family),
            None if s <= 0.0 => Ok(0.0),
            None => chi2_cdf(s, self.dof),
        }
    }
}

/// Empirical CDF of one statistic under each `ρ` and the real level at the
/// nominal ones.
pub fn coverage_experiment(cfg: &ToyConfig, statistic: ToyStatistic) -> Result<CoverageCurve> {
    cfg.validate()?;
    let eval = Evaluator::new(cfg, statistic)?;
    let n = cfg.n_samples;
    let mut warnings = Vec::new();
    let deepest = CHECK_LEVELS.iter().copied().fold(1.0, f64::min);
    if (n as f64) * deepest < 100.0 {
        warnings.push(format!(
            "only {:.0} expected exceedances at level {deepest}; increase n_samples",
            n as f64 * deepest
        ));
    }

    let mut runs: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(cfg.rho_list.len());
    for (r, &rho) in cfg.rho_list.iter().enumerate() {
        let sampler = GaussianSampler::new(&correlated_covariance(&cfg.structure, rho)?)?;
        let seed = cfg.seed.wrapping_add(r as u64);
        let draws = sampler.map_draws(n, seed, |x| eval.evaluate(x));
        let mut values = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        for d in draws {
            let (s, pv) = d?;
            values.push(s);
            p.push(pv);
        }
        runs.push((values, p));
    }

    // KS distance: the assumed CDF at each draw is one minus its p-value.
    let mut ks_distance = Vec::with_capacity(runs.len());
    for (values, p) in &runs {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut d: f64 = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            let f = 1.0 - p[i];
            d = d
                .max((rank as f64 + 1.0) / n as f64 - f)
                .max(f - rank as f64 / n as f64);
        }
        ks_distance.push(d);
    }

    let mut checks = Vec::new();
    for ((_, p), &rho) in runs.iter().zip(&cfg.rho_list) {
        for &level in &CHECK_LEVELS {
            let hits = p.iter().filter(|&&pv| pv <= level).count();
            checks.push(LevelCheck {
                rho,
                assumed_level: level,
                real_level: hits as f64 / n as f64,
                standard_error: (level * (1.0 - level) / n as f64).sqrt(),
            });
        }
    }

    let mut sorted: Vec<Vec<f64>> = runs.into_iter().map(|(v, _)| v).collect();
    for v in &mut sorted {
        v.sort_by(|a, b| a.total_cmp(b));
    }
    let quantile = |v: &[f64], q: f64| v[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    let hi = sorted
        .iter()
        .map(|v| quantile(v, GRID_UPPER_CDF))
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = sorted
        .iter()
        .map(|v| quantile(v, 1.0 - GRID_UPPER_CDF))
        .fold(0.0, f64::min);
    let statistic_grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let assumed_cdf = statistic_grid
        .iter()
        .map(|&s| eval.assumed_cdf(s))
        .collect::<Result<Vec<_>>>()?;
    let empirical_cdf: Vec<Vec<f64>> = sorted
        .iter()
        .map(|v| {
            statistic_grid
                .iter()
                .map(|&s| v.partition_point(|&x| x <= s) as f64 / n as f64)
                .collect()
        })
        .collect();
    let assumed_vs_real = empirical_cdf
        .iter()
        .map(|e| assumed_cdf.iter().zip(e).map(|(a, e)| (1.0 - a, 1.0 - e)).collect())
        .collect();

    Ok(CoverageCurve {
        statistic,
        rho_list: cfg.rho_list.clone(),
        statistic_grid,
        empirical_cdf,
        assumed_cdf,
        assumed_vs_real,
        checks,
        ks_distance,
        n_samples: n,
        warnings,
    })
}

fn single_rho(cfg: &ToyConfig) -> Result<f64> {
    match cfg.rho_list.as_slice() {
        [rho] => Ok(*rho),
        _ => Err(Error::Validation("inflation estimates need exactly one rho".into())),
    }
}

/// Empirical `γ` quantile of the parameter statistic under the configured
/// `ρ`, divided by the χ²(k) quantile.
pub fn empirical_inflation(cfg: &ToyConfig, gamma: f64) -> Result<f64> {
    cfg.validate()?;
    let rho = single_rho(cfg)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level must be in (0, 1), got {gamma}"
        )));
    }
    let eval = Evaluator::new(cfg, ToyStatistic::ProjectedNaive)?;
    let sampler = GaussianSampler::new(&correlated_covariance(&cfg.structure, rho)?)?;
    let mut values = sampler
        .map_draws(cfg.n_samples, cfg.seed, |x| eval.evaluate(x).map(|(s, _)| s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = values.len();
    let idx = ((gamma * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, q, _) = values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    Ok(*q / robustcov_core::chi2::chi2_quantile(gamma, eval.dof)?)
}

/// The same ratio from the exact distribution of the parameter statistic.
pub fn analytic_inflation(cfg: &ToyConfig, gamma: f64) -> Result<f64> {
    cfg.validate()?;
    let rho = single_rho(cfg)?;
    let model = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Validation("inflation estimates need a model".into()))?;
    let s0 = SymmetricMatrix::identity(cfg.structure.total_dim());
    let v = correlated_covariance(&cfg.structure, rho)?;
    let dist = fit_statistic_distribution(model.jacobian(), &s0, &v)?;
    derating_factor(&dist, model.n_params(), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_covariance_spectrum() {
        assert_eq!(toy_covariance(0.0).unwrap(), SymmetricMatrix::identity(10));
        for rho in [0.5, 1.0, -0.3] {
            let ev = toy_covariance(rho).unwrap().eigen().unwrap().values;
            for (i, v) in ev.iter().enumerate() {
                let expect = if i < 5 { 1.0 + rho.abs() } else { 1.0 - rho.abs() };
                assert!((v - expect).abs() < 1e-12, "rho {rho}: {ev:?}");
            }
        }
        assert!(toy_covariance(1.01).is_err());
        assert!(toy_covariance(f64::NAN).is_err());
    }

    #[test]
    fn sampler_rejects_indefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = GaussianSampler::new(&SymmetricMatrix::new(m).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn fully_correlated_pairs_are_bit_equal() {
        let draws = sample_gaussian(&toy_covariance(1.0).unwrap(), 2000, 5).unwrap();
        for x in &draws {
            for i in 0..5 {
                assert_eq!(x[i].to_bits(), x[i + 5].to_bits());
            }
        }
    }

    #[test]
    fn chunking_is_deterministic() {
        let cov = toy_covariance(0.5).unwrap();
        let n = CHUNK * 2 + 17;
        let a = sample_gaussian(&cov, n, 11).unwrap();
        let b = sample_gaussian(&cov, n, 11).unwrap();
        assert_eq!(a, b);
        // A prefix is unaffected by how many more draws follow.
        let c = sample_gaussian(&cov, CHUNK + 3, 11).unwrap();
        assert_eq!(&a[..CHUNK + 3], &c[..]);
        assert_ne!(a[0], sample_gaussian(&cov, 1, 12).unwrap()[0]);
    }

    #[test]
    fn sample_moments() {
        let n = 200_000;
        let cov = toy_covariance(0.5).unwrap();
        let draws = sample_gaussian(&cov, n, 3).unwrap();
        for a in [0usize, 3, 7] {
            for b in [0usize, 5, 8] {
                let m: f64 = draws.iter().map(|x| x[a] * x[b]).sum::<f64>() / n as f64;
                let target = cov.as_matrix()[(a, b)];
                // SE of a product moment is at most sqrt(2/n) here.
                assert!((m - target).abs() < 5.0 * (2.0 / n as f64).sqrt(), "({a},{b}): {m}");
            }
            let mean: f64 = draws.iter().map(|x| x[a]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ToyConfig::two_blocks(1);
        cfg.n_samples = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ToyConfig::two_blocks(1);
        cfg.rho_list = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = ToyConfig::two_blocks(1);
        cfg.structure = BlockStructure::new(&[5, 4]).unwrap();
        cfg.model = None;
        assert!(cfg.validate().is_err());
        let mut cfg = ToyConfig::two_blocks(1);
        cfg.n_samples = 1000;
        assert!(coverage_experiment(&cfg, ToyStatistic::ProjectedInflated).is_err());
        cfg.model = None;
        assert!(coverage_experiment(&cfg, ToyStatistic::ProjectedNaive).is_err());
    }

    #[test]
    fn small_run_shape_and_warning() {
        let mut cfg = ToyConfig::two_blocks(2);
        cfg.n_samples = 5000;
        let c = coverage_experiment(&cfg, ToyStatistic::Fitted).unwrap();
        assert_eq!(c.statistic_grid.len(), GRID_POINTS);
        assert_eq!(c.empirical_cdf.len(), 4);
        assert_eq!(c.checks.len(), 16);
        assert!(!c.warnings.is_empty());
        for e in &c.empirical_cdf {
            assert!(e.windows(2).all(|w| w[0] <= w[1]));
            assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(c.statistic_grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn analytic_inflation_limits() {
        let mut cfg = ToyConfig::two_blocks(0);
        cfg.rho_list = vec![0.0];
        assert!((analytic_inflation(&cfg, 0.997).unwrap() - 1.0).abs() < 1e-6);
        cfg.rho_list = vec![1.0];
        let a = analytic_inflation(&cfg, 0.997).unwrap();
        assert!((a - 1.20).abs() <= 0.02, "{a}");
        cfg.rho_list = vec![0.0, 1.0];
        assert!(analytic_inflation(&cfg, 0.997).is_err());
    }
}
