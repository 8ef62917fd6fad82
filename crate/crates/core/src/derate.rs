//! Worst-case ("nightmare") covariance construction and derating factors.
//!
//! In a block-diagonal whitened frame `ξ = W x` the diagonal covariance blocks
//! are identities and every unknown off-diagonal entry is a correlation in
//! `[-1, 1]`. The expected parameter statistic is `Tr(P_ξ V_ξ)`, so the
//! construction greedily sets the unknown entries with the largest `|P_ξij|`
//! to `sign(P_ξij)`. Each assignment perfectly correlates two whitened
//! coordinates, which forces further entries; these are tracked with a signed
//! disjoint-set forest ([`CorrelationState`]). The result is a sum of signed
//! rank-one cluster matrices and hence always positive semidefinite.
//!
//! The derating factor is the ratio of the `γ` quantile of the resulting
//! generalised χ² distribution to the `γ` quantile of χ²(k).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::blocks::{BlockCovariance, BlockStructure};
use crate::chi2::chi2_quantile;
use crate::error::{Error, Result};
use crate::gchi2::WeightedChiSquare;
use crate::linalg::{Cholesky, Matrix, SymmetricMatrix};
use crate::projection::{build_projection, build_projection_dense, null_model, LinearModel};

/// Default target confidence level (3σ).
pub const DEFAULT_GAMMA: f64 = 0.997;

/// Resolution of the greedy selection order, relative to the largest entry.
pub const SELECTION_DIGITS: f64 = 1e10;

/// Tolerance for the positive semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-9;

/// A covariance component with its own block structure (see [`nightmare_mixed`]).
pub type CovarianceComponent = BlockCovariance;

/// Aligned block-diagonal whitening of a fit.
#[derive(Clone, Debug)]
pub struct WhitenedFrame {
    /// `W`, block diagonal with `W S₀ Wᵀ = I`.
    pub w: Matrix,
    /// `W⁻¹`.
    pub w_inverse: Matrix,
    /// `A_ξ = W A`.
    pub a_xi: Matrix,
    /// `P_ξ = A_ξ (A_ξᵀ A_ξ)⁻¹ A_ξᵀ`.
    pub p_xi: Matrix,
    structure: BlockStructure,
}

impl WhitenedFrame {
    /// Block structure of the whitened coordinates.
    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Number of fit parameters.
    pub fn n_params(&self) -> usize {
        self.a_xi.ncols()
    }
}

/// Rotate each whitened block so that its basis vectors are the left singular
/// vectors of the corresponding diagonal block of `W' P W'⁻¹`, in descending order.
fn align(structure: &BlockStructure, w_prime: &Matrix, w_prime_inv: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    let pp = w_prime.matmul(p).matmul(w_prime_inv);
    let mut rotations = Vec::with_capacity(structure.n_blocks());
    for i in 0..structure.n_blocks() {
        let r = structure.range(i);
        let m = pp.submatrix(r.start, r.start, r.len(), r.len());
        let mmt = SymmetricMatrix::from_symmetrized(&m.matmul(&m.transpose()));
        rotations.push(canonical_eigenbasis(&mmt)?.transpose());
    }
    let rot = Matrix::block_diagonal(&rotations);
    Ok((rot.matmul(w_prime), w_prime_inv.matmul(&rot.transpose())))
}

/// Eigenvectors (descending eigenvalues) with a reproducible choice of basis.
///
/// Within a cluster of (numerically) equal eigenvalues the basis is the
/// Gram-Schmidt orthonormalisation of the projected unit vectors, taken in
/// index order; each vector's largest component is made positive. This makes
/// the result depend only on the matrix, not on round-off in how it was formed.
fn canonical_eigenbasis(m: &SymmetricMatrix) -> Result<Matrix> {
    let eig = m.eigen()?;
    let n = eig.values.len();
    let tol = 1e-8
        * eig
            .values
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.values[end - 1] - eig.values[end] <= tol {
            end += 1;
        }
        let basis: Vec<Vec<f64>> = (start..end).map(|j| eig.vectors.column(j)).collect();
        if basis.len() == 1 {
            out.push(basis.into_iter().next().expect("one vector"));
        } else {
            out.extend(canonical_subspace_basis(&basis, n));
        }
        start = end;
    }
    for v in &mut out {
        let max = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let lead = v.iter().position(|x| x.abs() >= max - 1e-9).expect("non-empty");
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(Matrix::from_columns(n, &out))
}

fn canonical_subspace_basis(basis: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let g = basis.len();
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(g);
    for threshold in [0.1, 1e-6] {
        for i in 0..n {
            if chosen.len() == g {
                break;
            }
            // Projection of e_i onto the subspace, minus what is already spanned.
            let mut v = vec![0.0; n];
            for b in basis {
                let c = b[i];
                v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
            }
            for c in &chosen {
                let d: f64 = v.iter().zip(c).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm > threshold {
                v.iter_mut().for_each(|x| *x /= norm);
                chosen.push(v);
            }
        }
    }
    chosen
}

/// `W = R W'` with `W'_ii = S_ii^{-1/2}` and `R_ii` aligning the block with `P`.
pub fn aligned_whitening(s0: &BlockCovariance, model: &LinearModel) -> Result<WhitenedFrame> {
    let proj = build_projection(model, s0)?;
    let (root, inv_root) = s0.sqrt_pair()?;
    let (w, w_inverse) = align(s0.structure(), &inv_root, &root, &proj.p)?;
    let a_xi = w.matmul(model.jacobian());
    let p_xi = w.matmul(&proj.p).matmul(&w_inverse).symmetrized();
    Ok(WhitenedFrame {
        w,
        w_inverse,
        a_xi,
        p_xi,
        structure: s0.structure().clone(),
    })
}

/// One greedy assignment `V_ξij = sign`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    /// Row (whitened index).
    pub i: usize,
    /// Column (whitened index), `i < j`.
    pub j: usize,
    /// `±1`.
    pub sign: i8,
}

/// Value of one entry of the whitened covariance under construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Entry {
    /// Determined, either by the diagonal blocks, a known-zero pair, an
    /// explicit assignment, or propagation.
    Fixed(f64),
    /// Still open.
    Free,
}

/// Signed disjoint-set forest over whitened coordinates.
///
/// Coordinates in one cluster are perfectly (anti-)correlated; coordinates in
/// different clusters are uncorrelated. Two clusters may only be merged if no
/// pair of members shares a block or lies in a known-zero block pair.
#[derive(Clone, Debug)]
pub struct CorrelationState {
    structure: BlockStructure,
    block_of: Vec<usize>,
    parent: Vec<usize>,
    sign_to_parent: Vec<i8>,
    members: Vec<Vec<usize>>,
    zero_pairs: BTreeSet<(usize, usize)>,
    decisions: Vec<Decision>,
}

impl CorrelationState {
    /// All coordinates uncorrelated.
    pub fn new(structure: BlockStructure, zero_pairs: &BTreeSet<(usize, usize)>) -> Self {
        let n = structure.total_dim();
        let block_of = (0..n).map(|a| structure.block_of(a)).collect();
        CorrelationState {
            structure,
            block_of,
            parent: (0..n).collect(),
            sign_to_parent: vec![1; n],
            members: (0..n).map(|a| vec![a]).collect(),
            zero_pairs: zero_pairs.clone(),
            decisions: Vec::new(),
        }
    }

    /// The block structure.
    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Root of `a` and the sign of `a` relative to it.
    fn find(&self, mut a: usize) -> (usize, i8) {
        let mut s = 1;
        while self.parent[a] != a {
            s *= self.sign_to_parent[a];
            a = self.parent[a];
        }
        (a, s)
    }

    fn mergeable(&self, ra: usize, rb: usize) -> bool {
        self.members[ra].iter().all(|&m| {
            self.members[rb].iter().all(|&n| {
                let (bm, bn) = (self.block_of[m], self.block_of[n]);
                bm != bn && !self.zero_pairs.contains(&(bm.min(bn), bm.max(bn)))
            })
        })
    }

    /// Current state of entry `(a, b)`.
    pub fn entry(&self, a: usize, b: usize) -> Entry {
        if a == b {
            return Entry::Fixed(1.0);
        }
        let (ra, sa) = self.find(a);
        let (rb, sb) = self.find(b);
        if ra == rb {
            Entry::Fixed(f64::from(sa * sb))
        } else if self.mergeable(ra, rb) {
            Entry::Free
        } else {
            Entry::Fixed(0.0)
        }
    }

    /// Assign `V_ξab = sign` and merge the two clusters.
    pub fn set(&mut self, a: usize, b: usize, sign: i8) -> Result<()> {
        if sign != 1 && sign != -1 {
            return Err(Error::validation("correlation sign must be +1 or -1"));
        }
        if self.entry(a, b) != Entry::Free {
            return Err(Error::validation(format!("entry ({a}, {b}) is already determined")));
        }
        let (mut ra, sa) = self.find(a);
        let (mut rb, sb) = self.find(b);
        if self.members[ra].len() < self.members[rb].len() {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.sign_to_parent[rb] = sign * sa * sb;
        let moved = core::mem::take(&mut self.members[rb]);
        self.members[ra].extend(moved);
        self.decisions.push(Decision {
            i: a.min(b),
            j: a.max(b),
            sign,
        });
        Ok(())
    }

    /// Assignments in the order they were made.
    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    /// Number of clusters.
    pub fn n_clusters(&self) -> usize {
        self.members.iter().filter(|m| !m.is_empty()).count()
    }

    /// The implied whitened covariance, free entries taken as zero.
    pub fn to_matrix(&self) -> SymmetricMatrix {
        let n = self.parent.len();
        let mut v = Matrix::zeros(n, n);
        for cluster in self.members.iter().filter(|m| !m.is_empty()) {
            let signs: Vec<(usize, f64)> = cluster.iter().map(|&m| (m, f64::from(self.find(m).1))).collect();
            for &(a, sa) in &signs {
                for &(b, sb) in &signs {
                    v[(a, b)] = sa * sb;
                }
            }
        }
        SymmetricMatrix::from_symmetrized(&v)
    }
}

fn check_psd(v: &SymmetricMatrix, context: &str) -> Result<()> {
    let min = v.min_eigenvalue()?;
    if min < -PSD_TOL * v.dim() as f64 {
        return Err(Error::numeric(format!(
            "{context}: constructed covariance is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Greedy assignment driven by a static symmetric selection matrix.
fn greedy(
    structure: &BlockStructure,
    zero_pairs: &BTreeSet<(usize, usize)>,
    selection: &Matrix,
) -> Result<CorrelationState> {
    let mut state = CorrelationState::new(structure.clone(), zero_pairs);
    let n = structure.total_dim();
    // Magnitudes are compared after rounding to SELECTION_DIGITS relative to
    // the largest entry, so values equal up to round-off tie exactly and the
    // outcome does not depend on how the selection matrix was computed.
    let scale = selection.max_abs();
    let key = |v: f64| -> (i64, i8) {
        if !(scale > 0.0) {
            return (0, 1);
        }
        let q = libm::round(v / scale * SELECTION_DIGITS) as i64;
        (q.abs(), if q < 0 { -1 } else { 1 })
    };
    let mut candidates = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let (ba, bb) = (structure.block_of(a), structure.block_of(b));
            if ba != bb && !zero_pairs.contains(&(ba.min(bb), ba.max(bb))) {
                let (mag, sign) = key(selection[(a, b)]);
                candidates.push((a, b, mag, sign));
            }
        }
    }
    // Descending magnitude; ties by (a, b). Since the selection matrix does
    // not change, the first still-free candidate is always the current argmax.
    candidates.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    for (a, b, _, sign) in candidates {
        if state.entry(a, b) == Entry::Free {
            state.set(a, b, sign)?;
            if cfg!(debug_assertions) && n <= 64 {
                check_psd(&state.to_matrix(), "greedy step")?;
            }
        }
    }
    Ok(state)
}

/// Nightmare construction and its derating factor.
#[derive(Clone, Debug)]
pub struct NightmareResult {
    /// Whitened nightmare covariance, one per component (a single entry
    /// unless built by [`nightmare_mixed`]).
    pub v_xi_dagger: Vec<SymmetricMatrix>,
    /// Nightmare covariance in the original coordinates.
    pub v_dagger: SymmetricMatrix,
    /// Distribution of the fit statistic under `v_dagger`.
    pub weights: WeightedChiSquare,
    /// Derating factor.
    pub alpha: f64,
    /// Confidence level used for `alpha`.
    pub gamma: f64,
    /// Degrees of freedom of the nominal χ².
    pub n_params: usize,
    /// Greedy decisions, one state per component.
    pub states: Vec<CorrelationState>,
}

/// Eigenvalues of the fit statistic's quadratic form under covariance `v`:
/// with `Y = S₀⁻¹A` and `F = AᵀS₀⁻¹A = LLᵀ`, these are the eigenvalues of
/// `L⁻¹ Yᵀ V Y L⁻ᵀ`.
fn fit_space_weights(y: &Matrix, fisher: &Matrix, v: &Matrix) -> Result<WeightedChiSquare> {
    let chol = Cholesky::new(fisher, "Aᵀ S₀⁻¹ A")?;
    let m = y.transpose().matmul(v).matmul(y);
    let k = m.nrows();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| chol.forward(&m.column(j))).collect();
    let half = Matrix::from_columns(k, &cols).transpose();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| chol.forward(&half.column(j))).collect();
    let form = SymmetricMatrix::from_symmetrized(&Matrix::from_columns(k, &cols));
    let values = form.eigen()?.values;
    let max = values[0];
    if let Some(w) = values.iter().find(|&&w| w < -PSD_TOL * max.max(1.0)) {
        return Err(Error::numeric(format!("negative statistic weight {w:e}")));
    }
    let clipped: Vec<f64> = values.iter().map(|w| w.max(0.0)).collect();
    WeightedChiSquare::new(&clipped)
}

/// Distribution of the parameter statistic `θ̂ᵀ S_θ0⁻¹ θ̂` when the data
/// follow covariance `v` but the fit assumes `s0`.
pub fn fit_statistic_distribution(a: &Matrix, s0: &SymmetricMatrix, v: &SymmetricMatrix) -> Result<WeightedChiSquare> {
    if s0.dim() != a.nrows() || v.dim() != a.nrows() {
        return Err(Error::shape("Jacobian and covariance dimensions differ"));
    }
    let y = Cholesky::new(s0.as_matrix(), "assumed covariance")?.solve_matrix(a);
    let fisher = a.transpose().matmul(&y);
    fit_space_weights(&y, &fisher, v.as_matrix())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!(
            "confidence level must be in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// `α = F⁻¹_weights(γ) / F⁻¹_χ²(k)(γ)`.
pub fn derating_factor(weights: &WeightedChiSquare, k_params: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if k_params == 0 {
        return Err(Error::domain("number of parameters must be positive"));
    }
    let dof = u32::try_from(k_params).map_err(|_| Error::domain("too many parameters"))?;
    Ok(weights.quantile(gamma)? / chi2_quantile(gamma, dof)?)
}

fn finish(
    v_xi_dagger: Vec<SymmetricMatrix>,
    v_dagger: SymmetricMatrix,
    weights: WeightedChiSquare,
    n_params: usize,
    gamma: f64,
    states: Vec<CorrelationState>,
) -> Result<NightmareResult> {
    let alpha = derating_factor(&weights, n_params, gamma)?;
    if alpha < 1.0 - 1e-9 {
        return Err(Error::numeric(format!("derating factor {alpha} is below 1")));
    }
    Ok(NightmareResult {
        v_xi_dagger,
        v_dagger,
        weights,
        alpha,
        gamma,
        n_params,
        states,
    })
}

/// Nightmare covariance for a whitened fit, selection by the static `P_ξ`.
pub fn nightmare(frame: &WhitenedFrame, s0: &BlockCovariance, gamma: f64) -> Result<NightmareResult> {
    check_gamma(gamma)?;
    if frame.structure().sizes() != s0.structure().sizes() {
        return Err(Error::shape("frame and covariance block structures differ"));
    }
    let state = greedy(frame.structure(), s0.zero_pairs(), &frame.p_xi)?;
    let v_xi = state.to_matrix();
    check_psd(&v_xi, "nightmare")?;
    let v = frame
        .w_inverse
        .matmul(v_xi.as_matrix())
        .matmul(&frame.w_inverse.transpose());
    let fisher = frame.a_xi.transpose().matmul(&frame.a_xi);
    let weights = fit_space_weights(&frame.a_xi, &fisher, v_xi.as_matrix())?;
    finish(
        vec![v_xi],
        SymmetricMatrix::from_symmetrized(&v),
        weights,
        frame.n_params(),
        gamma,
        vec![state],
    )
}

/// Nightmare construction for a total covariance made of independent
/// components, each with its own block structure and known-zero pairs.
///
/// Each component is whitened and aligned on its own; its greedy selection
/// matrix is `T_i = W_i⁻ᵀ S₀⁻¹ P W_i⁻¹` with the total projection `P`. The
/// total nightmare covariance is `Σ W_i⁻¹ V_iξ‡ W_i⁻ᵀ`.
pub fn nightmare_mixed(
    components: &[CovarianceComponent],
    model: &LinearModel,
    s0_total: &SymmetricMatrix,
    gamma: f64,
) -> Result<NightmareResult> {
    check_gamma(gamma)?;
    if components.is_empty() {
        return Err(Error::validation("no covariance components given"));
    }
    let n = model.dim();
    if s0_total.dim() != n {
        return Err(Error::shape("total covariance does not match the model"));
    }
    let mut sum = Matrix::zeros(n, n);
    for (c, comp) in components.iter().enumerate() {
        if comp.structure().total_dim() != n {
            return Err(Error::shape(format!("component {c} has the wrong dimension")));
        }
        sum = sum.add(comp.to_dense().as_matrix());
    }
    let scale = s0_total.as_matrix().max_abs().max(1.0);
    let mismatch = sum.sub(s0_total.as_matrix()).max_abs();
    if mismatch > 1e-9 * scale {
        return Err(Error::validation(format!(
            "components do not sum to the total covariance (max deviation {mismatch:e})"
        )));
    }

    let proj = build_projection_dense(model.jacobian(), s0_total)?;
    let chol = Cholesky::new(s0_total.as_matrix(), "total covariance")?;
    let s_inv_p = chol.solve_matrix(&proj.p).symmetrized();

    let mut total = Matrix::zeros(n, n);
    let mut v_xis = Vec::with_capacity(components.len());
    let mut states = Vec::with_capacity(components.len());
    for comp in components {
        let (root, inv_root) = comp.sqrt_pair()?;
        let (_, w_inv) = align(comp.structure(), &inv_root, &root, &proj.p)?;
        let t = w_inv.transpose().matmul(&s_inv_p).matmul(&w_inv).symmetrized();
        let state = greedy(comp.structure(), comp.zero_pairs(), &t)?;
        let v_xi = state.to_matrix();
        check_psd(&v_xi, "nightmare component")?;
        total = total.add(&w_inv.matmul(v_xi.as_matrix()).matmul(&w_inv.transpose()));
        v_xis.push(v_xi);
        states.push(state);
    }
    let y = chol.solve_matrix(model.jacobian());
    let fisher = model.jacobian().transpose().matmul(&y);
    let weights = fit_space_weights(&y, &fisher, &total)?;
    finish(
        v_xis,
        SymmetricMatrix::from_symmetrized(&total),
        weights,
        model.n_params(),
        gamma,
        states,
    )
}

/// Divide a parameter statistic by the derating factor.
pub fn inflated_statistic(theta_stat: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(Error::validation(format!("derating factor must be >= 1, got {alpha}")));
    }
    if !(theta_stat >= 0.0) {
        return Err(Error::domain(format!("statistic must be >= 0, got {theta_stat}")));
    }
    Ok(theta_stat / alpha)
}

/// Derating factor for the goodness of fit: the nightmare construction for
/// the null-parameter model, with `n - k` degrees of freedom.
pub fn gof_derating(model: &LinearModel, s0: &BlockCovariance, gamma: f64) -> Result<NightmareResult> {
    let null = null_model(model, s0)?;
    nightmare(&aligned_whitening(s0, &null)?, s0, gamma)
}

/// Derating factor for a simple hypothesis test on all bins (`A = I`).
pub fn simple_derating(s0: &BlockCovariance, gamma: f64) -> Result<NightmareResult> {
    let model = LinearModel::identity(s0.structure().clone());
    nightmare(&aligned_whitening(s0, &model)?, s0, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_jacobian() -> Matrix {
        let cols = vec![
            (0..10).map(|i| 9.0 - i as f64).collect::<Vec<_>>(),
            (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        ];
        Matrix::from_columns(10, &cols)
    }

    fn toy() -> (LinearModel, BlockCovariance) {
        let st = BlockStructure::new(&[5, 5]).unwrap();
        (
            LinearModel::through_origin(toy_jacobian(), st.clone()).unwrap(),
            BlockCovariance::identity(st),
        )
    }

    fn pd(n: usize, seed: f64) -> SymmetricMatrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = libm::sin(seed * (i as f64 + 1.3) * (j as f64 + 0.4));
            }
        }
        SymmetricMatrix::from_symmetrized(&m.matmul(&m.transpose()).add(&Matrix::identity(n).scale(0.5)))
    }

    #[test]
    fn toy_parameter_derating() {
        let (m, s0) = toy();
        let r = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        assert!((r.alpha - 1.82).abs() <= 0.02, "alpha = {}", r.alpha);
        let frame = aligned_whitening(&s0, &m).unwrap();
        let tr = frame.p_xi.matmul(r.v_xi_dagger[0].as_matrix()).trace();
        let sum: f64 = r.weights.weights().iter().sum();
        assert!((sum - tr).abs() < 1e-8);
    }

    #[test]
    fn statistic_distribution_under_true_covariance() {
        let (m, s0) = toy();
        let dense = s0.to_dense();
        let nominal = fit_statistic_distribution(m.jacobian(), &dense, &dense).unwrap();
        for w in nominal.weights() {
            assert!((w - 1.0).abs() < 1e-10);
        }
        let v = SymmetricMatrix::new(fully_correlated()).unwrap();
        let d = fit_statistic_distribution(m.jacobian(), &dense, &v).unwrap();
        let alpha = derating_factor(&d, 2, DEFAULT_GAMMA).unwrap();
        assert!((alpha - 1.20).abs() <= 0.02, "alpha = {alpha}");
        // Trace identity: Σ weights = Tr(S_θ0⁻¹ Q V Qᵀ).
        let sum: f64 = d.weights().iter().sum();
        let proj = build_projection(&m, &s0).unwrap();
        let cov_theta = proj.q.matmul(v.as_matrix()).matmul(&proj.q.transpose());
        let fisher = proj.param_cov.cholesky("S_θ0").unwrap().inverse();
        assert!((fisher.as_matrix().matmul(&cov_theta).trace() - sum).abs() < 1e-9 * sum);
    }

    /// `V = [[I, I], [I, I]]` on two 5-blocks.
    fn fully_correlated() -> Matrix {
        let mut v = Matrix::identity(10);
        for i in 0..5 {
            v[(i, i + 5)] = 1.0;
            v[(i + 5, i)] = 1.0;
        }
        v
    }

    #[test]
    fn whitening_properties() {
        let st = BlockStructure::new(&[5, 5]).unwrap();
        let s0 = BlockCovariance::new(st.clone(), vec![pd(5, 0.3), pd(5, 0.8)], []).unwrap();
        let m = LinearModel::through_origin(toy_jacobian(), st).unwrap();
        let f = aligned_whitening(&s0, &m).unwrap();
        let wsw = f.w.matmul(s0.to_dense().as_matrix()).matmul(&f.w.transpose());
        assert!(wsw.sub(&Matrix::identity(10)).max_abs() < 1e-9);
        assert!(f.w.matmul(&f.w_inverse).sub(&Matrix::identity(10)).max_abs() < 1e-9);
        assert!(f.p_xi.matmul(&f.p_xi).sub(&f.p_xi).max_abs() < 1e-9);
        let g = f.a_xi.transpose().matmul(&f.a_xi);
        let ginv = Cholesky::new(&g, "").unwrap().inverse();
        let p = f.a_xi.matmul(ginv.as_matrix()).matmul(&f.a_xi.transpose());
        assert!(p.sub(&f.p_xi).max_abs() < 1e-9);
        // Aligned: diagonal of each block of P_ξ is descending.
        for b in 0..2 {
            let d: Vec<f64> = f.structure().range(b).map(|i| f.p_xi[(i, i)]).collect();
            assert!(d.windows(2).all(|w| w[0] >= w[1] - 1e-12), "{d:?}");
        }
    }

    #[test]
    fn identity_model_multiplicities() {
        let st = BlockStructure::new(&[3, 2, 1]).unwrap();
        let r = simple_derating(&BlockCovariance::identity(st), DEFAULT_GAMMA).unwrap();
        let w = r.weights.weights();
        assert_eq!(w.len(), 3);
        for (got, want) in w.iter().zip([3.0f64, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Brute force: eigenvalues of the constructed V_ξ itself.
        let eig = r.v_xi_dagger[0].eigen().unwrap().values;
        let var: f64 = 2.0 * eig.iter().map(|e| e * e).sum::<f64>();
        assert!((var - 28.0).abs() < 1e-9);
        let i_bar: f64 = (3.0 + 2.0 * 2.0 + 3.0) / 6.0;
        assert!((2.0 * (2.0 * i_bar - 1.0) * 6.0 - 28.0).abs() < 1e-12);
    }

    #[test]
    fn single_block_is_not_derated() {
        let st = BlockStructure::new(&[6]).unwrap();
        let s0 = BlockCovariance::new(st.clone(), vec![pd(6, 0.4)], []).unwrap();
        let a = Matrix::from_columns(
            6,
            &[vec![1.0, 2.0, 0.0, 1.0, 3.0, 1.0], vec![0.0, 1.0, 1.0, 0.0, 0.5, 2.0]],
        );
        let m = LinearModel::through_origin(a, st).unwrap();
        let r = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        assert!(r.v_xi_dagger[0].as_matrix().sub(&Matrix::identity(6)).max_abs() < 1e-15);
        assert!((r.alpha - 1.0).abs() < 1e-9);
        assert!((gof_derating(&m, &s0, DEFAULT_GAMMA).unwrap().alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn derating_factor_cases() {
        let unit = WeightedChiSquare::chi2(4);
        assert!((derating_factor(&unit, 4, 0.997).unwrap() - 1.0).abs() < 1e-9);
        let two = WeightedChiSquare::new(&[2.0, 0.0]).unwrap();
        let expect = 2.0 * chi2_quantile(0.997, 1).unwrap() / chi2_quantile(0.997, 2).unwrap();
        assert!((derating_factor(&two, 2, 0.997).unwrap() - expect).abs() < 1e-8);
        assert!(derating_factor(&two, 2, 1.0).is_err());
    }

    #[test]
    fn inflation() {
        assert_eq!(inflated_statistic(5.0, 1.0).unwrap(), 5.0);
        let q = chi2_quantile(0.997, 2).unwrap();
        assert!((inflated_statistic(q * 1.82, 1.82).unwrap() - q).abs() < 1e-12);
        assert!(inflated_statistic(5.0, 0.9).is_err());
    }

    #[test]
    fn gof_differs_from_parameter_derating() {
        let (m, s0) = toy();
        let par = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        let gof = gof_derating(&m, &s0, DEFAULT_GAMMA).unwrap();
        assert_eq!(gof.n_params, 8);
        assert!(gof.alpha > 1.0);
        assert!((gof.alpha - par.alpha).abs() > 0.05);
    }

    #[test]
    fn mixed_single_component_reduces() {
        let st = BlockStructure::new(&[5, 5]).unwrap();
        let s0 = BlockCovariance::new(st.clone(), vec![pd(5, 0.3), pd(5, 0.8)], []).unwrap();
        let m = LinearModel::through_origin(toy_jacobian(), st).unwrap();
        let a = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        let b = nightmare_mixed(std::slice::from_ref(&s0), &m, &s0.to_dense(), DEFAULT_GAMMA).unwrap();
        assert!(a.v_dagger.as_matrix().sub(b.v_dagger.as_matrix()).max_abs() < 1e-9);
        assert!((a.alpha - b.alpha).abs() < 1e-9);
    }

    #[test]
    fn mixed_halves_reproduce_whole() {
        let (m, s0) = toy();
        let half = BlockCovariance::new(
            s0.structure().clone(),
            vec![SymmetricMatrix::from_diagonal(&[0.5; 5]); 2],
            [],
        )
        .unwrap();
        let whole = nightmare_mixed(std::slice::from_ref(&s0), &m, &s0.to_dense(), DEFAULT_GAMMA).unwrap();
        let split = nightmare_mixed(&[half.clone(), half], &m, &s0.to_dense(), DEFAULT_GAMMA).unwrap();
        assert!(whole.v_dagger.as_matrix().sub(split.v_dagger.as_matrix()).max_abs() < 1e-9);
    }

    #[test]
    fn known_statistical_component_lowers_alpha() {
        let (m, s0) = toy();
        let st = s0.structure().clone();
        let half = vec![SymmetricMatrix::from_diagonal(&[0.5; 5]); 2];
        let stat = BlockCovariance::new(st.clone(), half.clone(), [(0, 1)]).unwrap();
        let syst = BlockCovariance::new(st, half, []).unwrap();
        let mixed = nightmare_mixed(&[stat, syst], &m, &s0.to_dense(), DEFAULT_GAMMA).unwrap();
        let all = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        assert!(mixed.alpha < all.alpha - 1e-6, "{} vs {}", mixed.alpha, all.alpha);
        assert!(mixed.alpha >= 1.0);
    }

    #[test]
    fn component_sum_is_validated() {
        let (m, s0) = toy();
        let wrong = s0.to_dense().as_matrix().scale(1.1);
        assert!(matches!(
            nightmare_mixed(
                std::slice::from_ref(&s0),
                &m,
                &SymmetricMatrix::from_symmetrized(&wrong),
                0.997
            ),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn known_zero_pairs_stay_zero_and_do_not_raise_alpha() {
        let st = BlockStructure::new(&[3, 3, 2]).unwrap();
        let free = BlockCovariance::identity(st.clone());
        let zero = free.with_zero_pairs([(0, 2)]).unwrap();
        let a = simple_derating(&free, DEFAULT_GAMMA).unwrap();
        let b = simple_derating(&zero, DEFAULT_GAMMA).unwrap();
        let v = b.v_xi_dagger[0].as_matrix();
        for i in st.range(0) {
            for j in st.range(2) {
                assert_eq!(v[(i, j)], 0.0);
            }
        }
        assert!(b.alpha <= a.alpha + 1e-9);
    }

    #[test]
    fn correlation_state_propagation() {
        let st = BlockStructure::new(&[2, 2, 2]).unwrap();
        let mut s = CorrelationState::new(st, &BTreeSet::new());
        s.set(0, 2, -1).unwrap();
        s.set(2, 4, 1).unwrap();
        assert_eq!(s.entry(0, 4), Entry::Fixed(-1.0));
        assert_eq!(s.entry(1, 4), Entry::Fixed(0.0));
        assert_eq!(s.entry(1, 3), Entry::Free);
        assert!(s.set(0, 4, 1).is_err());
        assert_eq!(s.n_clusters(), 4);
        assert!(s.to_matrix().min_eigenvalue().unwrap() > -1e-12);
    }

    #[test]
    fn deterministic_decisions() {
        let (m, s0) = toy();
        let f = aligned_whitening(&s0, &m).unwrap();
        let a = nightmare(&f, &s0, DEFAULT_GAMMA).unwrap();
        let b = nightmare(&f, &s0, DEFAULT_GAMMA).unwrap();
        assert_eq!(a.states[0].decisions(), b.states[0].decisions());
        assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
    }

    #[test]
    fn trace_conservation_for_identity_model() {
        for sizes in [vec![4usize, 4], vec![5, 3, 1], vec![2, 2, 2, 2]] {
            let st = BlockStructure::new(&sizes).unwrap();
            let r = simple_derating(&BlockCovariance::identity(st), DEFAULT_GAMMA).unwrap();
            let k: usize = sizes.iter().sum();
            let sum: f64 = r.weights.weights().iter().sum();
            assert!((sum - k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_invariant_under_block_reparameterisation() {
        let (m, s0) = toy();
        let base = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
        // x_i -> M_i x_i changes S_ii -> M S Mᵀ and A_i -> M A_i.
        let mats = [pd(5, 0.21), pd(5, 1.7)];
        let t = Matrix::block_diagonal(&[mats[0].as_matrix().clone(), mats[1].as_matrix().clone()]);
        let blocks: Vec<SymmetricMatrix> = mats
            .iter()
            .map(|mm| SymmetricMatrix::from_symmetrized(&mm.as_matrix().matmul(mm.as_matrix())))
            .collect();
        let st = s0.structure().clone();
        let s1 = BlockCovariance::new(st.clone(), blocks, []).unwrap();
        let m1 = LinearModel::through_origin(t.matmul(m.jacobian()), st).unwrap();
        let r = nightmare(&aligned_whitening(&s1, &m1).unwrap(), &s1, DEFAULT_GAMMA).unwrap();
        assert!((r.alpha / base.alpha - 1.0).abs() < 2e-2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn nightmare_is_psd_and_valid(
            sizes in proptest::collection::vec(1usize..5, 2..5),
            seed in 0.1f64..3.0,
            k in 1usize..4,
        ) {
            let st = BlockStructure::new(&sizes).unwrap();
            let n = st.total_dim();
            prop_assume!(k < n);
            let blocks: Vec<SymmetricMatrix> = sizes.iter().enumerate()
                .map(|(i, &s)| pd(s, seed + i as f64)).collect();
            let s0 = BlockCovariance::new(st.clone(), blocks, []).unwrap();
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|c| (0..n).map(|r| libm::cos(seed * (r as f64 + 1.0) * (c as f64 + 2.0))).collect())
                .collect();
            let m = match LinearModel::through_origin(Matrix::from_columns(n, &cols), st) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let r = nightmare(&aligned_whitening(&s0, &m).unwrap(), &s0, DEFAULT_GAMMA).unwrap();
            prop_assert!(r.v_xi_dagger[0].min_eigenvalue().unwrap() >= -1e-9);
            prop_assert!(r.alpha >= 1.0 - 1e-9);
            // V‡ keeps the known diagonal blocks.
            for b in 0..sizes.len() {
                let rg = s0.structure().range(b);
                let got = r.v_dagger.as_matrix().submatrix(rg.start, rg.start, rg.len(), rg.len());
                prop_assert!(got.sub(s0.diag_blocks()[b].as_matrix()).max_abs() < 1e-9);
            }
        }
    }
}
