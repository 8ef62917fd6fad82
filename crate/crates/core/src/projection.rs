//! Linear model geometry.
//!
//! A (linearised) model `μ(θ) = x₀ + Aθ` fitted by minimising the squared
//! M-distance under an assumed covariance `S₀` is a projection:
//!
//! ```text
//! Q   = (Aᵀ S₀⁻¹ A)⁻¹ Aᵀ S₀⁻¹      θ̂ = Q (x - x₀)
//! P   = A Q                        x̂ = x₀ + P (x - x₀)
//! S_θ0 = (Aᵀ S₀⁻¹ A)⁻¹
//! ```
//!
//! The residual maker `I - P` and a basis `B` of its range (the "null
//! parameters") turn the goodness-of-fit statistic into a parameter statistic
//! of a second linear model with Jacobian `B`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;

use crate::blocks::{BlockCovariance, BlockedVector};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricMatrix};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// `μ(θ) = x₀ + Aθ`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    jacobian: Matrix,
    reference: BlockedVector,
}

impl LinearModel {
    /// Requires `A` to be `dim × k` with full column rank and `1 ≤ k ≤ dim`.
    ///
    /// `k = dim` (e.g. `A = I`) describes a simple hypothesis test on all bins.
    pub fn new(jacobian: Matrix, reference: BlockedVector) -> Result<Self> {
        let n = reference.values().len();
        if jacobian.nrows() != n {
            return Err(Error::shape(format!(
                "Jacobian has {} rows, data has {} entries",
                jacobian.nrows(),
                n
            )));
        }
        if jacobian.ncols() == 0 || jacobian.ncols() > n {
            return Err(Error::shape(format!(
                "Jacobian must have between 1 and {n} columns, got {}",
                jacobian.ncols()
            )));
        }
        if !jacobian.is_finite() {
            return Err(Error::domain("Jacobian has non-finite entries"));
        }
        check_rank(&jacobian, "Jacobian")?;
        Ok(LinearModel { jacobian, reference })
    }

    /// Model with `x₀ = 0`.
    pub fn through_origin(jacobian: Matrix, structure: crate::blocks::BlockStructure) -> Result<Self> {
        let n = structure.total_dim();
        Self::new(jacobian, BlockedVector::new(structure, alloc::vec![0.0; n])?)
    }

    /// `A = I`: every bin is its own parameter.
    pub fn identity(structure: crate::blocks::BlockStructure) -> Self {
        let n = structure.total_dim();
        Self::through_origin(Matrix::identity(n), structure).expect("identity is full rank")
    }

    /// `A`.
    pub fn jacobian(&self) -> &Matrix {
        &self.jacobian
    }

    /// `x₀`.
    pub fn reference(&self) -> &BlockedVector {
        &self.reference
    }

    /// Number of parameters `k`.
    pub fn n_params(&self) -> usize {
        self.jacobian.ncols()
    }

    /// Data dimension.
    pub fn dim(&self) -> usize {
        self.jacobian.nrows()
    }
}

fn check_rank(a: &Matrix, context: &str) -> Result<()> {
    let gram = SymmetricMatrix::from_symmetrized(&a.transpose().matmul(a));
    let eig = gram.eigen()?;
    let max = eig.values[0].max(0.0);
    let min = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    if !(max > 0.0) || sqrt(min) <= RANK_TOL * sqrt(max) {
        let k = eig.values.len() - 1;
        return Err(Error::RankDeficient {
            context: String::from(context),
            direction: eig.vectors.column(k),
        });
    }
    Ok(())
}

/// All matrices belonging to one fit.
#[derive(Clone, Debug)]
pub struct ProjectionSet {
    /// `Q`, `k × n`.
    pub q: Matrix,
    /// `P = AQ`, `n × n`.
    pub p: Matrix,
    /// `I - P`.
    pub residual_maker: Matrix,
    /// `B`, `n × (n - k)`, with `P B = 0` and `Bᵀ S₀⁻¹ B = I`.
    pub null_basis: Matrix,
    /// `S_θ0 = (Aᵀ S₀⁻¹ A)⁻¹`.
    pub param_cov: SymmetricMatrix,
}

/// Projection for a block-diagonal assumed covariance.
pub fn build_projection(model: &LinearModel, s0: &BlockCovariance) -> Result<ProjectionSet> {
    if s0.structure().total_dim() != model.dim() {
        return Err(Error::shape("model and covariance dimensions differ"));
    }
    let (root, inv_root) = s0.sqrt_pair()?;
    build(model.jacobian(), &s0.to_dense(), &root, &inv_root)
}

/// Projection for an arbitrary positive definite assumed covariance.
pub fn build_projection_dense(a: &Matrix, s0: &SymmetricMatrix) -> Result<ProjectionSet> {
    if s0.dim() != a.nrows() {
        return Err(Error::shape("Jacobian and covariance dimensions differ"));
    }
    let (root, inv_root) = s0.sqrt_pair("assumed covariance")?;
    build(a, s0, root.as_matrix(), inv_root.as_matrix())
}

fn build(a: &Matrix, s0: &SymmetricMatrix, root: &Matrix, inv_root: &Matrix) -> Result<ProjectionSet> {
    let n = a.nrows();
    let k = a.ncols();
    let chol = Cholesky::new(s0.as_matrix(), "assumed covariance")?;
    let s_inv_a = chol.solve_matrix(a);
    let fisher = SymmetricMatrix::from_symmetrized(&a.transpose().matmul(&s_inv_a));
    let param_cov = fisher.cholesky("Aᵀ S₀⁻¹ A")?.inverse();
    let q = param_cov.as_matrix().matmul(&s_inv_a.transpose());
    let p = a.matmul(&q);
    let residual_maker = Matrix::identity(n).sub(&p);

    // Orthonormal complement of S₀^{-1/2} A, mapped back with S₀^{1/2}.
    let a_w = inv_root.matmul(a);
    let p_w = a_w.matmul(param_cov.as_matrix()).matmul(&a_w.transpose());
    let comp = SymmetricMatrix::from_symmetrized(&Matrix::identity(n).sub(&p_w)).eigen()?;
    let cols: Vec<Vec<f64>> = (0..n - k).map(|j| comp.vectors.column(j)).collect();
    let c = Matrix::from_columns(n, &cols);
    let null_basis = root.matmul(&c);

    Ok(ProjectionSet {
        q,
        p,
        residual_maker,
        null_basis,
        param_cov,
    })
}

/// Outcome of a linear fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// `θ̂ = Q(x - x₀)`.
    pub theta_hat: Vec<f64>,
    /// `x̂ = x₀ + Aθ̂`.
    pub x_hat: BlockedVector,
    /// `(x - x̂)ᵀ S₀⁻¹ (x - x̂)`.
    pub gof: f64,
    /// `θ̂ᵀ S_θ0⁻¹ θ̂`, the parameter statistic against `θ = 0`.
    pub param_stat: f64,
}

fn dense_quad(s0: &BlockCovariance, r: &[f64]) -> f64 {
    let st = s0.structure();
    (0..st.n_blocks())
        .map(|i| s0.factor(i).inv_quad_form(&r[st.range(i)]))
        .sum()
}

/// Fit the model to `x`.
pub fn fit(model: &LinearModel, s0: &BlockCovariance, x: &BlockedVector) -> Result<FitResult> {
    if x.values().len() != model.dim() {
        return Err(Error::shape("data and model dimensions differ"));
    }
    let proj = build_projection(model, s0)?;
    let x0 = model.reference().values();
    let dx: Vec<f64> = x.values().iter().zip(x0).map(|(a, b)| a - b).collect();
    let theta_hat = proj.q.matvec(&dx);
    let shift = model.jacobian().matvec(&theta_hat);
    let x_hat: Vec<f64> = x0.iter().zip(&shift).map(|(a, b)| a + b).collect();
    let resid: Vec<f64> = x.values().iter().zip(&x_hat).map(|(a, b)| a - b).collect();
    let gof = dense_quad(s0, &resid).max(0.0);
    let fisher_theta = proj.param_cov.cholesky("S_θ0")?.inv_quad_form(&theta_hat);
    Ok(FitResult {
        theta_hat,
        x_hat: BlockedVector::new(x.structure().clone(), x_hat)?,
        gof,
        param_stat: fisher_theta.max(0.0),
    })
}

/// The model whose Jacobian is the null basis `B`.
///
/// Its parameter statistic equals the goodness of fit of `model`.
pub fn null_model(model: &LinearModel, s0: &BlockCovariance) -> Result<LinearModel> {
    if model.n_params() >= model.dim() {
        return Err(Error::validation(
            "model has as many parameters as data points; there is no goodness of fit",
        ));
    }
    let proj = build_projection(model, s0)?;
    LinearModel::new(proj.null_basis, model.reference().clone())
}
