//! Robust hypothesis tests and worst-case covariance derating for
//! block-structured Gaussian data with unknown inter-block correlations.
//!
//! The crate is `no_std` and only needs `alloc`. It is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, Cholesky, symmetric eigendecomposition.
//! - [`chi2`] and [`gchi2`]: χ² and (central) generalised χ² distributions.
//! - [`blocks`]: block structures, block covariances and block M-distances.
//! - [`robust`]: the f-max family of robust test statistics and their null CDFs.
//! - [`projection`]: linear model geometry (projection, residual maker, null basis).
//! - [`derate`]: worst-case ("nightmare") covariance construction and derating factors.
//! - [`approx`]: closed-form variance, Vysochanskij–Petunin bound and the
//!   regression approximation of the derating factor for simple hypothesis tests.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
#![warn(missing_docs)]
// NaN-rejecting `!(x > 0.0)` checks and tabulated quadrature nodes are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

extern crate alloc;

pub mod approx;
pub mod blocks;
pub mod chi2;
pub mod derate;
mod error;
pub mod gchi2;
pub mod linalg;
pub mod projection;
pub mod robust;
mod roots;

pub use blocks::{BlockCovariance, BlockMDistances, BlockStructure, BlockedVector};
pub use error::{Error, Result};
pub use gchi2::WeightedChiSquare;
pub use linalg::{Matrix, SymmetricMatrix};
