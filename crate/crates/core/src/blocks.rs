//! Block-structured measurements: known diagonal covariance blocks, data and
//! expectation vectors, and per-block squared Mahalanobis distances.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricMatrix};

/// Partition of the data space into consecutive labelled blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    labels: Vec<String>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    /// Blocks labelled `block0`, `block1`, ...
    pub fn new(sizes: &[usize]) -> Result<Self> {
        let labels = (0..sizes.len()).map(|i| format!("block{i}")).collect();
        Self::with_labels(sizes, labels)
    }

    /// Blocks with explicit, unique labels.
    pub fn with_labels(sizes: &[usize], labels: Vec<String>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::validation("block structure needs at least one block"));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation(format!("block {i} has size 0")));
        }
        if labels.len() != sizes.len() {
            return Err(Error::shape(format!(
                "{} labels for {} blocks",
                labels.len(),
                sizes.len()
            )));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::validation("block labels must be unique"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(BlockStructure {
            sizes: sizes.to_vec(),
            labels,
            offsets,
        })
    }

    /// Block sizes `N_i`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Block labels.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of blocks.
    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `Σ N_i`.
    pub fn total_dim(&self) -> usize {
        *self.offsets.last().expect("non-empty")
    }

    /// Index range of block `i` in the full vector.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Block containing full-vector index `idx`.
    pub fn block_of(&self, idx: usize) -> usize {
        debug_assert!(idx < self.total_dim());
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    /// Position of a label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Known diagonal covariance blocks plus block pairs whose cross covariance is
/// known to vanish. All other off-diagonal blocks are unknown.
#[derive(Clone, Debug)]
pub struct BlockCovariance {
    structure: BlockStructure,
    diag_blocks: Vec<SymmetricMatrix>,
    zero_pairs: BTreeSet<(usize, usize)>,
    factors: Vec<Cholesky>,
}

impl BlockCovariance {
    /// Validate sizes, positive definiteness of every block and the zero pairs.
    pub fn new(
        structure: BlockStructure,
        diag_blocks: Vec<SymmetricMatrix>,
        zero_pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if diag_blocks.len() != structure.n_blocks() {
            return Err(Error::shape(format!(
                "{} covariance blocks for {} data blocks",
                diag_blocks.len(),
                structure.n_blocks()
            )));
        }
        let mut factors = Vec::with_capacity(diag_blocks.len());
        for (i, b) in diag_blocks.iter().enumerate() {
            if b.dim() != structure.sizes()[i] {
                return Err(Error::shape(format!(
                    "covariance of block '{}' is {}x{}, expected size {}",
                    structure.labels()[i],
                    b.dim(),
                    b.dim(),
                    structure.sizes()[i]
                )));
            }
            let label = format!("covariance of block '{}'", structure.labels()[i]);
            factors.push(b.cholesky(&label)?);
        }
        let mut pairs = BTreeSet::new();
        for (a, b) in zero_pairs {
            if a == b {
                return Err(Error::validation(format!(
                    "zero pair ({a}, {a}) refers to a diagonal block"
                )));
            }
            if a >= structure.n_blocks() || b >= structure.n_blocks() {
                return Err(Error::validation(format!("zero pair ({a}, {b}) out of range")));
            }
            pairs.insert((a.min(b), a.max(b)));
        }
        Ok(BlockCovariance {
            structure,
            diag_blocks,
            zero_pairs: pairs,
            factors,
        })
    }

    /// Identity blocks, no known-zero pairs.
    pub fn identity(structure: BlockStructure) -> Self {
        let blocks = structure
            .sizes()
            .iter()
            .map(|&n| SymmetricMatrix::identity(n))
            .collect();
        Self::new(structure, blocks, []).expect("identity blocks are valid")
    }

    /// Take the diagonal blocks of a dense matrix.
    pub fn from_dense_blocks(
        structure: BlockStructure,
        dense: &SymmetricMatrix,
        zero_pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if dense.dim() != structure.total_dim() {
            return Err(Error::shape("dense covariance does not match block structure"));
        }
        let blocks = (0..structure.n_blocks())
            .map(|i| {
                let r = structure.range(i);
                SymmetricMatrix::from_symmetrized(&dense.as_matrix().submatrix(r.start, r.start, r.len(), r.len()))
            })
            .collect();
        Self::new(structure, blocks, zero_pairs)
    }

    /// The block structure.
    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Known diagonal blocks `S_ii`.
    pub fn diag_blocks(&self) -> &[SymmetricMatrix] {
        &self.diag_blocks
    }

    /// Cholesky factor of block `i`.
    pub fn factor(&self, i: usize) -> &Cholesky {
        &self.factors[i]
    }

    /// Known-zero block pairs, normalised to `(min, max)`.
    pub fn zero_pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.zero_pairs
    }

    /// Whether the cross covariance of blocks `a` and `b` is known to be zero.
    pub fn is_known_zero(&self, a: usize, b: usize) -> bool {
        self.zero_pairs.contains(&(a.min(b), a.max(b)))
    }

    /// Same blocks with every cross pair declared known-zero as well.
    pub fn with_zero_pairs(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let all: Vec<(usize, usize)> = self.zero_pairs.iter().copied().chain(pairs).collect();
        Self::new(self.structure.clone(), self.diag_blocks.clone(), all)
    }

    /// Block-diagonal `(S^{1/2}, S^{-1/2})` built from symmetric roots of each block.
    pub fn sqrt_pair(&self) -> Result<(Matrix, Matrix)> {
        let mut roots = Vec::with_capacity(self.diag_blocks.len());
        let mut inv_roots = Vec::with_capacity(self.diag_blocks.len());
        for (b, label) in self.diag_blocks.iter().zip(self.structure.labels()) {
            let (r, ir) = b.sqrt_pair(&format!("covariance of block '{label}'"))?;
            roots.push(r.into_matrix());
            inv_roots.push(ir.into_matrix());
        }
        Ok((Matrix::block_diagonal(&roots), Matrix::block_diagonal(&inv_roots)))
    }

    /// Block-diagonal dense matrix, unknown blocks set to zero.
    pub fn to_dense(&self) -> SymmetricMatrix {
        let blocks: Vec<Matrix> = self.diag_blocks.iter().map(|b| b.as_matrix().clone()).collect();
        SymmetricMatrix::from_symmetrized(&Matrix::block_diagonal(&blocks))
    }
}

/// A vector over a block structure.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockedVector {
    structure: BlockStructure,
    values: Vec<f64>,
}

impl BlockedVector {
    /// Length must equal the total dimension.
    pub fn new(structure: BlockStructure, values: Vec<f64>) -> Result<Self> {
        if values.len() != structure.total_dim() {
            return Err(Error::shape(format!(
                "vector has {} entries, block structure needs {}",
                values.len(),
                structure.total_dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("vector has non-finite entries"));
        }
        Ok(BlockedVector { structure, values })
    }

    /// The block structure.
    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// All entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entries of block `i`.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.structure.range(i)]
    }
}

/// Squared M-distance and degrees of freedom of one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockDistance {
    /// `D²_i`.
    pub d_squared: f64,
    /// `N_i`.
    pub dof: u32,
}

/// Per-block squared M-distances with the ascending ordering permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMDistances {
    per_block: Vec<BlockDistance>,
    ordering: Vec<usize>,
}

impl BlockMDistances {
    /// From `(D², dof)` pairs (summary mode).
    pub fn new(pairs: &[(f64, u32)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::domain("no blocks given"));
        }
        let mut per_block = Vec::with_capacity(pairs.len());
        for (i, &(d, dof)) in pairs.iter().enumerate() {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::domain(format!("block {i}: squared distance {d} is not >= 0")));
            }
            if dof == 0 {
                return Err(Error::domain(format!("block {i}: zero degrees of freedom")));
            }
            per_block.push(BlockDistance { d_squared: d, dof });
        }
        let mut ordering: Vec<usize> = (0..per_block.len()).collect();
        // Stable: ties keep ascending block index.
        ordering.sort_by(|&a, &b| per_block[a].d_squared.total_cmp(&per_block[b].d_squared));
        Ok(BlockMDistances { per_block, ordering })
    }

    /// Entries in original block order.
    pub fn per_block(&self) -> &[BlockDistance] {
        &self.per_block
    }

    /// Block indices sorted by ascending `D²`.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Degrees of freedom in block order.
    pub fn dofs(&self) -> Vec<u32> {
        self.per_block.iter().map(|b| b.dof).collect()
    }

    /// `D²` values in block order.
    pub fn d_squared(&self) -> Vec<f64> {
        self.per_block.iter().map(|b| b.d_squared).collect()
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.per_block.len()
    }

    /// Never true for a constructed value.
    pub fn is_empty(&self) -> bool {
        self.per_block.is_empty()
    }
}

fn check_compatible(x: &BlockedVector, mu: &BlockedVector, cov: &BlockCovariance) -> Result<()> {
    if x.structure().sizes() != cov.structure().sizes() || mu.structure().sizes() != cov.structure().sizes() {
        return Err(Error::shape("data, expectation and covariance block structures differ"));
    }
    Ok(())
}

/// `D²_i = (x_i - μ_i)ᵀ S_ii⁻¹ (x_i - μ_i)` for every block, via Cholesky solves.
pub fn block_mdistances(x: &BlockedVector, mu: &BlockedVector, cov: &BlockCovariance) -> Result<BlockMDistances> {
    check_compatible(x, mu, cov)?;
    let structure = cov.structure();
    let pairs: Vec<(f64, u32)> = (0..structure.n_blocks())
        .map(|i| {
            let r: Vec<f64> = x.block(i).iter().zip(mu.block(i)).map(|(a, b)| a - b).collect();
            let d2 = cov.factor(i).inv_quad_form(&r).max(0.0);
            (d2, structure.sizes()[i] as u32)
        })
        .collect();
    BlockMDistances::new(&pairs)
}

/// Naive total squared M-distance, unknown cross blocks taken as zero.
pub fn total_naive(x: &BlockedVector, mu: &BlockedVector, cov: &BlockCovariance) -> Result<f64> {
    Ok(block_mdistances(x, mu, cov)?.d_squared().iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
        let n = m.nrows();
        let mut a = m.clone();
        let mut inv = Matrix::identity(n);
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
                .unwrap();
            for j in 0..n {
                let t = a[(c, j)];
                a[(c, j)] = a[(p, j)];
                a[(p, j)] = t;
                let t = inv[(c, j)];
                inv[(c, j)] = inv[(p, j)];
                inv[(p, j)] = t;
            }
            let d = a[(c, c)];
            for j in 0..n {
                a[(c, j)] /= d;
                inv[(c, j)] /= d;
            }
            for i in 0..n {
                if i != c {
                    let f = a[(i, c)];
                    for j in 0..n {
                        a[(i, j)] -= f * a[(c, j)];
                        inv[(i, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        inv
    }

    fn pd_block(n: usize, seed: f64) -> SymmetricMatrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = libm::sin(seed * (1.0 + i as f64) + 0.7 * j as f64);
            }
        }
        SymmetricMatrix::from_symmetrized(&m.matmul(&m.transpose()).add(&Matrix::identity(n)))
    }

    #[test]
    fn zero_residual_gives_zero() {
        let s = BlockStructure::new(&[2, 3]).unwrap();
        let cov = BlockCovariance::identity(s.clone());
        let x = BlockedVector::new(s.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let d = block_mdistances(&x, &x, &cov).unwrap();
        assert_eq!(d.d_squared(), vec![0.0, 0.0]);
        assert_eq!(total_naive(&x, &x, &cov).unwrap(), 0.0);
    }

    #[test]
    fn euclidean_single_block() {
        let s = BlockStructure::new(&[2]).unwrap();
        let cov = BlockCovariance::identity(s.clone());
        let x = BlockedVector::new(s.clone(), vec![3.0, 4.0]).unwrap();
        let mu = BlockedVector::new(s, vec![0.0, 0.0]).unwrap();
        let d = block_mdistances(&x, &mu, &cov).unwrap();
        assert!((d.per_block()[0].d_squared - 25.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_block_diagonal_oracle() {
        let s = BlockStructure::new(&[2, 3, 4]).unwrap();
        let blocks = vec![pd_block(2, 0.3), pd_block(3, 1.1), pd_block(4, 2.3)];
        let cov = BlockCovariance::new(s.clone(), blocks, []).unwrap();
        let xv: Vec<f64> = (0..9).map(|i| libm::cos(i as f64 * 1.7) * 2.0).collect();
        let muv: Vec<f64> = (0..9).map(|i| libm::sin(i as f64) * 0.5).collect();
        let x = BlockedVector::new(s.clone(), xv.clone()).unwrap();
        let mu = BlockedVector::new(s.clone(), muv.clone()).unwrap();
        let d = block_mdistances(&x, &mu, &cov).unwrap();

        let dense_inv = gauss_jordan_inverse(cov.to_dense().as_matrix());
        for i in 0..3 {
            let masked: Vec<f64> = (0..9)
                .map(|j| if s.range(i).contains(&j) { xv[j] - muv[j] } else { 0.0 })
                .collect();
            let oracle = crate::linalg::dot(&masked, &dense_inv.matvec(&masked));
            assert!((d.per_block()[i].d_squared - oracle).abs() < 1e-10 * oracle.max(1.0));
        }
    }

    #[test]
    fn published_pair_sums() {
        let s = BlockStructure::with_labels(&[8, 8], vec!["dat".into(), "dpt".into()]).unwrap();
        let cov = BlockCovariance::identity(s.clone());
        let mut xv = vec![0.0; 16];
        xv[0] = libm::sqrt(19.59);
        xv[8] = libm::sqrt(13.91);
        let x = BlockedVector::new(s.clone(), xv).unwrap();
        let mu = BlockedVector::new(s, vec![0.0; 16]).unwrap();
        let total = total_naive(&x, &mu, &cov).unwrap();
        assert!((total - 33.50).abs() < 1e-12);
    }

    #[test]
    fn singular_block_names_label() {
        let s = BlockStructure::with_labels(&[2], vec!["T2K".into()]).unwrap();
        let b = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        match BlockCovariance::new(s, vec![b], []) {
            Err(Error::NotPositiveDefinite { context, .. }) => assert!(context.contains("T2K")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_zero_pairs_and_shapes() {
        let s = BlockStructure::new(&[1, 1]).unwrap();
        assert!(BlockCovariance::new(
            s.clone(),
            vec![SymmetricMatrix::identity(1), SymmetricMatrix::identity(1)],
            [(1, 1)]
        )
        .is_err());
        assert!(BlockCovariance::new(s.clone(), vec![SymmetricMatrix::identity(1)], []).is_err());
        assert!(BlockedVector::new(s, vec![1.0]).is_err());
        assert!(BlockStructure::new(&[]).is_err());
        assert!(BlockStructure::new(&[2, 0]).is_err());
        assert!(BlockStructure::with_labels(&[1, 1], vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn ordering_breaks_ties_by_index() {
        let d = BlockMDistances::new(&[(3.0, 1), (1.0, 2), (3.0, 4), (1.0, 1)]).unwrap();
        assert_eq!(d.ordering(), &[1, 3, 0, 2]);
    }

    #[test]
    fn block_lookup() {
        let s = BlockStructure::new(&[2, 3, 1]).unwrap();
        let owners: Vec<usize> = (0..6).map(|i| s.block_of(i)).collect();
        assert_eq!(owners, vec![0, 0, 1, 1, 1, 2]);
    }

    proptest! {
        #[test]
        fn invariant_under_blockwise_reparameterisation(
            entries in proptest::collection::vec(-1.0f64..1.0, 2 * 4 + 3 * 9 + 2 * 5),
        ) {
            // Transform (x_i, μ_i, S_ii) -> (M x_i, M μ_i, M S M ᵀ) with M = I + 0.4·R (invertible).
            let sizes = [2usize, 3];
            let s = BlockStructure::new(&sizes).unwrap();
            let mut it = entries.into_iter();
            let mut xs = Vec::new();
            let mut blocks = Vec::new();
            let mut new_xs = Vec::new();
            let mut new_blocks = Vec::new();
            for (bi, &n) in sizes.iter().enumerate() {
                let mut m = Matrix::identity(n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] += 0.4 * it.next().unwrap();
                    }
                }
                let x: Vec<f64> = (0..n).map(|_| it.next().unwrap() * 3.0).collect();
                let cov = pd_block(n, 0.9 + bi as f64);
                let cov2 = m.matmul(cov.as_matrix()).matmul(&m.transpose());
                new_xs.extend(m.matvec(&x));
                xs.extend(x);
                blocks.push(cov);
                new_blocks.push(SymmetricMatrix::from_symmetrized(&cov2));
            }
            let zeros = BlockedVector::new(s.clone(), vec![0.0; 5]).unwrap();
            let a = block_mdistances(
                &BlockedVector::new(s.clone(), xs).unwrap(),
                &zeros,
                &BlockCovariance::new(s.clone(), blocks, []).unwrap(),
            ).unwrap();
            let cov2 = match BlockCovariance::new(s.clone(), new_blocks, []) {
                Ok(c) => c,
                Err(_) => return Ok(()), // near-singular M: skip
            };
            let b = block_mdistances(&BlockedVector::new(s, new_xs).unwrap(), &zeros, &cov2).unwrap();
            for (p, q) in a.d_squared().iter().zip(b.d_squared()) {
                prop_assert!((p - q).abs() <= 1e-9 * p.max(1.0));
            }
        }
    }
}
