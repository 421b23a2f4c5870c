//! Sparse symmetric positive-definite factorization, computed once and
//! reused for any number of right-hand sides.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut, Par, Side};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("factorization failed: {0}")]
    Backend(String),
}

/// `L L^T` factor of a sparse SPD matrix. Runs single-threaded so results
/// are bit-identical across machines with the same floating-point unit.
pub struct SpdFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    n: usize,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("n", &self.n).field("nnz_l", &self.values.len()).finish()
    }
}

impl SpdFactor {
    /// Factors the symmetric matrix given by its lower-triangle entries
    /// `(row, col, value)` with `row >= col`. Duplicates are summed.
    pub fn new(n: usize, lower: &[(usize, usize, f64)]) -> Result<Self, FactorError> {
        let triplets: Vec<Triplet<usize, usize, f64>> = lower
            .iter()
            .map(|&(r, c, v)| {
                debug_assert!(r >= c);
                Triplet::new(r, c, v)
            })
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| FactorError::Backend(format!("{e:?}")))?;
        let symbolic = factorize_symbolic_cholesky(
            mat.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            Default::default(),
        )
        .map_err(|e| FactorError::Backend(format!("{e:?}")))?;
        let mut values = vec![0.0f64; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_llt::<f64>(
                &mut values,
                mat.as_ref(),
                Side::Lower,
                LltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|_| FactorError::NotPositiveDefinite)?;
        Ok(Self { symbolic, values, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` in place for a column-major `n x ncols` block.
    pub fn solve_in_place(&self, rhs: &mut [f64], ncols: usize) {
        assert_eq!(rhs.len(), self.n * ncols);
        if self.n == 0 {
            return;
        }
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(ncols, Par::Seq));
        let rhs = MatMut::from_column_major_slice_mut(rhs, self.n, ncols);
        LltRef::<'_, usize, f64>::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            rhs,
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }
}
