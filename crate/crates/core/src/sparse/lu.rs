//! Sparse direct solves backed by faer's supernodal LU with partial pivoting.
//!
//! faer is built without its thread pool, so factorizations are sequential
//! and bit-for-bit reproducible.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use super::SparseMatrix;
use crate::error::{Error, Result};

/// Relative residual contract of [`solve`].
pub const RESIDUAL_RTOL: f64 = 1e-8;

/// `P A Q = L U` of a square sparse matrix.
#[derive(Clone)]
pub struct LuFactor {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor").field("n", &self.n).finish_non_exhaustive()
    }
}

impl LuFactor {
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::InvalidArgument(format!(
                "LU needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let triplets: Vec<Triplet<usize, usize, f64>> = a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let csc = SparseColMat::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::InvalidArgument(format!("sparse conversion failed: {e:?}")))?;
        let lu = csc.sp_lu().map_err(|e| match e {
            LuError::SymbolicSingular { index } => Error::SingularMatrix(format!("structurally singular at step {index}")),
            LuError::Generic(e) => Error::InvalidArgument(format!("LU failed: {e:?}")),
        })?;
        let this = Self { n, lu };
        // A zero pivot shows up as non-finite values in a probe solve.
        if n > 0 && this.solve(&vec![1.0; n])?.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix("zero pivot in numeric factorization".into()));
        }
        Ok(this)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual `‖Ax − b‖₂ / ‖b‖₂` (absolute when `b = 0`).
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.matvec(x)?;
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    Ok(if nb > 0.0 { norm2(&r) / nb } else { norm2(&r) })
}

/// Solve with an existing factorization, refining iteratively until the
/// residual contract holds (at most three refinement sweeps).
pub fn solve_with(a: &SparseMatrix, lu: &LuFactor, b: &[f64]) -> Result<Vec<f64>> {
    let mut x = lu.solve(b)?;
    if norm2(b) == 0.0 {
        return Ok(x);
    }
    for _ in 0..3 {
        let res = relative_residual(a, &x, b)?;
        if !res.is_finite() {
            return Err(Error::SingularMatrix("non-finite solution".into()));
        }
        if res <= RESIDUAL_RTOL {
            return Ok(x);
        }
        let ax = a.matvec(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = lu.solve(&r)?;
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    }
    let res = relative_residual(a, &x, b)?;
    if res <= RESIDUAL_RTOL {
        Ok(x)
    } else {
        Err(Error::ResidualContract { residual: res })
    }
}

/// Factor and solve `A x = b`.
pub fn solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: a.n_rows(),
            got: b.len(),
        });
    }
    let lu = LuFactor::factorize(a)?;
    solve_with(a, &lu, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn identity_system() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve(&SparseMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn one_triangle_mass_matrix() {
        let area = 0.5;
        let mut t = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                t.push((i, j, area / 12.0 * if i == j { 2.0 } else { 1.0 }));
            }
        }
        let m = SparseMatrix::from_triplets(3, 3, &t).unwrap();
        let b = m.matvec(&[1.0; 3]).unwrap();
        let x = solve(&m, &b).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_sparse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let n = 50;
            let mut t = Vec::new();
            for i in 0..n {
                t.push((i, i, 4.0 + rng.random::<f64>()));
                for _ in 0..4 {
                    let j = rng.random_range(0..n);
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
            let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solve(&a, &b).unwrap();
            let e = dense_solve(a.to_dense(), b.clone());
            let err = norm2(&x.iter().zip(&e).map(|(p, q)| p - q).collect::<Vec<_>>()) / norm2(&e);
            assert!(err < 1e-10, "trial {trial}: {err:e}");
        }
    }

    #[test]
    fn zero_diagonal_needs_pivoting() {
        // [[0, 1], [1, 0]] and a saddle-point block.
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(solve(&a, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (1, 2, 1.0), (2, 0, 1.0), (2, 1, 1.0), (2, 2, 0.0)],
        )
        .unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = solve(&a, &b).unwrap();
        assert!(relative_residual(&a, &x, &b).unwrap() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (0, 2, 1.0), (2, 2, 1.0)])
            .unwrap();
        // column 2 equals column 0 → rank 2
        assert!(matches!(LuFactor::factorize(&a), Err(Error::SingularMatrix(_))));
        let z = SparseMatrix::zeros(2, 2);
        assert!(matches!(LuFactor::factorize(&z), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn non_square_and_bad_rhs_rejected() {
        assert!(LuFactor::factorize(&SparseMatrix::zeros(2, 3)).is_err());
        assert!(solve(&SparseMatrix::identity(2), &[1.0]).is_err());
    }

    #[test]
    fn factorization_is_bitwise_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 1e-3));
            for _ in 0..5 {
                t.push((i, rng.random_range(0..n), rng.random_range(-1.0..1.0)));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x1 = solve(&a, &b).unwrap();
        let x2 = solve(&a, &b).unwrap();
        assert_eq!(
            x1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            x2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
