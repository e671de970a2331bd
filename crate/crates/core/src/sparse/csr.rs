use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Real compressed-row matrix. Column indices are strictly increasing within
/// each row; explicit zeros produced by assembly are kept as structural
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

pub type Triplet = (usize, usize, f64);

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Duplicates are summed in input order after a stable sort by column, so
    /// identical triplet lists always give bit-identical matrices.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[Triplet]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..n_rows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        Ok((0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect())
    }

    /// `Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_cols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                col_idx[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self · other` (row-wise Gustavson).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: other.n_rows,
            });
        }
        let rows = crate::exec::map_range(self.n_rows, |i| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    acc.push((j, a * b));
                }
            }
            acc.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(acc.len());
            for (j, v) in acc {
                match merged.last_mut() {
                    Some((lj, lv)) if *lj == j => *lv += v,
                    _ => merged.push((j, v)),
                }
            }
            merged
        });
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            for (j, v) in r {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: other.n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// `Σ wᵢ Aᵢ` over matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        let (n_rows, n_cols) = (first.n_rows, first.n_cols);
        let mut triplets = Vec::new();
        for (w, m) in terms {
            if (m.n_rows, m.n_cols) != (n_rows, n_cols) {
                return Err(Error::DimensionMismatch {
                    expected: n_rows,
                    got: m.n_rows,
                });
            }
            triplets.extend(m.triplets().map(|(i, j, v)| (i, j, w * v)));
        }
        Self::from_triplets(n_rows, n_cols, &triplets)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(d) · A`.
    pub fn scale_rows(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                got: d.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.values[k] *= d[i];
            }
        }
        Ok(out)
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && self
                .triplets()
                .all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol * (1.0 + v.abs()))
    }

    /// Coordinate text dump: header `n_rows n_cols nnz`, then `row col value`.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz()).unwrap();
        for (i, j, v) in self.triplets() {
            writeln!(s, "{i} {j} {v:.16e}").unwrap();
        }
        s
    }

    pub fn from_coordinate_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad header field `{s}`"))))
            .collect::<Result<_>>()?;
        let [n_rows, n_cols, nnz] = head[..] else {
            return Err(Error::Parse("header must be `n_rows n_cols nnz`".into()));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("bad entry line `{line}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            triplets.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            ));
        }
        if triplets.len() != nnz {
            return Err(Error::Parse(format!(
                "expected {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(n_rows, n_cols, &triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_summed() {
        let a = SparseMatrix::from_triplets(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 3.0);
    }

    #[test]
    fn empty_triplets_give_zero_matrix() {
        let a = SparseMatrix::from_triplets(3, 3, &[]).unwrap();
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_and_swap() {
        let i = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(i.matvec(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let p = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(p.matvec(&[5.0, -7.0]).unwrap(), vec![-7.0, 5.0]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(matches!(
            SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]),
            Err(Error::IndexOutOfRange { row: 2, .. })
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = SparseMatrix::identity(3);
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn coordinate_dump_roundtrip() {
        let a = SparseMatrix::from_triplets(3, 2, &[(0, 1, 0.1), (2, 0, -3.5e-7)]).unwrap();
        let text = a.to_coordinate_text();
        assert!(text.starts_with("3 2 2\n"));
        assert_eq!(SparseMatrix::from_coordinate_text(&text).unwrap(), a);
    }

    fn random_triplets() -> impl Strategy<Value = (usize, usize, Vec<Triplet>)> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            let t = (0..r, 0..c, -10.0f64..10.0);
            (Just(r), Just(c), prop::collection::vec(t, 0..60))
        })
    }

    proptest! {
        #[test]
        fn matvec_matches_dense((r, c, t) in random_triplets(), seed in 0u64..1000) {
            let a = SparseMatrix::from_triplets(r, c, &t).unwrap();
            let x: Vec<f64> = (0..c).map(|j| ((j as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let mut dense = vec![vec![0.0; c]; r];
            for &(i, j, v) in &t { dense[i][j] += v; }
            let y = a.matvec(&x).unwrap();
            for i in 0..r {
                let e: f64 = (0..c).map(|j| dense[i][j] * x[j]).sum();
                prop_assert!((y[i] - e).abs() <= 1e-12 * (1.0 + e.abs()));
            }
            // canonical storage
            for i in 0..r {
                let cols: Vec<usize> = a.row(i).map(|(j, _)| j).collect();
                prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            }
            let at = a.transpose();
            prop_assert_eq!(at.transpose(), a.clone());
            let yt = at.matvec_transpose(&x).unwrap();
            for i in 0..r { prop_assert!((yt[i] - y[i]).abs() <= 1e-12 * (1.0 + y[i].abs())); }
        }

        #[test]
        fn matmul_matches_dense((r, c, t) in random_triplets()) {
            let a = SparseMatrix::from_triplets(r, c, &t).unwrap();
            let at = a.transpose();
            let p = a.matmul(&at).unwrap();
            let d = a.to_dense();
            for i in 0..r {
                for j in 0..r {
                    let e: f64 = (0..c).map(|k| d[i][k] * d[j][k]).sum();
                    prop_assert!((p.get(i, j) - e).abs() <= 1e-10 * (1.0 + e.abs()));
                }
            }
        }
    }
}
