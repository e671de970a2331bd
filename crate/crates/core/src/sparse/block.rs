use super::{lu, SparseMatrix, Triplet};
use crate::error::{Error, Result};

/// Ordered named field-blocks, each `block_size` unknowns long.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    names: Vec<String>,
    block_size: usize,
}

impl BlockLayout {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, block_size: usize) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!("duplicate block name `{n}`")));
            }
        }
        Ok(Self { names, block_size })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_blocks(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.names.len() * self.block_size
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    pub fn offset(&self, name: &str) -> Result<usize> {
        Ok(self.index(name)? * self.block_size)
    }
}

/// One `block_size × block_size` contribution to the block matrix.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a> {
    pub row: &'a str,
    pub col: &'a str,
    pub scale: f64,
    pub matrix: &'a SparseMatrix,
}

impl<'a> Contribution<'a> {
    pub fn new(row: &'a str, col: &'a str, scale: f64, matrix: &'a SparseMatrix) -> Self {
        Self {
            row,
            col,
            scale,
            matrix,
        }
    }
}

/// Square system over the concatenated block unknowns.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub layout: BlockLayout,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Accumulates block contributions, right-hand sides and row replacements.
#[derive(Debug, Clone)]
pub struct BlockAssembler {
    layout: BlockLayout,
    triplets: Vec<Triplet>,
    rhs: Vec<f64>,
    fixed_rows: Vec<bool>,
}

impl BlockAssembler {
    pub fn new(layout: BlockLayout) -> Self {
        let n = layout.dim();
        Self {
            layout,
            triplets: Vec::new(),
            rhs: vec![0.0; n],
            fixed_rows: vec![false; n],
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn add(&mut self, c: Contribution<'_>) -> Result<&mut Self> {
        let bs = self.layout.block_size;
        if c.matrix.n_rows() != bs || c.matrix.n_cols() != bs {
            return Err(Error::DimensionMismatch {
                expected: bs,
                got: c.matrix.n_rows().max(c.matrix.n_cols()),
            });
        }
        let (ro, co) = (self.layout.offset(c.row)?, self.layout.offset(c.col)?);
        self.triplets.extend(
            c.matrix
                .triplets()
                .map(|(i, j, v)| (ro + i, co + j, c.scale * v)),
        );
        Ok(self)
    }

    pub fn add_rhs(&mut self, block: &str, scale: f64, values: &[f64]) -> Result<&mut Self> {
        let bs = self.layout.block_size;
        if values.len() != bs {
            return Err(Error::DimensionMismatch {
                expected: bs,
                got: values.len(),
            });
        }
        let o = self.layout.offset(block)?;
        for (i, v) in values.iter().enumerate() {
            self.rhs[o + i] += scale * v;
        }
        Ok(self)
    }

    /// Replace the listed rows of `block` by identity rows with the given
    /// values (plain row replacement, no column elimination).
    pub fn fix_rows(&mut self, block: &str, rows: &[usize], values: &[f64]) -> Result<&mut Self> {
        if rows.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: values.len(),
            });
        }
        let o = self.layout.offset(block)?;
        for (&r, &v) in rows.iter().zip(values) {
            if r >= self.layout.block_size {
                return Err(Error::InvalidArgument(format!("row {r} outside block `{block}`")));
            }
            self.fixed_rows[o + r] = true;
            self.rhs[o + r] = v;
        }
        Ok(self)
    }

    pub fn finish(self) -> Result<BlockSystem> {
        let n = self.layout.dim();
        let fixed = &self.fixed_rows;
        let mut triplets: Vec<Triplet> = self
            .triplets
            .into_iter()
            .filter(|&(i, _, _)| !fixed[i])
            .collect();
        triplets.extend((0..n).filter(|&i| fixed[i]).map(|i| (i, i, 1.0)));
        let matrix = SparseMatrix::from_triplets(n, n, &triplets)?;
        if let Some(empty) = (0..n).find(|&i| matrix.row(i).next().is_none()) {
            return Err(Error::InvalidArgument(format!(
                "block system row {empty} is empty"
            )));
        }
        Ok(BlockSystem {
            layout: self.layout,
            matrix,
            rhs: self.rhs,
        })
    }
}

/// Assemble a block system from contributions and per-block right-hand sides.
pub fn assemble_block(
    layout: BlockLayout,
    contributions: &[Contribution<'_>],
    rhs: &[(&str, &[f64])],
) -> Result<BlockSystem> {
    let mut asm = BlockAssembler::new(layout);
    for c in contributions {
        asm.add(*c)?;
    }
    for (name, v) in rhs {
        asm.add_rhs(name, 1.0, v)?;
    }
    asm.finish()
}

/// Solution vector split by block.
#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub layout: BlockLayout,
    pub values: Vec<f64>,
}

impl BlockSolution {
    pub fn block(&self, name: &str) -> Result<&[f64]> {
        let o = self.layout.offset(name)?;
        Ok(&self.values[o..o + self.layout.block_size])
    }
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn solve(&self) -> Result<BlockSolution> {
        let values = lu::solve(&self.matrix, &self.rhs)?;
        Ok(BlockSolution {
            layout: self.layout.clone(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve4(a: [[f64; 4]; 4], b: [f64; 4]) -> [f64; 4] {
        // Cramer-free elimination for the tiny oracle
        let mut m = a;
        let mut r = b;
        for k in 0..4 {
            let p = (k..4).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, p);
            r.swap(k, p);
            for i in k + 1..4 {
                let f = m[i][k] / m[k][k];
                for j in k..4 {
                    m[i][j] -= f * m[k][j];
                }
                r[i] -= f * r[k];
            }
        }
        let mut x = [0.0; 4];
        for k in (0..4).rev() {
            let s: f64 = (k + 1..4).map(|j| m[k][j] * x[j]).sum();
            x[k] = (r[k] - s) / m[k][k];
        }
        x
    }

    #[test]
    fn identity_blocks_return_rhs() {
        let layout = BlockLayout::new(["a", "b"], 3).unwrap();
        let i = SparseMatrix::identity(3);
        let sys = assemble_block(
            layout,
            &[Contribution::new("a", "a", 1.0, &i), Contribution::new("b", "b", 1.0, &i)],
            &[("a", &[1.0, 2.0, 3.0]), ("b", &[4.0, 5.0, 6.0])],
        )
        .unwrap();
        let sol = sys.solve().unwrap();
        assert_eq!(sol.block("a").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(sol.block("b").unwrap(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn off_diagonal_coupling_matches_dense() {
        let layout = BlockLayout::new(["u", "v"], 2).unwrap();
        let d = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]).unwrap();
        let c = SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.5), (1, 0, 0.25)]).unwrap();
        let i = SparseMatrix::identity(2);
        let sys = assemble_block(
            layout,
            &[
                Contribution::new("u", "u", 1.0, &d),
                Contribution::new("u", "v", 1.0, &c),
                Contribution::new("v", "v", 1.0, &i),
            ],
            &[("u", &[1.0, 0.0]), ("v", &[0.0, 2.0])],
        )
        .unwrap();
        let sol = sys.solve().unwrap();
        let dense = [
            [2.0, -1.0, 0.0, 0.5],
            [-1.0, 2.0, 0.25, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let e = dense_solve4(dense, [1.0, 0.0, 0.0, 2.0]);
        for (a, b) in sol.values.iter().zip(e) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn block_order_permutation_is_relabeling() {
        let d = SparseMatrix::from_triplets(2, 2, &[(0, 0, 3.0), (0, 1, 1.0), (1, 1, 2.0)]).unwrap();
        let c = SparseMatrix::from_triplets(2, 2, &[(1, 0, 0.7)]).unwrap();
        let contribs = [
            Contribution::new("p", "p", 1.0, &d),
            Contribution::new("p", "q", -1.0, &c),
            Contribution::new("q", "q", 2.0, &d),
            Contribution::new("q", "p", 1.0, &c),
        ];
        let rhs: [(&str, &[f64]); 2] = [("p", &[1.0, -1.0]), ("q", &[0.5, 2.0])];
        let s1 = assemble_block(BlockLayout::new(["p", "q"], 2).unwrap(), &contribs, &rhs)
            .unwrap()
            .solve()
            .unwrap();
        let s2 = assemble_block(BlockLayout::new(["q", "p"], 2).unwrap(), &contribs, &rhs)
            .unwrap()
            .solve()
            .unwrap();
        for name in ["p", "q"] {
            let (a, b) = (s1.block(name).unwrap(), s2.block(name).unwrap());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unknown_block_rejected() {
        let mut asm = BlockAssembler::new(BlockLayout::new(["a"], 1).unwrap());
        let i = SparseMatrix::identity(1);
        assert!(matches!(
            asm.add(Contribution::new("a", "zz", 1.0, &i)),
            Err(Error::UnknownBlock(_))
        ));
    }

    #[test]
    fn fixed_rows_replace_equations() {
        let layout = BlockLayout::new(["y"], 3).unwrap();
        let k = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (0, 1, 5.0), (1, 1, 2.0), (2, 2, 4.0), (2, 1, 1.0)]).unwrap();
        let mut asm = BlockAssembler::new(layout);
        asm.add(Contribution::new("y", "y", 1.0, &k)).unwrap();
        asm.add_rhs("y", 1.0, &[9.0, 2.0, 9.0]).unwrap();
        asm.fix_rows("y", &[0, 2], &[0.0, 0.0]).unwrap();
        let sys = asm.finish().unwrap();
        let sol = sys.solve().unwrap();
        assert_eq!(sol.values, vec![0.0, 1.0, 0.0]);
    }
}
