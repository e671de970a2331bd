//! Sparse matrices, direct solves and block-structured systems.

mod block;
mod csr;
pub mod lu;

pub use block::{assemble_block, BlockAssembler, BlockLayout, BlockSolution, BlockSystem, Contribution};
pub use csr::{SparseMatrix, Triplet};
pub use lu::{solve, LuFactor};
