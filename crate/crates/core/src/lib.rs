// Negated float comparisons in this crate are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod fem;
pub mod forward;
pub mod linearization;
pub mod lm;
pub mod mesh;
pub mod phantom;
pub mod sparse;
pub mod verification;

pub use error::{Error, Result};
