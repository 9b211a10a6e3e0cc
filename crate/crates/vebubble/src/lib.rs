//! Unfitted parametric finite element solver for two-phase incompressible
//! flow of Oldroyd-B fluids in two space dimensions.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod assembly;
pub mod bulk_mesh;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod interface;
pub mod lambda;
pub mod matfun;
pub mod output;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};

/// Scalar type of the solver.
pub type Real = f64;
pub type SymMat2 = matfun::SymMat2<Real>;
pub type RefMapping = lambda::RefMapping<Real>;
pub type LambdaElement = lambda::LambdaElement<Real>;
