// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod factors;
pub mod generator;
pub mod hawkes;
pub mod io;
pub mod kernel;
pub mod path;
pub mod quad;
pub mod seed;
pub mod triplet;

pub use curve::Curve;
pub use engine::{Grid, Model, SolutionSample};
pub use error::{Error, Result};
pub use expr::{Expr, MatrixExpr, VectorExpr};
pub use generator::{apply_generator, approximate_triplet, TestFunction};
pub use kernel::{Kernel, KernelFamily};
pub use path::{GridFunction, StepFunction};
pub use seed::SeedSpec;
pub use triplet::{JumpFamily, Triplet};
