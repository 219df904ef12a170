//! Robust interior point solver for convex quadratic programs whose objective
//! is given as a low-rank factorization, with an SVM training layer on top.

pub mod barrier;
pub mod error;
pub mod exact_ds;
pub mod io;
pub mod ipm;
pub mod kernel;
pub mod linalg;
pub mod maintenance;
pub mod model;
pub mod oracle;
pub mod sketch;
pub mod svm;

pub use barrier::{BlockDomain, BlockKind, LocalMetric};
pub use error::{Error, Result};
pub use model::{augment_for_initial_point, AugmentedInstance, Objective, QpInstance, Radii, Restriction};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/low-rank.md")]
    mod low_rank {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/svm.md")]
    mod svm {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
