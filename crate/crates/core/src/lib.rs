//! Gaussian-process maximum likelihood on scattered planar data, using a
//! recursive skeletonization factorization of the covariance and matrix
//! peeling for the trace terms of the gradient.
//!
//! The guide in `book/` walks through the pieces; its code blocks run as
//! doc-tests of this crate.

pub mod cli;
pub mod dense;
pub mod error;
pub mod geom;
pub mod io;
pub mod kernel;
pub mod likelihood;
pub mod lowrank;
pub mod optimize;
pub mod oracle;
pub mod peel;
pub mod rskelf;

pub use error::{Error, Result};
pub use geom::{PointSet, QuadTree};
pub use kernel::{Anisotropy, Family, KernelModel, Nugget, Which};
pub use likelihood::{evaluate, EvalOptions, LikelihoodReport, Observations};
pub use optimize::{fit, FitConfig};
pub use peel::{peel_trace, PeelOptions};
pub use rskelf::{FactorOptions, SkelFactorization};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quadtree.md")]
    mod quadtree {}
    #[doc = include_str!("../../../book/src/factorization.md")]
    mod factorization {}
    #[doc = include_str!("../../../book/src/peeling.md")]
    mod peeling {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
