//! Short-term traffic speed forecasting from loop-detector data.

pub mod cli;
pub mod datastore;
pub mod deepnet;
pub mod diagnostics;
pub mod error;
pub mod evalharness;
pub mod filters;
pub mod hypersearch;
pub mod linalg;
pub mod sparsevar;
pub mod synthgen;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/sparse-var.md")]
    mod sparse_var {}
    #[doc = include_str!("../../../book/src/deep-nets.md")]
    mod deep_nets {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
