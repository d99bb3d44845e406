//! Lesion-outcome segmentation from perfusion MRI with a two-branch
//! U-Net/GRU network, built on an in-crate reverse-mode kernel set.
//!
//! Stages, in pipeline order: [`phantom`] → [`temporal`] → [`preproc`] →
//! [`train`] → [`predict`] → [`metrics`]. The `pwtk` binary exposes each as
//! a subcommand; [`pipeline`] holds the shared file-level glue.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod plot;
pub mod predict;
pub mod preproc;
pub mod rng;
pub mod selftest;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
