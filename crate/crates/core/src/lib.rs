//! Contrastive disentangling of learnable and memorizable records, and a
//! transmission simulator comparing semantic and classical routing.
//!
//! The pipeline: [`contrastive::train`] an encoder with a per-cluster memory
//! bank, [`disentangle::split_assignments`] into learnable and memorizable
//! points, [`semlang::build_language`] for the learnable part, then compare
//! schemes with [`simkpi::run_sweep`].

// NaN fails every comparison, so `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod cli;
pub mod contrastive;
pub mod datagen;
pub mod disentangle;
pub mod encoder;
pub mod error;
pub mod numcore;
pub mod pipeline;
pub mod report;
pub mod semlang;
pub mod simkpi;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/contrastive.md")]
    mod contrastive {}
    #[doc = include_str!("../../../book/src/disentangle.md")]
    mod disentangle {}
    #[doc = include_str!("../../../book/src/semantic-language.md")]
    mod semantic_language {}
    #[doc = include_str!("../../../book/src/kpis.md")]
    mod kpis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
