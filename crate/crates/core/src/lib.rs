//! Desk-scale testbed for transferring masked language models across token
//! vocabularies.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense `f64` tensors, a tape-based reverse-mode autodiff
//!   graph, one-sided Jacobi SVD, the Hungarian assignment solver and a
//!   splittable counter-based RNG.
//! * [`model`]: a post-LN transformer encoder with MLM and sequence
//!   classification heads, initialization, re-embedding and checkpoint I/O.
//! * [`corpora`]: synthetic corpora (uniform, flat/nesting brackets), a motif
//!   classification task, token mappings and the dataset wire formats.
//! * [`training`]: Adam with linear decay, MLM pretraining, fine-tuning and
//!   metrics.
//! * [`diagnostics`]: PWCCA, attention matching, Jacobian spectra, gradient
//!   confusion and perturbation variance.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise. Reductions are
//! always performed in a fixed order so results do not depend on the thread
//! count.

pub mod corpora;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod numerics;
pub mod par;
pub mod training;

pub use error::{Error, Result};
