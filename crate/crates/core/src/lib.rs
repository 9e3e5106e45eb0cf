//! Belief-state geometry laboratory for the Mess3 family of hidden Markov models.
//!
//! The crate is `no_std` (with `alloc`) and covers the numerical side of the
//! project:
//!
//! - [`hmm`]: Mess3 construction, stationary structure, exact sequence
//!   probabilities, enumeration and sampling.
//! - [`belief`]: exact Bayesian belief states and the parallel, attention-shaped
//!   constrained belief states, collected into point clouds.
//! - [`spectral`]: spectral projectors of the hidden-state transition matrix and
//!   the attention / OV / embedding predictions that follow from them.
//! - [`nn`]: a small decoder-only transformer with a hand-derived backward pass.
//! - [`train`]: Adam, online next-token training and KL evaluation against the
//!   optimal predictor.
//! - [`analysis`]: PCA, affine regression onto theoretical geometries, attention
//!   decay fits, OV / embedding geometry checks and theory-built weights.
//!
//! File formats, the CLI and figure rendering live in the `mess3-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod belief;
mod error;
pub mod exec;
pub mod hmm;
pub mod linalg;
pub(crate) mod math;
pub mod nn;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
