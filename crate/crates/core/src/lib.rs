//! Kernel Bayes' rule with importance-weighted conditioning.
//!
//! Distributions are represented as weight vectors over sample anchors in a
//! reproducing kernel Hilbert space. Conditioning reweights the anchors of a
//! joint training sample by an estimated density ratio between the prior and
//! the training marginal, then applies a ridge-regularized conditional mean
//! embedding. The same update drives a kernel Bayes filter for state-space
//! models.

pub mod adaptive;
pub mod baselines;
pub mod benchmarks;
pub mod cli;
pub mod density_ratio;
pub mod embedding;
pub mod error;
pub mod kbf;
pub mod kbr;
pub mod kernel;
pub mod rng;

pub use embedding::{empirical_embedding, MeanEmbedding, SampleSet};
pub use error::{Error, Result};
pub use kernel::{gram, GramMatrix, KernelSpec};
