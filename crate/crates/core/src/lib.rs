//! Bayesian estimation of the survivor average causal effect (SACE) in
//! two-period cluster-randomized crossover trials.
//!
//! Outcomes are modelled on the log scale with cluster and cluster-period
//! random effects per principal stratum; stratum membership follows a
//! multinomial logit with cluster random effects. Posterior draws come from a
//! fully conjugate Gibbs sampler with Pólya-Gamma augmentation.

pub mod design;
pub mod error;
pub mod estimands;
pub mod gibbs;
pub mod math;
pub mod model;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
pub mod rand_dist;
pub mod simulate;

pub use error::{Result, SaceError};
