//! Gibbs sampler for the principal-strata model with Pólya-Gamma augmentation.
//!
//! Each conditional posterior is exposed twice: a pure function returning its
//! parameters (for checking against brute-force evaluation) and an update that
//! samples from it and writes into the [`ParameterState`].

mod chain;
mod init;
mod membership;
mod outcome;
mod strata;

pub use chain::{
    chain_stream_id, run_chain, run_chains, sweep, ChainFailure, ChainOutput, SweepContrasts,
    SweepPlan, UpdateStep,
};
pub use init::{init_state, variance_benchmarks, VarianceBenchmarks};
pub use membership::{membership_probabilities, update_strata_membership, MembershipProbability};
pub use outcome::{
    outcome_cluster_effects_conditional, outcome_cluster_variance_conditional,
    outcome_coefficients_conditional, outcome_cp_effects_conditional,
    outcome_cp_variance_conditional, outcome_error_variance_conditional, outcome_residuals,
    update_outcome_cluster_effects, update_outcome_cluster_variance, update_outcome_coefficients,
    update_outcome_cp_effects, update_outcome_cp_variance, update_outcome_error_variance,
};
pub use strata::{
    pg_tilts, strata_cluster_effects_conditional, strata_cluster_variance_conditional,
    strata_coefficients_conditional, strata_cp_effects_conditional, strata_cp_variance_conditional,
    strata_predictors, update_pg_latents, update_strata_cluster_effects,
    update_strata_cluster_variance, update_strata_coefficients, update_strata_cp_effects,
    update_strata_cp_variance, StrataWork,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::design::DesignMatrices;
use crate::error::Result;
use crate::model::{ModelConfig, ResolvedCoefficientPrior};
use crate::rand_dist::{sample_invgamma, sample_mvn_precision};

/// The two outcome strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeStratum {
    /// `(1,1)`
    Always,
    /// `(1,0)`
    Protected,
}

/// The two linear predictors of the strata model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrataComponent {
    /// Always-survivor predictor `Z`.
    Z,
    /// Protected predictor `W`.
    W,
}

/// Immutable inputs shared by every update of one chain.
#[derive(Debug, Clone)]
pub struct GibbsContext<'a> {
    pub dm: &'a DesignMatrices,
    pub config: &'a ModelConfig,
    pub prior_always: ResolvedCoefficientPrior,
    pub prior_protected: ResolvedCoefficientPrior,
    pub prior_z: ResolvedCoefficientPrior,
    pub prior_w: ResolvedCoefficientPrior,
}

impl<'a> GibbsContext<'a> {
    pub fn new(dm: &'a DesignMatrices, config: &'a ModelConfig) -> Result<Self> {
        config.validate()?;
        let pr = &config.priors;
        Ok(GibbsContext {
            dm,
            config,
            prior_always: pr.always.coefficients.resolve(dm.k_out11())?,
            prior_protected: pr.protected.coefficients.resolve(dm.k_out10())?,
            prior_z: pr.z.coefficients.resolve(dm.k_ps())?,
            prior_w: pr.w.coefficients.resolve(dm.k_ps())?,
        })
    }
}

/// Multivariate normal in canonical form: precision `Q` and linear term `b`,
/// so that mean = `Q⁻¹ b` and covariance = `Q⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl GaussianConditional {
    pub fn mean(&self) -> Option<DVector<f64>> {
        self.precision
            .clone()
            .cholesky()
            .map(|c| c.solve(&self.linear))
    }

    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        self.precision.clone().cholesky().map(|c| c.inverse())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        sample_mvn_precision(&self.precision, &self.linear, rng).map(|(x, _)| x)
    }
}

/// Independent normals in canonical form, one coordinate per random effect.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub precision: Vec<f64>,
    pub linear: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn mean(&self) -> Vec<f64> {
        self.linear
            .iter()
            .zip(&self.precision)
            .map(|(b, q)| b / q)
            .collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.precision.iter().map(|q| 1.0 / q).collect()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        for ((o, b), q) in out.iter_mut().zip(&self.linear).zip(&self.precision) {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *o = b / q + z / q.sqrt();
        }
    }
}

/// Inverse-gamma conditional in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_invgamma(self.shape, self.rate, rng)
    }
}

/// Adds `scale · x xᵀ` to the upper triangle of `m`.
pub(crate) fn add_outer_upper(m: &mut DMatrix<f64>, x: &[f64], scale: f64) {
    let k = x.len();
    debug_assert_eq!(m.shape(), (k, k));
    for (j, col) in m.as_mut_slice().chunks_exact_mut(k).enumerate() {
        let sxj = scale * x[j];
        for (c, xi) in col[..=j].iter_mut().zip(x) {
            *c += xi * sxj;
        }
    }
}

/// `acc += scale · x`
pub(crate) fn axpy(acc: &mut DVector<f64>, x: &[f64], scale: f64) {
    for (a, xi) in acc.as_mut_slice().iter_mut().zip(x) {
        *a += xi * scale;
    }
}

/// Copies the upper triangle of `m` into the lower triangle.
pub(crate) fn symmetrize_from_upper(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for j in 0..k {
        for i in 0..j {
            m[(j, i)] = m[(i, j)];
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
