//! Conditionals of the two log-outcome mixed models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{
    add_outer_upper, axpy, dot, symmetrize_from_upper, DiagonalGaussian, GaussianConditional,
    GibbsContext, InvGammaParams, OutcomeStratum,
};
use crate::design::StratumViews;
use crate::error::Result;
use crate::model::{OutcomePrior, ParameterState};

fn prior<'c>(ctx: &'c GibbsContext<'_>, g: OutcomeStratum) -> &'c OutcomePrior {
    match g {
        OutcomeStratum::Always => &ctx.config.priors.always,
        OutcomeStratum::Protected => &ctx.config.priors.protected,
    }
}

fn rows(views: &StratumViews, g: OutcomeStratum) -> &[usize] {
    match g {
        OutcomeStratum::Always => &views.rows_y11,
        OutcomeStratum::Protected => &views.rows_y10,
    }
}

fn error_variance(state: &ParameterState, g: OutcomeStratum) -> f64 {
    match g {
        OutcomeStratum::Always => state.variances.sigma2_always,
        OutcomeStratum::Protected => state.variances.sigma2_protected,
    }
}

/// `(fixed effect, cluster RE, cluster-period RE)` of row `r` under stratum `g`.
pub(crate) fn mean_parts(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    g: OutcomeStratum,
    r: usize,
) -> (f64, f64, f64) {
    let dm = ctx.dm;
    let c = dm.cluster(r);
    match g {
        OutcomeStratum::Always => (
            dot(dm.out11_row(r), &state.theta_always),
            state.xi_always[c],
            state.gamma_always[dm.cp(r)],
        ),
        OutcomeStratum::Protected => (
            dot(dm.out10_row(r), &state.theta_protected),
            state.xi_protected[c],
            dm.treated_cp(r).map_or(0.0, |t| state.gamma_protected[t]),
        ),
    }
}

/// Full residuals `y - Dθ - ξ - γ` over the rows of stratum `g`, in view order.
pub fn outcome_residuals(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
) -> Vec<f64> {
    rows(views, g)
        .iter()
        .map(|&r| {
            let (f, xi, ga) = mean_parts(ctx, state, g, r);
            ctx.dm.log_y(r) - f - xi - ga
        })
        .collect()
}

/// Coefficients: precision `DᵀD/σ² + Σ⁻¹`, linear term `Dᵀ(y - ξ - γ)/σ² + Σ⁻¹μ`.
pub fn outcome_coefficients_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
) -> GaussianConditional {
    let dm = ctx.dm;
    let (resolved, k) = match g {
        OutcomeStratum::Always => (&ctx.prior_always, dm.k_out11()),
        OutcomeStratum::Protected => (&ctx.prior_protected, dm.k_out10()),
    };
    let inv_s2 = 1.0 / error_variance(state, g);
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for &r in rows(views, g) {
        let d = match g {
            OutcomeStratum::Always => dm.out11_row(r),
            OutcomeStratum::Protected => dm.out10_row(r),
        };
        let (_, xi, ga) = mean_parts(ctx, state, g, r);
        let y = dm.log_y(r) - xi - ga;
        add_outer_upper(&mut xtx, d, 1.0);
        axpy(&mut xty, d, y);
    }
    symmetrize_from_upper(&mut xtx);
    GaussianConditional {
        precision: xtx * inv_s2 + &resolved.precision,
        linear: xty * inv_s2 + &resolved.precision_mean,
    }
}

/// Error variance: `IG(a + N_y/2, b + RSS/2)`.
pub fn outcome_error_variance_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
) -> InvGammaParams {
    let pr = prior(ctx, g).error;
    let res = outcome_residuals(ctx, state, views, g);
    let rss: f64 = res.iter().map(|e| e * e).sum();
    InvGammaParams {
        shape: pr.shape + res.len() as f64 / 2.0,
        rate: pr.rate + rss / 2.0,
    }
}

/// Cluster effects: per cluster, precision `1/σ²_C + n_i/σ²` and linear term
/// `Σ (y - Dθ - γ) / σ²` over the cluster's stratum-`g` survivors.
pub fn outcome_cluster_effects_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
) -> DiagonalGaussian {
    let dm = ctx.dm;
    let inv_s2 = 1.0 / error_variance(state, g);
    let inv_c = 1.0
        / match g {
            OutcomeStratum::Always => state.variances.sigma2_c_always,
            OutcomeStratum::Protected => state.variances.sigma2_c_protected,
        };
    let mut precision = vec![inv_c; dm.n_clusters()];
    let mut linear = vec![0.0; dm.n_clusters()];
    for &r in rows(views, g) {
        let (f, _, ga) = mean_parts(ctx, state, g, r);
        let c = dm.cluster(r);
        precision[c] += inv_s2;
        linear[c] += (dm.log_y(r) - f - ga) * inv_s2;
    }
    DiagonalGaussian { precision, linear }
}

/// Cluster variance: `IG(a₁ + I/2, b₁ + ξᵀξ/2)`.
pub fn outcome_cluster_variance_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    g: OutcomeStratum,
) -> InvGammaParams {
    let pr = prior(ctx, g).cluster;
    let xi = match g {
        OutcomeStratum::Always => &state.xi_always,
        OutcomeStratum::Protected => &state.xi_protected,
    };
    InvGammaParams {
        shape: pr.shape + xi.len() as f64 / 2.0,
        rate: pr.rate + dot(xi, xi) / 2.0,
    }
}

/// Cluster-period effects. The `(1,1)` vector spans every observed
/// cluster-period; the `(1,0)` vector spans treated cluster-periods only.
pub fn outcome_cp_effects_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
) -> DiagonalGaussian {
    let dm = ctx.dm;
    let inv_s2 = 1.0 / error_variance(state, g);
    let (len, inv_cp) = match g {
        OutcomeStratum::Always => (dm.n_cp(), 1.0 / state.variances.sigma2_cp_always),
        OutcomeStratum::Protected => (dm.n_treated_cp(), 1.0 / state.variances.sigma2_cp_protected),
    };
    let mut precision = vec![inv_cp; len];
    let mut linear = vec![0.0; len];
    for &r in rows(views, g) {
        let (f, xi, _) = mean_parts(ctx, state, g, r);
        let idx = match g {
            OutcomeStratum::Always => dm.cp(r),
            OutcomeStratum::Protected => dm.treated_cp(r).expect("protected survivors are treated"),
        };
        precision[idx] += inv_s2;
        linear[idx] += (dm.log_y(r) - f - xi) * inv_s2;
    }
    DiagonalGaussian { precision, linear }
}

/// Cluster-period variance: `IG(a₂ + len(γ)/2, b₂ + γᵀγ/2)`.
pub fn outcome_cp_variance_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    g: OutcomeStratum,
) -> InvGammaParams {
    let pr = prior(ctx, g).cluster_period;
    let gamma = match g {
        OutcomeStratum::Always => &state.gamma_always,
        OutcomeStratum::Protected => &state.gamma_protected,
    };
    InvGammaParams {
        shape: pr.shape + gamma.len() as f64 / 2.0,
        rate: pr.rate + dot(gamma, gamma) / 2.0,
    }
}

pub fn update_outcome_coefficients<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let draw = outcome_coefficients_conditional(ctx, state, views, g).sample(rng)?;
    let target = match g {
        OutcomeStratum::Always => &mut state.theta_always,
        OutcomeStratum::Protected => &mut state.theta_protected,
    };
    target.copy_from_slice(draw.as_slice());
    Ok(())
}

pub fn update_outcome_error_variance<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let v = outcome_error_variance_conditional(ctx, state, views, g).sample(rng)?;
    match g {
        OutcomeStratum::Always => state.variances.sigma2_always = v,
        OutcomeStratum::Protected => state.variances.sigma2_protected = v,
    }
    Ok(())
}

pub fn update_outcome_cluster_effects<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let cond = outcome_cluster_effects_conditional(ctx, state, views, g);
    let target = match g {
        OutcomeStratum::Always => &mut state.xi_always,
        OutcomeStratum::Protected => &mut state.xi_protected,
    };
    cond.sample_into(target, rng);
    Ok(())
}

pub fn update_outcome_cluster_variance<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let v = outcome_cluster_variance_conditional(ctx, state, g).sample(rng)?;
    match g {
        OutcomeStratum::Always => state.variances.sigma2_c_always = v,
        OutcomeStratum::Protected => state.variances.sigma2_c_protected = v,
    }
    Ok(())
}

pub fn update_outcome_cp_effects<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    views: &StratumViews,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let cond = outcome_cp_effects_conditional(ctx, state, views, g);
    let target = match g {
        OutcomeStratum::Always => &mut state.gamma_always,
        OutcomeStratum::Protected => &mut state.gamma_protected,
    };
    cond.sample_into(target, rng);
    Ok(())
}

pub fn update_outcome_cp_variance<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    g: OutcomeStratum,
    rng: &mut R,
) -> Result<()> {
    let v = outcome_cp_variance_conditional(ctx, state, g).sample(rng)?;
    match g {
        OutcomeStratum::Always => state.variances.sigma2_cp_always = v,
        OutcomeStratum::Protected => state.variances.sigma2_cp_protected = v,
    }
    Ok(())
}
