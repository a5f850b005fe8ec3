//! Conditionals of the multinomial-logit strata model under Pólya-Gamma augmentation.
//!
//! For component `Z` the working likelihood of individual `r` is logistic in
//! `z_r - log(1 + exp(w_r))` with success indicator `1{G_r = (1,1)}`; `W` is
//! symmetric with `1{G_r = (1,0)}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{
    add_outer_upper, axpy, dot, symmetrize_from_upper, DiagonalGaussian, GaussianConditional,
    GibbsContext, InvGammaParams, StrataComponent,
};
use crate::error::Result;
use crate::math::log1pexp;
use crate::model::{ParameterState, StrataPrior, StratumLabel};
use crate::rand_dist::sample_pg1;

struct View<'s> {
    theta: &'s [f64],
    eta: &'s [f64],
    nu: &'s [f64],
    omega: &'s [f64],
    tau2_c: f64,
    tau2_cp: f64,
    target: StratumLabel,
}

fn view(state: &ParameterState, comp: StrataComponent) -> View<'_> {
    match comp {
        StrataComponent::Z => View {
            theta: &state.theta_z,
            eta: &state.eta_z,
            nu: &state.nu_z,
            omega: &state.omega_z,
            tau2_c: state.variances.tau2_c_z,
            tau2_cp: state.variances.tau2_cp_z,
            target: StratumLabel::AlwaysSurvivor,
        },
        StrataComponent::W => View {
            theta: &state.theta_w,
            eta: &state.eta_w,
            nu: &state.nu_w,
            omega: &state.omega_w,
            tau2_c: state.variances.tau2_c_w,
            tau2_cp: state.variances.tau2_cp_w,
            target: StratumLabel::Protected,
        },
    }
}

fn other(comp: StrataComponent) -> StrataComponent {
    match comp {
        StrataComponent::Z => StrataComponent::W,
        StrataComponent::W => StrataComponent::Z,
    }
}

fn prior<'c>(ctx: &'c GibbsContext<'_>, comp: StrataComponent) -> &'c StrataPrior {
    match comp {
        StrataComponent::Z => &ctx.config.priors.z,
        StrataComponent::W => &ctx.config.priors.w,
    }
}

/// Linear predictor of one component for every individual.
pub(crate) fn predictor(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> Vec<f64> {
    let dm = ctx.dm;
    let v = view(state, comp);
    (0..dm.n())
        .map(|r| dot(dm.ps_row(r), v.theta) + v.eta[dm.cluster(r)] + v.nu[dm.cp(r)])
        .collect()
}

/// `(z, w)` for every individual.
pub fn strata_predictors(ctx: &GibbsContext<'_>, state: &ParameterState) -> (Vec<f64>, Vec<f64>) {
    (
        predictor(ctx, state, StrataComponent::Z),
        predictor(ctx, state, StrataComponent::W),
    )
}

/// Pólya-Gamma tilts: `z - log(1 + e^w)` for `Z`, `w - log(1 + e^z)` for `W`.
pub fn pg_tilts(ctx: &GibbsContext<'_>, state: &ParameterState, comp: StrataComponent) -> Vec<f64> {
    let own = predictor(ctx, state, comp);
    let oth = predictor(ctx, state, other(comp));
    own.iter()
        .zip(&oth)
        .map(|(a, b)| a - log1pexp(*b))
        .collect()
}

/// Draws the latent `ω` of one component for every individual.
pub fn update_pg_latents<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let work = StrataWork::new(ctx, state, comp);
    update_pg_latents_with(ctx, state, comp, &work, rng)
}

pub(crate) fn update_pg_latents_with<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
    rng: &mut R,
) -> Result<()> {
    let own = predictor(ctx, state, comp);
    let omega = match comp {
        StrataComponent::Z => &mut state.omega_z,
        StrataComponent::W => &mut state.omega_w,
    };
    for ((o, e), p) in omega.iter_mut().zip(&own).zip(&work.pseudo) {
        *o = sample_pg1(e - p, rng)?;
    }
    Ok(())
}

/// Per-individual pieces shared by the strata conditionals of one component:
/// `log(1 + e^other)` and `u - 1/2`. Constant while only this component's
/// parameters and latents change.
#[derive(Debug, Clone, Default)]
pub struct StrataWork {
    comp: Option<StrataComponent>,
    pseudo: Vec<f64>,
    kappa: Vec<f64>,
}

impl StrataWork {
    pub fn new(ctx: &GibbsContext<'_>, state: &ParameterState, comp: StrataComponent) -> Self {
        let mut w = StrataWork::default();
        w.refresh(ctx, state, comp);
        w
    }

    /// Recomputes the pieces for `comp` at the current state.
    pub fn refresh(
        &mut self,
        ctx: &GibbsContext<'_>,
        state: &ParameterState,
        comp: StrataComponent,
    ) {
        let dm = ctx.dm;
        let o = view(state, other(comp));
        let target = view(state, comp).target;
        self.pseudo.clear();
        self.pseudo.extend(
            (0..dm.n()).map(|r| {
                log1pexp(dot(dm.ps_row(r), o.theta) + o.eta[dm.cluster(r)] + o.nu[dm.cp(r)])
            }),
        );
        self.kappa.clear();
        self.kappa.extend(
            state
                .labels
                .iter()
                .map(|l| if *l == target { 0.5 } else { -0.5 }),
        );
        self.comp = Some(comp);
    }

    pub fn component(&self) -> Option<StrataComponent> {
        self.comp
    }

    pub fn invalidate(&mut self) {
        self.comp = None;
    }
}

/// Coefficients: precision `DᵀΩD + Σ⁻¹`, linear term
/// `DᵀΩ(log(1 + e^other) - Pη - Lν) + Dᵀ(u - 1/2) + Σ⁻¹μ`.
pub fn strata_coefficients_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> GaussianConditional {
    strata_coefficients_conditional_with(ctx, state, comp, &StrataWork::new(ctx, state, comp))
}

pub(crate) fn strata_coefficients_conditional_with(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
) -> GaussianConditional {
    let dm = ctx.dm;
    let v = view(state, comp);
    let resolved = match comp {
        StrataComponent::Z => &ctx.prior_z,
        StrataComponent::W => &ctx.prior_w,
    };
    let (pseudo, kappa) = (&work.pseudo, &work.kappa);
    let k = dm.k_ps();
    let mut q = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for r in 0..dm.n() {
        let d = dm.ps_row(r);
        let om = v.omega[r];
        add_outer_upper(&mut q, d, om);
        let t = om * (pseudo[r] - v.eta[dm.cluster(r)] - v.nu[dm.cp(r)]) + kappa[r];
        axpy(&mut b, d, t);
    }
    symmetrize_from_upper(&mut q);
    GaussianConditional {
        precision: q + &resolved.precision,
        linear: b + &resolved.precision_mean,
    }
}

/// Cluster effects: per cluster, precision `Σω + 1/τ²_C`, linear term
/// `Σ[ω(log(1 + e^other) - Dθ - Lν) + (u - 1/2)]`.
pub fn strata_cluster_effects_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> DiagonalGaussian {
    strata_cluster_effects_conditional_with(ctx, state, comp, &StrataWork::new(ctx, state, comp))
}

pub(crate) fn strata_cluster_effects_conditional_with(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
) -> DiagonalGaussian {
    let dm = ctx.dm;
    let v = view(state, comp);
    let (pseudo, kappa) = (&work.pseudo, &work.kappa);
    let mut precision = vec![1.0 / v.tau2_c; dm.n_clusters()];
    let mut linear = vec![0.0; dm.n_clusters()];
    for r in 0..dm.n() {
        let c = dm.cluster(r);
        let om = v.omega[r];
        precision[c] += om;
        linear[c] += om * (pseudo[r] - dot(dm.ps_row(r), v.theta) - v.nu[dm.cp(r)]) + kappa[r];
    }
    DiagonalGaussian { precision, linear }
}

/// Cluster-period effects over observed cluster-periods: precision
/// `Σω + 1/τ²_CP`, linear term `Σ[ω(log(1 + e^other) - Dθ - Pη) + (u - 1/2)]`.
pub fn strata_cp_effects_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> DiagonalGaussian {
    strata_cp_effects_conditional_with(ctx, state, comp, &StrataWork::new(ctx, state, comp))
}

pub(crate) fn strata_cp_effects_conditional_with(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
) -> DiagonalGaussian {
    let dm = ctx.dm;
    let v = view(state, comp);
    let (pseudo, kappa) = (&work.pseudo, &work.kappa);
    let mut precision = vec![1.0 / v.tau2_cp; dm.n_cp()];
    let mut linear = vec![0.0; dm.n_cp()];
    for r in 0..dm.n() {
        let j = dm.cp(r);
        let om = v.omega[r];
        precision[j] += om;
        linear[j] +=
            om * (pseudo[r] - dot(dm.ps_row(r), v.theta) - v.eta[dm.cluster(r)]) + kappa[r];
    }
    DiagonalGaussian { precision, linear }
}

/// `IG(k₁ + I/2, l₁ + ηᵀη/2)`.
pub fn strata_cluster_variance_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> InvGammaParams {
    let pr = prior(ctx, comp).cluster;
    let eta = view(state, comp).eta;
    InvGammaParams {
        shape: pr.shape + eta.len() as f64 / 2.0,
        rate: pr.rate + dot(eta, eta) / 2.0,
    }
}

/// `IG(k₂ + n_cp/2, l₂ + νᵀν/2)`.
pub fn strata_cp_variance_conditional(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
    comp: StrataComponent,
) -> InvGammaParams {
    let pr = prior(ctx, comp).cluster_period;
    let nu = view(state, comp).nu;
    InvGammaParams {
        shape: pr.shape + nu.len() as f64 / 2.0,
        rate: pr.rate + dot(nu, nu) / 2.0,
    }
}

pub fn update_strata_coefficients<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let work = StrataWork::new(ctx, state, comp);
    update_strata_coefficients_with(ctx, state, comp, &work, rng)
}

pub(crate) fn update_strata_coefficients_with<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
    rng: &mut R,
) -> Result<()> {
    let draw = strata_coefficients_conditional_with(ctx, state, comp, work).sample(rng)?;
    let target = match comp {
        StrataComponent::Z => &mut state.theta_z,
        StrataComponent::W => &mut state.theta_w,
    };
    target.copy_from_slice(draw.as_slice());
    Ok(())
}

pub fn update_strata_cluster_effects<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let work = StrataWork::new(ctx, state, comp);
    update_strata_cluster_effects_with(ctx, state, comp, &work, rng)
}

pub(crate) fn update_strata_cluster_effects_with<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
    rng: &mut R,
) -> Result<()> {
    let cond = strata_cluster_effects_conditional_with(ctx, state, comp, work);
    let target = match comp {
        StrataComponent::Z => &mut state.eta_z,
        StrataComponent::W => &mut state.eta_w,
    };
    cond.sample_into(target, rng);
    Ok(())
}

pub fn update_strata_cluster_variance<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let v = strata_cluster_variance_conditional(ctx, state, comp).sample(rng)?;
    match comp {
        StrataComponent::Z => state.variances.tau2_c_z = v,
        StrataComponent::W => state.variances.tau2_c_w = v,
    }
    Ok(())
}

pub fn update_strata_cp_effects<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let work = StrataWork::new(ctx, state, comp);
    update_strata_cp_effects_with(ctx, state, comp, &work, rng)
}

pub(crate) fn update_strata_cp_effects_with<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    work: &StrataWork,
    rng: &mut R,
) -> Result<()> {
    let cond = strata_cp_effects_conditional_with(ctx, state, comp, work);
    let target = match comp {
        StrataComponent::Z => &mut state.nu_z,
        StrataComponent::W => &mut state.nu_w,
    };
    cond.sample_into(target, rng);
    Ok(())
}

pub fn update_strata_cp_variance<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    comp: StrataComponent,
    rng: &mut R,
) -> Result<()> {
    let v = strata_cp_variance_conditional(ctx, state, comp).sample(rng)?;
    match comp {
        StrataComponent::Z => state.variances.tau2_cp_z = v,
        StrataComponent::W => state.variances.tau2_cp_w = v,
    }
    Ok(())
}
