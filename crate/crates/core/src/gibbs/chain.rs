use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use super::membership::update_strata_membership;
use super::outcome::*;
use super::strata::*;
use super::{init_state, GibbsContext, OutcomeStratum, StrataComponent};
use crate::design::{stratum_views_into, DesignMatrices, StratumViews};
use crate::error::{Result, SaceError};
use crate::estimands::{sace_ldiff, sace_rom, strata_proportions};
use crate::model::{
    DrawRecord, ModelConfig, ParameterState, PosteriorDraws, TrialData, VarianceComponents,
};
use crate::rand_dist::RngStream;

/// One conditional update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStep {
    OutcomeCoefficients(OutcomeStratum),
    /// Record the SACE contrasts at the current state.
    Contrasts,
    OutcomeErrorVariance(OutcomeStratum),
    OutcomeClusterEffects(OutcomeStratum),
    OutcomeClusterVariance(OutcomeStratum),
    OutcomeCpEffects(OutcomeStratum),
    OutcomeCpVariance(OutcomeStratum),
    PgLatents(StrataComponent),
    StrataCoefficients(StrataComponent),
    StrataClusterEffects(StrataComponent),
    StrataClusterVariance(StrataComponent),
    StrataCpEffects(StrataComponent),
    StrataCpVariance(StrataComponent),
    Membership,
}

impl UpdateStep {
    /// Strata component whose working response the step reads, if any.
    pub fn strata_component(&self) -> Option<StrataComponent> {
        use UpdateStep::*;
        match *self {
            PgLatents(c) | StrataCoefficients(c) | StrataClusterEffects(c) | StrataCpEffects(c) => {
                Some(c)
            }
            _ => None,
        }
    }
}

/// Ordered updates of one sweep, with disabled random effects filtered out.
///
/// Each strata component is updated as a block right after its own
/// Pólya-Gamma latents are refreshed, so the tilt that defines `ω_w`
/// already reflects the new `z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPlan {
    pub steps: Vec<UpdateStep>,
}

impl SweepPlan {
    pub fn new(config: &ModelConfig) -> Self {
        use OutcomeStratum::*;
        use UpdateStep::*;
        let mut steps = vec![
            OutcomeCoefficients(Always),
            Contrasts,
            OutcomeErrorVariance(Always),
            OutcomeCoefficients(Protected),
            OutcomeErrorVariance(Protected),
        ];
        for g in [Always, Protected] {
            steps.push(OutcomeClusterEffects(g));
            steps.push(OutcomeClusterVariance(g));
        }
        if config.outcome_clusterperiod_re {
            for g in [Always, Protected] {
                steps.push(OutcomeCpEffects(g));
                steps.push(OutcomeCpVariance(g));
            }
        }
        for comp in [StrataComponent::Z, StrataComponent::W] {
            steps.push(PgLatents(comp));
            steps.push(StrataCoefficients(comp));
            if config.ps_cluster_re {
                steps.push(StrataClusterEffects(comp));
                steps.push(StrataClusterVariance(comp));
            }
            if config.ps_clusterperiod_re {
                steps.push(StrataCpEffects(comp));
                steps.push(StrataCpVariance(comp));
            }
        }
        steps.push(Membership);
        SweepPlan { steps }
    }
}

/// Contrasts recorded during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepContrasts {
    pub mu_ldiff: Option<f64>,
    pub mu_rom: Option<f64>,
}

/// Executes one sweep. `views` must match `state.labels` on entry and is
/// refreshed after the membership update.
pub fn sweep<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    plan: &SweepPlan,
    state: &mut ParameterState,
    views: &mut StratumViews,
    rng: &mut R,
) -> Result<SweepContrasts> {
    use UpdateStep::*;
    let mut out = SweepContrasts::default();
    let mut work = StrataWork::default();
    for step in &plan.steps {
        if let Some(c) = step.strata_component() {
            if work.component() != Some(c) {
                work.refresh(ctx, state, c);
            }
        }
        match *step {
            OutcomeCoefficients(g) => update_outcome_coefficients(ctx, state, views, g, rng)?,
            Contrasts => {
                out.mu_ldiff = sace_ldiff(state, ctx.dm);
                out.mu_rom = sace_rom(state, ctx.dm);
            }
            OutcomeErrorVariance(g) => update_outcome_error_variance(ctx, state, views, g, rng)?,
            OutcomeClusterEffects(g) => update_outcome_cluster_effects(ctx, state, views, g, rng)?,
            OutcomeClusterVariance(g) => update_outcome_cluster_variance(ctx, state, g, rng)?,
            OutcomeCpEffects(g) => update_outcome_cp_effects(ctx, state, views, g, rng)?,
            OutcomeCpVariance(g) => update_outcome_cp_variance(ctx, state, g, rng)?,
            PgLatents(c) => update_pg_latents_with(ctx, state, c, &work, rng)?,
            StrataCoefficients(c) => update_strata_coefficients_with(ctx, state, c, &work, rng)?,
            StrataClusterEffects(c) => {
                update_strata_cluster_effects_with(ctx, state, c, &work, rng)?
            }
            StrataClusterVariance(c) => update_strata_cluster_variance(ctx, state, c, rng)?,
            StrataCpEffects(c) => update_strata_cp_effects_with(ctx, state, c, &work, rng)?,
            StrataCpVariance(c) => update_strata_cp_variance(ctx, state, c, rng)?,
            Membership => {
                work.invalidate();
                update_strata_membership(ctx, state, rng)?;
                stratum_views_into(ctx.dm, &state.labels, views);
            }
        }
    }
    Ok(out)
}

/// Retained draws of one successful chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain_id: usize,
    pub draws: PosteriorDraws,
    /// Retained draws with no labelled always-survivor.
    pub missing_contrasts: usize,
    pub final_state: ParameterState,
}

/// Structured report of an aborted chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFailure {
    pub chain_id: usize,
    /// Sweep at which the chain stopped; 0 means initialization.
    pub iteration: usize,
    pub error: SaceError,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chain {} failed at iteration {}: {}",
            self.chain_id, self.iteration, self.error
        )
    }
}

impl std::error::Error for ChainFailure {}

/// Runs `config.iterations` sweeps from a fresh initial state and keeps every
/// `thinning`-th post-burn-in sweep.
pub fn run_chain<R: Rng + ?Sized>(
    data: &TrialData,
    dm: &DesignMatrices,
    config: &ModelConfig,
    chain_id: usize,
    rng: &mut R,
) -> std::result::Result<ChainOutput, ChainFailure> {
    let fail = |iteration, error| ChainFailure {
        chain_id,
        iteration,
        error,
    };
    let ctx = GibbsContext::new(dm, config).map_err(|e| fail(0, e))?;
    let mut state = init_state(data, dm, config, rng).map_err(|e| fail(0, e))?;
    let plan = SweepPlan::new(config);
    let mut views = StratumViews::default();
    stratum_views_into(dm, &state.labels, &mut views);
    let mask = VarianceComponents::active_mask(config);

    let mut records = Vec::with_capacity(config.retained_per_chain());
    let mut missing = 0;
    for t in 1..=config.iterations {
        let contrasts = sweep(&ctx, &plan, &mut state, &mut views, rng).map_err(|e| fail(t, e))?;
        if t <= config.burn_in || !(t - config.burn_in).is_multiple_of(config.thinning) {
            continue;
        }
        if contrasts.mu_ldiff.is_none() {
            missing += 1;
        }
        let values = state.variances.to_array();
        records.push(DrawRecord {
            chain_id,
            iteration: t,
            mu_ldiff: contrasts.mu_ldiff,
            mu_rom: contrasts.mu_rom,
            strata_proportions: strata_proportions(&state.labels),
            variances: std::array::from_fn(|k| mask[k].then_some(values[k])),
            theta_always: config.keep_coefficients.then(|| state.theta_always.clone()),
            theta_protected: config
                .keep_coefficients
                .then(|| state.theta_protected.clone()),
        });
    }
    Ok(ChainOutput {
        chain_id,
        draws: PosteriorDraws { records },
        missing_contrasts: missing,
        final_state: state,
    })
}

/// Stream id of `chain` within a run; `base` separates replicates of a study.
pub fn chain_stream_id(base: u64, chain: usize) -> u64 {
    base | (1 + chain as u64)
}

/// Runs `config.n_chains` chains in parallel, chain `c` on stream
/// `chain_stream_id(stream_base, c)` of `config.seed`. Results come back in
/// chain order regardless of scheduling.
pub fn run_chains(
    data: &TrialData,
    dm: &DesignMatrices,
    config: &ModelConfig,
    stream_base: u64,
) -> Vec<std::result::Result<ChainOutput, ChainFailure>> {
    (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(config.seed, chain_stream_id(stream_base, c));
            run_chain(data, dm, config, c, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelVariant;

    #[test]
    fn plan_filters_disabled_updates() {
        let m3 = SweepPlan::new(&ModelConfig::for_variant(ModelVariant::M3));
        assert!(!m3
            .steps
            .iter()
            .any(|s| matches!(s, UpdateStep::OutcomeCpEffects(_))));
        assert!(m3
            .steps
            .iter()
            .any(|s| matches!(s, UpdateStep::StrataClusterEffects(_))));
        let m2 = SweepPlan::new(&ModelConfig::for_variant(ModelVariant::M2));
        assert!(!m2
            .steps
            .iter()
            .any(|s| matches!(s, UpdateStep::StrataClusterEffects(_))));
        assert!(!m2
            .steps
            .iter()
            .any(|s| matches!(s, UpdateStep::StrataCpEffects(_))));
        let a = SweepPlan::new(&ModelConfig::for_variant(ModelVariant::A));
        assert_eq!(
            a.steps
                .iter()
                .filter(|s| matches!(s, UpdateStep::StrataCpVariance(_)))
                .count(),
            2
        );
    }

    #[test]
    fn plan_order_invariants() {
        let plan = SweepPlan::new(&ModelConfig::for_variant(ModelVariant::A));
        let pos = |s: UpdateStep| plan.steps.iter().position(|x| *x == s).unwrap();
        for c in [StrataComponent::Z, StrataComponent::W] {
            assert!(pos(UpdateStep::PgLatents(c)) < pos(UpdateStep::StrataCoefficients(c)));
        }
        assert_eq!(
            pos(UpdateStep::Contrasts),
            pos(UpdateStep::OutcomeCoefficients(OutcomeStratum::Always)) + 1
        );
        assert_eq!(*plan.steps.last().unwrap(), UpdateStep::Membership);
    }
}
