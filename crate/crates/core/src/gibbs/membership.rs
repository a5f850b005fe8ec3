use rand::Rng;

use super::outcome::mean_parts;
use super::strata::strata_predictors;
use super::{GibbsContext, OutcomeStratum};
use crate::error::{Result, SaceError};
use crate::math::{expit, log_normal_pdf};
use crate::model::{admissible_labels, ParameterState, StratumLabel};
use crate::rand_dist::bernoulli;

const P_MIN: f64 = 1e-300;
const P_MAX: f64 = 1.0 - 1e-16;

/// Conditional law of one individual's stratum label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipProbability {
    Forced(StratumLabel),
    /// `first` with probability `p_first`, else `second`.
    Bernoulli {
        first: StratumLabel,
        second: StratumLabel,
        p_first: f64,
    },
}

/// Label probabilities for every individual given all other parameters.
///
/// Treated survivors are `(1,1)` with probability
/// `f11(y) e^z / (f11(y) e^z + f10(y) e^w)`; untreated deaths are `(1,0)` with
/// probability `expit(w)`. Probabilities are clamped to `[1e-300, 1 - 1e-16]`.
pub fn membership_probabilities(
    ctx: &GibbsContext<'_>,
    state: &ParameterState,
) -> Result<Vec<MembershipProbability>> {
    let dm = ctx.dm;
    let (z, w) = strata_predictors(ctx, state);
    let s11 = state.variances.sigma2_always;
    let s10 = state.variances.sigma2_protected;
    (0..dm.n())
        .map(|r| {
            let (first, second) = admissible_labels(dm.treatment(r), dm.survived(r));
            let Some(second) = second else {
                return Ok(MembershipProbability::Forced(first));
            };
            let p_first = if dm.survived(r) {
                let y = dm.log_y(r);
                let (f, xi, ga) = mean_parts(ctx, state, OutcomeStratum::Always, r);
                let l11 = log_normal_pdf(y, f + xi + ga, s11) + z[r];
                let (f, xi, ga) = mean_parts(ctx, state, OutcomeStratum::Protected, r);
                let l10 = log_normal_pdf(y, f + xi + ga, s10) + w[r];
                if !(l11.is_finite() && l10.is_finite()) {
                    return Err(SaceError::NonFiniteDensity { index: r });
                }
                expit(l11 - l10)
            } else {
                if !w[r].is_finite() {
                    return Err(SaceError::NonFiniteDensity { index: r });
                }
                expit(w[r])
            };
            Ok(MembershipProbability::Bernoulli {
                first,
                second,
                p_first: p_first.clamp(P_MIN, P_MAX),
            })
        })
        .collect()
}

pub fn update_strata_membership<R: Rng + ?Sized>(
    ctx: &GibbsContext<'_>,
    state: &mut ParameterState,
    rng: &mut R,
) -> Result<()> {
    let probs = membership_probabilities(ctx, state)?;
    for (label, p) in state.labels.iter_mut().zip(probs) {
        *label = match p {
            MembershipProbability::Forced(l) => l,
            MembershipProbability::Bernoulli {
                first,
                second,
                p_first,
            } => {
                if bernoulli(p_first, rng) {
                    first
                } else {
                    second
                }
            }
        };
    }
    Ok(())
}
