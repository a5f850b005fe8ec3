//! Domain types shared by every stage of the pipeline: trial records, principal
//! strata, priors, model configuration and the mutable Gibbs state.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaceError};

/// One individual enrolled in a cluster-period.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Cluster identifier, `1..=n_clusters`.
    pub cluster_id: usize,
    /// Period identifier, `1..=n_periods`.
    pub period: usize,
    pub treatment: bool,
    pub survived: bool,
    /// Non-mortality outcome on its natural (positive) scale; present iff `survived`.
    pub outcome: Option<f64>,
    pub covariates: Vec<f64>,
}

impl Individual {
    /// The modelled response, `log(outcome)`.
    pub fn log_outcome(&self) -> Option<f64> {
        self.outcome.map(f64::ln)
    }
}

/// Per-individual records of one cross-sectional cluster-randomized crossover trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub individuals: Vec<Individual>,
    pub n_clusters: usize,
    pub n_periods: usize,
    pub covariate_names: Vec<String>,
}

/// A broken [`TrialData`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending record, when the rule is record-level.
    pub record: Option<usize>,
    pub rule: ViolationRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationRule {
    ClusterOutOfRange,
    PeriodOutOfRange,
    OutcomeForNonSurvivor,
    MissingOutcomeForSurvivor,
    NonPositiveOutcome,
    CovariateLength,
    NonFiniteCovariate,
    TreatmentVariesWithinClusterPeriod,
    NonAlternatingSequence,
    EmptyCluster,
    Empty,
}

impl fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            ViolationRule::ClusterOutOfRange => "cluster id out of range",
            ViolationRule::PeriodOutOfRange => "period out of range",
            ViolationRule::OutcomeForNonSurvivor => "outcome present for non-survivor",
            ViolationRule::MissingOutcomeForSurvivor => "outcome missing for survivor",
            ViolationRule::NonPositiveOutcome => "outcome not strictly positive and finite",
            ViolationRule::CovariateLength => "covariate vector length mismatch",
            ViolationRule::NonFiniteCovariate => "non-finite covariate",
            ViolationRule::TreatmentVariesWithinClusterPeriod => {
                "treatment varies within cluster-period"
            }
            ViolationRule::NonAlternatingSequence => "non-alternating sequence",
            ViolationRule::EmptyCluster => "cluster has no records",
            ViolationRule::Empty => "no records",
        };
        f.write_str(msg)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(r) => write!(f, "record {r}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

impl TrialData {
    pub fn n_individuals(&self) -> usize {
        self.individuals.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Checks every record- and cluster-level invariant. An empty list means
    /// the data is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.individuals.is_empty() {
            out.push(Violation {
                record: None,
                rule: ViolationRule::Empty,
            });
            return out;
        }
        let p = self.covariate_names.len();
        // (cluster, period) -> (first record, treatment)
        let mut cell_treatment: BTreeMap<(usize, usize), (usize, bool)> = BTreeMap::new();

        for (idx, ind) in self.individuals.iter().enumerate() {
            let mut push = |rule| {
                out.push(Violation {
                    record: Some(idx),
                    rule,
                })
            };
            let cluster_ok = (1..=self.n_clusters).contains(&ind.cluster_id);
            let period_ok = (1..=self.n_periods).contains(&ind.period);
            if !cluster_ok {
                push(ViolationRule::ClusterOutOfRange);
            }
            if !period_ok {
                push(ViolationRule::PeriodOutOfRange);
            }
            match (ind.survived, ind.outcome) {
                (false, Some(_)) => push(ViolationRule::OutcomeForNonSurvivor),
                (true, None) => push(ViolationRule::MissingOutcomeForSurvivor),
                (true, Some(y)) if !(y.is_finite() && y > 0.0) => {
                    push(ViolationRule::NonPositiveOutcome)
                }
                _ => {}
            }
            if ind.covariates.len() != p {
                push(ViolationRule::CovariateLength);
            } else if ind.covariates.iter().any(|x| !x.is_finite()) {
                push(ViolationRule::NonFiniteCovariate);
            }
            if cluster_ok && period_ok {
                match cell_treatment.get(&(ind.cluster_id, ind.period)) {
                    Some(&(_, a)) if a != ind.treatment => {
                        push(ViolationRule::TreatmentVariesWithinClusterPeriod)
                    }
                    Some(_) => {}
                    None => {
                        cell_treatment.insert((ind.cluster_id, ind.period), (idx, ind.treatment));
                    }
                }
            }
        }

        for cluster in 1..=self.n_clusters {
            let cells: Vec<(usize, usize, bool)> = cell_treatment
                .range((cluster, 0)..=(cluster, usize::MAX))
                .map(|(&(_, period), &(rec, a))| (period, rec, a))
                .collect();
            if cells.is_empty() {
                out.push(Violation {
                    record: None,
                    rule: ViolationRule::EmptyCluster,
                });
                continue;
            }
            for pair in cells.windows(2) {
                let (j0, _, a0) = pair[0];
                let (j1, rec1, a1) = pair[1];
                let should_switch = (j1 - j0) % 2 == 1;
                if (a0 != a1) != should_switch {
                    out.push(Violation {
                        record: Some(rec1),
                        rule: ViolationRule::NonAlternatingSequence,
                    });
                }
            }
        }
        out
    }

    /// Validates and converts the first violation into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(v) => Err(SaceError::InvalidData(v.to_string())),
        }
    }
}

/// Principal stratum: the pair of potential survival statuses `(S(1), S(0))`.
///
/// The harmed stratum `(0, 1)` has no variant: survival monotonicity is
/// encoded in the type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StratumLabel {
    /// `(1, 1)`
    AlwaysSurvivor,
    /// `(1, 0)`
    Protected,
    /// `(0, 0)`
    NeverSurvivor,
}

impl StratumLabel {
    pub const ALL: [StratumLabel; 3] = [
        StratumLabel::NeverSurvivor,
        StratumLabel::Protected,
        StratumLabel::AlwaysSurvivor,
    ];

    /// `(S(1), S(0))`
    pub fn survival_pair(self) -> (bool, bool) {
        match self {
            StratumLabel::AlwaysSurvivor => (true, true),
            StratumLabel::Protected => (true, false),
            StratumLabel::NeverSurvivor => (false, false),
        }
    }

    /// Survival status this stratum implies under treatment `a`.
    pub fn survives_under(self, treatment: bool) -> bool {
        let (s1, s0) = self.survival_pair();
        if treatment {
            s1
        } else {
            s0
        }
    }

    /// Whether this label could have produced the observed `(treatment, survived)` cell.
    pub fn is_consistent(self, treatment: bool, survived: bool) -> bool {
        self.survives_under(treatment) == survived
    }

    /// Index into `(pi_00, pi_10, pi_11)`.
    pub fn proportion_index(self) -> usize {
        match self {
            StratumLabel::NeverSurvivor => 0,
            StratumLabel::Protected => 1,
            StratumLabel::AlwaysSurvivor => 2,
        }
    }
}

/// The two admissible labels of an observed cell, or the single forced one.
pub fn admissible_labels(treatment: bool, survived: bool) -> (StratumLabel, Option<StratumLabel>) {
    use StratumLabel::*;
    match (treatment, survived) {
        (false, true) => (AlwaysSurvivor, None),
        (true, false) => (NeverSurvivor, None),
        (true, true) => (AlwaysSurvivor, Some(Protected)),
        (false, false) => (Protected, Some(NeverSurvivor)),
    }
}

/// Starting strata: forced labels where the observed cell identifies the
/// stratum, a fair coin between the two admissible labels elsewhere.
pub fn initial_strata<R: Rng + ?Sized>(data: &TrialData, rng: &mut R) -> Vec<StratumLabel> {
    data.individuals
        .iter()
        .map(|ind| match admissible_labels(ind.treatment, ind.survived) {
            (forced, None) => forced,
            (first, Some(second)) => {
                if rng.random::<f64>() < 0.5 {
                    first
                } else {
                    second
                }
            }
        })
        .collect()
}

/// Inverse-gamma hyperparameters in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgPrior {
    pub shape: f64,
    pub rate: f64,
}

impl IgPrior {
    pub const DIFFUSE: IgPrior = IgPrior {
        shape: 0.001,
        rate: 0.001,
    };

    fn check(&self, what: &str) -> Result<()> {
        if self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite() {
            Ok(())
        } else {
            Err(SaceError::InvalidConfig(format!(
                "{what}: inverse-gamma shape and rate must be positive"
            )))
        }
    }
}

/// Multivariate normal prior on a coefficient vector.
///
/// `Isotropic` is resolved against the design dimension at fit time, so the
/// same configuration works for any covariate set.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientPrior {
    Isotropic {
        mean: f64,
        variance: f64,
    },
    Full {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    },
}

/// A coefficient prior expanded to a concrete dimension.
#[derive(Debug, Clone)]
pub struct ResolvedCoefficientPrior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    /// `precision * mean`
    pub precision_mean: DVector<f64>,
}

impl CoefficientPrior {
    pub const DIFFUSE: CoefficientPrior = CoefficientPrior::Isotropic {
        mean: 0.0,
        variance: 1000.0,
    };

    pub fn resolve(&self, dim: usize) -> Result<ResolvedCoefficientPrior> {
        let (mean, precision) = match self {
            CoefficientPrior::Isotropic { mean, variance } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(SaceError::InvalidConfig(
                        "coefficient prior variance must be positive".into(),
                    ));
                }
                (
                    DVector::from_element(dim, *mean),
                    DMatrix::identity(dim, dim) / *variance,
                )
            }
            CoefficientPrior::Full { mean, covariance } => {
                if mean.len() != dim || covariance.nrows() != dim || covariance.ncols() != dim {
                    return Err(SaceError::DimensionMismatch(format!(
                        "coefficient prior has dimension {} but the design has {dim} columns",
                        mean.len()
                    )));
                }
                let sym = (covariance - covariance.transpose()).abs().max();
                if sym > 1e-12 * covariance.abs().max().max(1.0) {
                    return Err(SaceError::InvalidConfig(
                        "prior covariance not symmetric".into(),
                    ));
                }
                let precision = covariance
                    .clone()
                    .cholesky()
                    .ok_or_else(|| SaceError::InvalidConfig("prior covariance not SPD".into()))?
                    .inverse();
                (mean.clone(), precision)
            }
        };
        let precision_mean = &precision * &mean;
        Ok(ResolvedCoefficientPrior {
            mean,
            precision,
            precision_mean,
        })
    }
}

/// Priors for one outcome stratum, `(1,1)` or `(1,0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePrior {
    pub coefficients: CoefficientPrior,
    pub error: IgPrior,
    pub cluster: IgPrior,
    pub cluster_period: IgPrior,
}

/// Priors for one linear predictor of the strata model, `Z` or `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrataPrior {
    pub coefficients: CoefficientPrior,
    pub cluster: IgPrior,
    pub cluster_period: IgPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub always: OutcomePrior,
    pub protected: OutcomePrior,
    pub z: StrataPrior,
    pub w: StrataPrior,
}

impl Default for PriorSpec {
    /// Zero-mean normal coefficients with variance 1000, IG(0.001, 0.001) variances.
    fn default() -> Self {
        let outcome = OutcomePrior {
            coefficients: CoefficientPrior::DIFFUSE,
            error: IgPrior::DIFFUSE,
            cluster: IgPrior::DIFFUSE,
            cluster_period: IgPrior::DIFFUSE,
        };
        let strata = StrataPrior {
            coefficients: CoefficientPrior::DIFFUSE,
            cluster: IgPrior::DIFFUSE,
            cluster_period: IgPrior::DIFFUSE,
        };
        PriorSpec {
            always: outcome.clone(),
            protected: outcome,
            z: strata.clone(),
            w: strata,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, o) in [("always", &self.always), ("protected", &self.protected)] {
            o.error.check(name)?;
            o.cluster.check(name)?;
            o.cluster_period.check(name)?;
        }
        for (name, s) in [("z", &self.z), ("w", &self.w)] {
            s.cluster.check(name)?;
            s.cluster_period.check(name)?;
        }
        Ok(())
    }
}

/// Named random-effect configurations compared in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelVariant {
    /// Strata cluster REs; outcome cluster and cluster-period REs.
    M1,
    /// Model 1 without strata cluster REs.
    M2,
    /// Model 1 without outcome cluster-period REs.
    M3,
    /// Neither strata cluster REs nor outcome cluster-period REs.
    M4,
    /// Model 1 plus strata cluster-period REs.
    A,
}

impl ModelVariant {
    /// `(ps_cluster_re, ps_clusterperiod_re, outcome_clusterperiod_re)`
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            ModelVariant::M1 => (true, false, true),
            ModelVariant::M2 => (false, false, true),
            ModelVariant::M3 => (true, false, false),
            ModelVariant::M4 => (false, false, false),
            ModelVariant::A => (true, true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::M1 => "1",
            ModelVariant::M2 => "2",
            ModelVariant::M3 => "3",
            ModelVariant::M4 => "4",
            ModelVariant::A => "A",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Model {}", self.label())
    }
}

impl FromStr for ModelVariant {
    type Err = SaceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches("Model").trim() {
            "1" => Ok(ModelVariant::M1),
            "2" => Ok(ModelVariant::M2),
            "3" => Ok(ModelVariant::M3),
            "4" => Ok(ModelVariant::M4),
            "A" | "a" => Ok(ModelVariant::A),
            other => Err(SaceError::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Which random effects are sampled, the chain schedule and the priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub ps_cluster_re: bool,
    pub ps_clusterperiod_re: bool,
    pub outcome_clusterperiod_re: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub priors: PriorSpec,
    /// Also retain the outcome-model coefficient vectors with each draw.
    pub keep_coefficients: bool,
}

impl Default for ModelConfig {
    /// Model 1 with 4 chains of 10,000 iterations and 2,500 burn-in.
    fn default() -> Self {
        ModelConfig::for_variant(ModelVariant::M1)
    }
}

impl ModelConfig {
    pub fn for_variant(variant: ModelVariant) -> Self {
        let (ps_cluster_re, ps_clusterperiod_re, outcome_clusterperiod_re) = variant.toggles();
        ModelConfig {
            ps_cluster_re,
            ps_clusterperiod_re,
            outcome_clusterperiod_re,
            iterations: 10_000,
            burn_in: 2_500,
            thinning: 1,
            n_chains: 4,
            seed: 1,
            priors: PriorSpec::default(),
            keep_coefficients: false,
        }
    }

    pub fn set_variant(&mut self, variant: ModelVariant) {
        let (a, b, c) = variant.toggles();
        self.ps_cluster_re = a;
        self.ps_clusterperiod_re = b;
        self.outcome_clusterperiod_re = c;
    }

    /// The named variant matching the toggles, if any.
    pub fn variant(&self) -> Option<ModelVariant> {
        [
            ModelVariant::M1,
            ModelVariant::M2,
            ModelVariant::M3,
            ModelVariant::M4,
            ModelVariant::A,
        ]
        .into_iter()
        .find(|v| {
            v.toggles()
                == (
                    self.ps_cluster_re,
                    self.ps_clusterperiod_re,
                    self.outcome_clusterperiod_re,
                )
        })
    }

    /// Draws kept per chain after burn-in and thinning.
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SaceError::InvalidConfig(
                "iterations must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(SaceError::InvalidConfig(
                "burn_in must be smaller than iterations".into(),
            ));
        }
        if self.thinning == 0 {
            return Err(SaceError::InvalidConfig(
                "thinning must be at least 1".into(),
            ));
        }
        if self.n_chains == 0 {
            return Err(SaceError::InvalidConfig(
                "n_chains must be at least 1".into(),
            ));
        }
        self.priors.validate()
    }
}

/// Variance components of the full model. Components whose random effect is
/// switched off keep their initial value and are never updated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_always: f64,
    pub sigma2_protected: f64,
    pub sigma2_c_always: f64,
    pub sigma2_c_protected: f64,
    pub sigma2_cp_always: f64,
    pub sigma2_cp_protected: f64,
    pub tau2_c_z: f64,
    pub tau2_c_w: f64,
    pub tau2_cp_z: f64,
    pub tau2_cp_w: f64,
}

impl VarianceComponents {
    pub const NAMES: [&'static str; 10] = [
        "sigma2_always",
        "sigma2_protected",
        "sigma2_c_always",
        "sigma2_c_protected",
        "sigma2_cp_always",
        "sigma2_cp_protected",
        "tau2_c_z",
        "tau2_c_w",
        "tau2_cp_z",
        "tau2_cp_w",
    ];

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.sigma2_always,
            self.sigma2_protected,
            self.sigma2_c_always,
            self.sigma2_c_protected,
            self.sigma2_cp_always,
            self.sigma2_cp_protected,
            self.tau2_c_z,
            self.tau2_c_w,
            self.tau2_cp_z,
            self.tau2_cp_w,
        ]
    }

    /// Which entries of [`Self::to_array`] are sampled under `config`.
    pub fn active_mask(config: &ModelConfig) -> [bool; 10] {
        let cp = config.outcome_clusterperiod_re;
        let pc = config.ps_cluster_re;
        let pcp = config.ps_clusterperiod_re;
        [true, true, true, true, cp, cp, pc, pc, pcp, pcp]
    }
}

/// The complete Gibbs state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    /// `(1,1)` outcome coefficients: intercept, treatment, covariates, period
    /// dummy, treatment-by-covariate interactions.
    pub theta_always: Vec<f64>,
    /// `(1,0)` outcome coefficients: intercept, covariates, period dummy.
    pub theta_protected: Vec<f64>,
    /// Strata-model coefficients of `Z`: intercept, covariates, period dummy.
    pub theta_z: Vec<f64>,
    /// Strata-model coefficients of `W`.
    pub theta_w: Vec<f64>,
    /// Outcome cluster REs, one per cluster.
    pub xi_always: Vec<f64>,
    pub xi_protected: Vec<f64>,
    /// Outcome cluster-period REs over every observed cluster-period.
    pub gamma_always: Vec<f64>,
    /// Outcome cluster-period REs over treated cluster-periods only.
    pub gamma_protected: Vec<f64>,
    pub eta_z: Vec<f64>,
    pub eta_w: Vec<f64>,
    pub nu_z: Vec<f64>,
    pub nu_w: Vec<f64>,
    pub variances: VarianceComponents,
    pub omega_z: Vec<f64>,
    pub omega_w: Vec<f64>,
    pub labels: Vec<StratumLabel>,
}

impl ParameterState {
    pub fn count_labels(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for l in &self.labels {
            counts[l.proportion_index()] += 1;
        }
        counts
    }
}

/// One retained iteration of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub chain_id: usize,
    /// 1-based sweep number.
    pub iteration: usize,
    /// `None` when no individual was labelled always-survivor at this draw.
    pub mu_ldiff: Option<f64>,
    pub mu_rom: Option<f64>,
    /// `(pi_00, pi_10, pi_11)`
    pub strata_proportions: [f64; 3],
    /// Sampled variance components; `None` for switched-off random effects.
    pub variances: [Option<f64>; 10],
    pub theta_always: Option<Vec<f64>>,
    pub theta_protected: Option<Vec<f64>>,
}

/// Retained draws, possibly pooled over several chains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorDraws {
    pub records: Vec<DrawRecord>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: PosteriorDraws) {
        self.records.extend(other.records);
    }

    pub fn chain_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.chain_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(cluster: usize, period: usize, a: bool, s: bool, y: Option<f64>) -> Individual {
        Individual {
            cluster_id: cluster,
            period,
            treatment: a,
            survived: s,
            outcome: y,
            covariates: vec![0.5],
        }
    }

    fn toy() -> TrialData {
        TrialData {
            individuals: vec![
                rec(1, 1, true, true, Some(3.0)),
                rec(1, 2, false, false, None),
                rec(2, 1, false, true, Some(2.0)),
                rec(2, 2, true, false, None),
            ],
            n_clusters: 2,
            n_periods: 2,
            covariate_names: vec!["x".into()],
        }
    }

    #[test]
    fn well_formed_toy_has_no_violations() {
        assert!(toy().validate().is_empty());
    }

    #[test]
    fn outcome_for_non_survivor_is_flagged() {
        let mut d = toy();
        d.individuals[1].outcome = Some(1.0);
        let v = d.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].record, Some(1));
        assert_eq!(v[0].rule.to_string(), "outcome present for non-survivor");
    }

    #[test]
    fn repeated_treatment_is_non_alternating() {
        let mut d = toy();
        d.individuals[1].treatment = true;
        let v = d.validate();
        assert!(v
            .iter()
            .any(|v| v.rule == ViolationRule::NonAlternatingSequence));
        assert_eq!(v[0].rule.to_string(), "non-alternating sequence");
    }

    #[test]
    fn missing_period_is_allowed() {
        let mut d = toy();
        d.individuals.remove(1);
        assert!(d.validate().is_empty());
    }

    #[test]
    fn treatment_must_be_constant_within_cell() {
        let mut d = toy();
        d.individuals.push(rec(1, 1, false, true, Some(1.0)));
        assert!(d.validate().iter().any(|v| v.rule
            == ViolationRule::TreatmentVariesWithinClusterPeriod
            && v.record == Some(4)));
    }

    #[test]
    fn covariate_length_and_ranges() {
        let mut d = toy();
        d.individuals[0].covariates.push(1.0);
        d.individuals[2].cluster_id = 7;
        d.individuals[3].period = 0;
        let rules: Vec<_> = d.validate().into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&ViolationRule::CovariateLength));
        assert!(rules.contains(&ViolationRule::ClusterOutOfRange));
        assert!(rules.contains(&ViolationRule::PeriodOutOfRange));
    }

    #[test]
    fn forced_labels_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = toy();
        for _ in 0..50 {
            let labels = initial_strata(&d, &mut rng);
            assert_eq!(labels[2], StratumLabel::AlwaysSurvivor);
            assert_eq!(labels[3], StratumLabel::NeverSurvivor);
            for (l, ind) in labels.iter().zip(&d.individuals) {
                assert!(l.is_consistent(ind.treatment, ind.survived));
            }
        }
    }

    #[test]
    fn ambiguous_treated_survivors_split_evenly() {
        let n = 10_000;
        let d = TrialData {
            individuals: (0..n).map(|_| rec(1, 1, true, true, Some(1.0))).collect(),
            n_clusters: 1,
            n_periods: 2,
            covariate_names: vec!["x".into()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels = initial_strata(&d, &mut rng);
        let frac = labels
            .iter()
            .filter(|l| **l == StratumLabel::AlwaysSurvivor)
            .count() as f64
            / n as f64;
        assert!((0.49..=0.51).contains(&frac), "fraction {frac}");
        assert!(labels.iter().all(|l| *l != StratumLabel::NeverSurvivor));
    }

    #[test]
    fn variant_toggles() {
        assert_eq!(ModelVariant::M1.toggles(), (true, false, true));
        assert_eq!(ModelVariant::M2.toggles(), (false, false, true));
        assert_eq!(ModelVariant::M3.toggles(), (true, false, false));
        assert_eq!(ModelVariant::M4.toggles(), (false, false, false));
        assert_eq!(ModelVariant::A.toggles(), (true, true, true));
        for v in ["1", "2", "3", "4", "A"] {
            let m: ModelVariant = v.parse().unwrap();
            assert_eq!(ModelConfig::for_variant(m).variant(), Some(m));
        }
    }

    #[test]
    fn retained_count() {
        let mut c = ModelConfig {
            iterations: 10_000,
            burn_in: 2_500,
            thinning: 3,
            ..Default::default()
        };
        assert_eq!(c.retained_per_chain() * c.n_chains, 4 * 2_500);
        c.burn_in = 10_000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn isotropic_prior_resolves() {
        let r = CoefficientPrior::DIFFUSE.resolve(3).unwrap();
        assert_eq!(r.precision[(1, 1)], 1e-3);
        assert_eq!(r.precision[(0, 1)], 0.0);
        let bad = CoefficientPrior::Full {
            mean: DVector::zeros(2),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        assert!(bad.resolve(2).is_err());
    }
}
