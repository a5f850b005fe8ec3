//! Simulation of two-period CRXO trials with truncation by death, the
//! large-sample truth oracle, and the replicated operating-characteristics study.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::design::build_designs;
use crate::error::{Result, SaceError};
use crate::estimands::summarize;
use crate::gibbs::run_chains;
use crate::model::{
    Individual, ModelConfig, ModelVariant, PosteriorDraws, PriorSpec, StratumLabel, TrialData,
};
use crate::rand_dist::RngStream;

/// Number of clusters used by [`true_sace`].
pub const TRUTH_CLUSTERS: usize = 5000;

/// Marginal law of one baseline covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateSpec {
    Normal { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
}

impl CovariateSpec {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateSpec::Normal { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            CovariateSpec::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Data-generating process of one simulation scenario.
///
/// Coefficient vectors are ordered intercept, covariates, period-2 indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub n_clusters: usize,
    /// Inclusive bounds of the discrete-uniform cluster-period size.
    pub cluster_period_size: (usize, usize),
    pub covariate_names: Vec<String>,
    pub covariates: Vec<CovariateSpec>,
    pub z_coefficients: Vec<f64>,
    pub w_coefficients: Vec<f64>,
    /// Always-survivor log outcome under treatment.
    pub always_treated: Vec<f64>,
    /// Always-survivor log outcome under control.
    pub always_control: Vec<f64>,
    /// Protected-patient log outcome under treatment.
    pub protected_treated: Vec<f64>,
    pub error_variance_always: f64,
    pub error_variance_protected: f64,
    pub outcome_bpc: f64,
    pub outcome_wpc: f64,
    /// Latent-scale ICC of the strata cluster effects.
    pub strata_icc: f64,
    /// Latent-scale `(BPC, WPC)` for strata cluster and cluster-period effects;
    /// replaces `strata_icc` when present.
    pub strata_cp: Option<(f64, f64)>,
    /// Seed of the generated trial. Not part of the truth key.
    pub seed: u64,
}

/// Variances of every random effect and error term implied by a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioVariances {
    pub sigma2_c_always: f64,
    pub sigma2_cp_always: f64,
    pub sigma2_c_protected: f64,
    pub sigma2_cp_protected: f64,
    pub tau2_c: f64,
    pub tau2_cp: f64,
}

/// `(σ²_C, σ²_CP)` such that the within-period correlation is `wpc` and the
/// between-period correlation is `bpc` for error variance `error_var`.
pub fn variances_from_correlations(error_var: f64, bpc: f64, wpc: f64) -> Result<(f64, f64)> {
    if error_var.is_nan()
        || error_var <= 0.0
        || !(0.0..1.0).contains(&wpc)
        || !(0.0 <= bpc && bpc <= wpc)
    {
        return Err(SaceError::InvalidScenario(format!(
            "need error_var > 0 and 0 <= bpc <= wpc < 1, got ({error_var}, {bpc}, {wpc})"
        )));
    }
    let total = error_var / (1.0 - wpc);
    Ok((bpc * total, (wpc - bpc) * total))
}

/// `(BPC, WPC)` implied by cluster, cluster-period and error variances.
pub fn correlations_from_variances(sigma2_c: f64, sigma2_cp: f64, error_var: f64) -> (f64, f64) {
    let total = sigma2_c + sigma2_cp + error_var;
    (sigma2_c / total, (sigma2_c + sigma2_cp) / total)
}

/// Latent-scale cluster variance `τ² = ICC · (π²/3) / (1 - ICC)`.
pub fn tau_from_icc(icc: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&icc) {
        return Err(SaceError::InvalidScenario(format!(
            "ICC must be in [0, 1), got {icc}"
        )));
    }
    Ok(icc * (PI * PI / 3.0) / (1.0 - icc))
}

fn default_covariates() -> (Vec<String>, Vec<CovariateSpec>) {
    (
        vec!["x1".into(), "x2".into(), "x3".into()],
        vec![
            CovariateSpec::Normal {
                mean: 0.75,
                variance: 0.94,
            },
            CovariateSpec::Normal {
                mean: 0.25,
                variance: 1.32,
            },
            CovariateSpec::Normal {
                mean: -0.75,
                variance: 1.66,
            },
        ],
    )
}

impl Scenario {
    /// The main simulation design with the given outcome BPC/WPC and strata ICC.
    pub fn standard(name: &str, bpc: f64, wpc: f64, icc: f64) -> Scenario {
        let (covariate_names, covariates) = default_covariates();
        Scenario {
            name: name.into(),
            n_clusters: 18,
            cluster_period_size: (50, 150),
            covariate_names,
            covariates,
            z_coefficients: vec![0.1, 0.2, -0.4, 0.1, 0.05],
            w_coefficients: vec![-0.1, -0.4, -0.3, -0.1, 0.025],
            always_treated: vec![0.25, 0.15, -0.5, 0.7, 0.05],
            always_control: vec![0.9, 0.3, -0.15, 0.1, 0.05],
            protected_treated: vec![0.2, 0.25, -0.3, 0.15, 0.075],
            error_variance_always: 1.0,
            error_variance_protected: 1.25,
            outcome_bpc: bpc,
            outcome_wpc: wpc,
            strata_icc: icc,
            strata_cp: None,
            seed: 1,
        }
    }

    pub fn scenario1() -> Scenario {
        Scenario::standard("scenario1", 0.01, 0.02, 0.02)
    }

    pub fn scenario2() -> Scenario {
        Scenario::standard("scenario2", 0.03, 0.035, 0.035)
    }

    pub fn scenario3() -> Scenario {
        Scenario::standard("scenario3", 0.05, 0.1, 0.1)
    }

    /// Scenario 2 with strata cluster-period effects at the outcome BPC/WPC.
    pub fn scenario2_strata_cp() -> Scenario {
        let mut s = Scenario::standard("scenario2-strata-cp", 0.03, 0.035, 0.035);
        s.strata_cp = Some((0.03, 0.035));
        s
    }

    /// A 50-cluster trial shaped like a large ICU crossover study: cluster-period
    /// size about 269, strata near `(0.176, 0.063, 0.761)`, three covariates
    /// (standardized age, sex, standardized severity score).
    pub fn peptic_like() -> Scenario {
        Scenario {
            name: "peptic-like".into(),
            n_clusters: 50,
            cluster_period_size: (200, 338),
            covariate_names: vec!["age_std".into(), "male".into(), "severity_std".into()],
            covariates: vec![
                CovariateSpec::Normal {
                    mean: 0.0,
                    variance: 1.0,
                },
                CovariateSpec::Bernoulli { p: 0.6 },
                CovariateSpec::Normal {
                    mean: 0.0,
                    variance: 1.0,
                },
            ],
            z_coefficients: vec![1.55, -0.3, -0.05, -0.4, 0.02],
            w_coefficients: vec![-1.1, 0.1, 0.0, 0.1, 0.01],
            always_treated: vec![2.0, 0.05, 0.02, 0.1, 0.0],
            always_control: vec![1.95, 0.03, 0.02, 0.08, 0.0],
            protected_treated: vec![2.2, 0.05, 0.0, 0.15, 0.0],
            error_variance_always: 0.8,
            error_variance_protected: 0.9,
            outcome_bpc: 0.01,
            outcome_wpc: 0.012,
            strata_icc: 0.01,
            strata_cp: None,
            seed: 1,
        }
    }

    /// Named preset, if any.
    pub fn preset(name: &str) -> Option<Scenario> {
        match name {
            "scenario1" | "1" => Some(Scenario::scenario1()),
            "scenario2" | "2" => Some(Scenario::scenario2()),
            "scenario3" | "3" => Some(Scenario::scenario3()),
            "scenario2-strata-cp" => Some(Scenario::scenario2_strata_cp()),
            "peptic-like" => Some(Scenario::peptic_like()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SaceError::InvalidScenario(m));
        let p = self.covariates.len();
        if self.n_clusters < 2 {
            return bad("n_clusters must be at least 2".into());
        }
        let (lo, hi) = self.cluster_period_size;
        if lo == 0 || lo > hi {
            return bad(format!("cluster-period size range ({lo}, {hi}) is invalid"));
        }
        if self.covariate_names.len() != p {
            return bad("covariate names and specs differ in length".into());
        }
        for (name, v) in [
            ("z", &self.z_coefficients),
            ("w", &self.w_coefficients),
            ("always_treated", &self.always_treated),
            ("always_control", &self.always_control),
            ("protected_treated", &self.protected_treated),
        ] {
            if v.len() != p + 2 {
                return bad(format!(
                    "{name} coefficients need {} entries, got {}",
                    p + 2,
                    v.len()
                ));
            }
        }
        for c in &self.covariates {
            match *c {
                CovariateSpec::Normal { variance, .. } if variance.is_nan() || variance < 0.0 => {
                    return bad("covariate variance must be non-negative".into())
                }
                CovariateSpec::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return bad("covariate probability must be in [0, 1]".into())
                }
                _ => {}
            }
        }
        self.variances().map(|_| ())
    }

    pub fn variances(&self) -> Result<ScenarioVariances> {
        let (c11, cp11) = variances_from_correlations(
            self.error_variance_always,
            self.outcome_bpc,
            self.outcome_wpc,
        )?;
        let (c10, cp10) = variances_from_correlations(
            self.error_variance_protected,
            self.outcome_bpc,
            self.outcome_wpc,
        )?;
        let (tau2_c, tau2_cp) = match self.strata_cp {
            Some((bpc, wpc)) => variances_from_correlations(PI * PI / 3.0, bpc, wpc)?,
            None => (tau_from_icc(self.strata_icc)?, 0.0),
        };
        Ok(ScenarioVariances {
            sigma2_c_always: c11,
            sigma2_cp_always: cp11,
            sigma2_c_protected: c10,
            sigma2_cp_protected: cp10,
            tau2_c,
            tau2_cp,
        })
    }

    /// Canonical text of every parameter that affects the data-generating
    /// law. Excludes `name` and `seed`.
    pub fn canonical_key(&self) -> String {
        let mut s = format!(
            "I={};size={}..{};",
            self.n_clusters, self.cluster_period_size.0, self.cluster_period_size.1
        );
        for c in &self.covariates {
            match c {
                CovariateSpec::Normal { mean, variance } => {
                    s += &format!("N({:e},{:e});", mean, variance)
                }
                CovariateSpec::Bernoulli { p } => s += &format!("B({:e});", p),
            }
        }
        for v in [
            &self.z_coefficients,
            &self.w_coefficients,
            &self.always_treated,
            &self.always_control,
            &self.protected_treated,
        ] {
            s += &v
                .iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(",");
            s.push(';');
        }
        s += &format!(
            "err={:e},{:e};out={:e},{:e};icc={:e};",
            self.error_variance_always,
            self.error_variance_protected,
            self.outcome_bpc,
            self.outcome_wpc,
            self.strata_icc
        );
        if let Some((b, w)) = self.strata_cp {
            s += &format!("scp={b:e},{w:e};");
        }
        s
    }

    /// 64-bit FNV-1a hash of [`Self::canonical_key`].
    pub fn truth_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_key().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Potential outcomes of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcome {
    pub cluster_id: usize,
    pub period: usize,
    pub stratum: StratumLabel,
    /// Logged outcome under treatment, defined when `S(1) = 1`.
    pub log_y1: Option<f64>,
    /// Logged outcome under control, defined when `S(0) = 1`.
    pub log_y0: Option<f64>,
}

impl PotentialOutcome {
    /// `(S(1), S(0))`
    pub fn survival(&self) -> (bool, bool) {
        self.stratum.survival_pair()
    }
}

/// Potential outcomes of every individual, aligned with the generated [`TrialData`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PotentialOutcomeTable {
    pub records: Vec<PotentialOutcome>,
}

struct Draw<'a> {
    cluster: usize,
    period: usize,
    covariates: &'a [f64],
    stratum: StratumLabel,
    y11_treated: f64,
    y11_control: f64,
    y10_treated: f64,
}

fn linear(coef: &[f64], x: &[f64], period: usize) -> f64 {
    let p = x.len();
    let mut v = coef[0] + if period == 1 { coef[p + 1] } else { 0.0 };
    for q in 0..p {
        v += coef[1 + q] * x[q];
    }
    v
}

/// Generates every individual of `n_clusters` clusters and passes each to `visit`.
/// Random effects and errors are shared between the two arms of the
/// always-survivor outcome.
fn simulate_population<R: Rng + ?Sized>(
    sc: &Scenario,
    var: &ScenarioVariances,
    n_clusters: usize,
    rng: &mut R,
    mut visit: impl FnMut(Draw<'_>),
) {
    let normal = |v: f64| Normal::new(0.0, v.sqrt()).expect("non-negative variance");
    let (lo, hi) = sc.cluster_period_size;
    let p = sc.covariates.len();
    let mut x = vec![0.0; p];
    let e11 = normal(sc.error_variance_always);
    let e10 = normal(sc.error_variance_protected);
    for i in 0..n_clusters {
        let eta_z = normal(var.tau2_c).sample(rng);
        let eta_w = normal(var.tau2_c).sample(rng);
        let xi11 = normal(var.sigma2_c_always).sample(rng);
        let xi10 = normal(var.sigma2_c_protected).sample(rng);
        for j in 0..2 {
            let nu_z = normal(var.tau2_cp).sample(rng);
            let nu_w = normal(var.tau2_cp).sample(rng);
            let g11 = normal(var.sigma2_cp_always).sample(rng);
            let g10 = normal(var.sigma2_cp_protected).sample(rng);
            let m = rng.random_range(lo..=hi);
            for _ in 0..m {
                for (xq, spec) in x.iter_mut().zip(&sc.covariates) {
                    *xq = spec.sample(rng);
                }
                let z = linear(&sc.z_coefficients, &x, j) + eta_z + nu_z;
                let w = linear(&sc.w_coefficients, &x, j) + eta_w + nu_w;
                // multinomial expit with the never-survivor category as reference
                let m_ = 0f64.max(z).max(w);
                let (ez, ew, e0) = ((z - m_).exp(), (w - m_).exp(), (-m_).exp());
                let u: f64 = rng.random::<f64>() * (ez + ew + e0);
                let stratum = if u < ez {
                    StratumLabel::AlwaysSurvivor
                } else if u < ez + ew {
                    StratumLabel::Protected
                } else {
                    StratumLabel::NeverSurvivor
                };
                let eps11 = e11.sample(rng);
                let eps10 = e10.sample(rng);
                let shared11 = xi11 + g11 + eps11;
                visit(Draw {
                    cluster: i,
                    period: j,
                    covariates: &x,
                    stratum,
                    y11_treated: linear(&sc.always_treated, &x, j) + shared11,
                    y11_control: linear(&sc.always_control, &x, j) + shared11,
                    y10_treated: linear(&sc.protected_treated, &x, j) + xi10 + g10 + eps10,
                });
            }
        }
    }
}

/// Generates one trial: clusters are split 1:1 between the sequences
/// (treated first, control first), then potential outcomes are masked by the
/// assigned treatment.
pub fn generate_trial<R: Rng + ?Sized>(
    sc: &Scenario,
    rng: &mut R,
) -> Result<(TrialData, PotentialOutcomeTable)> {
    sc.validate()?;
    let var = sc.variances()?;
    let i_count = sc.n_clusters;
    let mut treated_first: Vec<bool> = (0..i_count).map(|i| i < i_count / 2).collect();
    treated_first.shuffle(rng);

    let mut individuals = Vec::new();
    let mut table = PotentialOutcomeTable::default();
    simulate_population(sc, &var, i_count, rng, |d| {
        let (log_y1, log_y0) = match d.stratum {
            StratumLabel::AlwaysSurvivor => (Some(d.y11_treated), Some(d.y11_control)),
            StratumLabel::Protected => (Some(d.y10_treated), None),
            StratumLabel::NeverSurvivor => (None, None),
        };
        let treatment = treated_first[d.cluster] == (d.period == 0);
        let survived = d.stratum.survives_under(treatment);
        let observed = if treatment { log_y1 } else { log_y0 };
        individuals.push(Individual {
            cluster_id: d.cluster + 1,
            period: d.period + 1,
            treatment,
            survived,
            outcome: observed.map(f64::exp),
            covariates: d.covariates.to_vec(),
        });
        table.records.push(PotentialOutcome {
            cluster_id: d.cluster + 1,
            period: d.period + 1,
            stratum: d.stratum,
            log_y1,
            log_y0,
        });
    });
    let data = TrialData {
        individuals,
        n_clusters: i_count,
        n_periods: 2,
        covariate_names: sc.covariate_names.clone(),
    };
    Ok((data, table))
}

/// Large-sample ground truth of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthValues {
    pub mu_ldiff: f64,
    pub mu_rom: f64,
    /// `(pi_00, pi_10, pi_11)`
    pub strata_proportions: [f64; 3],
    pub n_individuals: usize,
}

/// SACE truths from [`TRUTH_CLUSTERS`] clusters of potential outcomes drawn on
/// a stream keyed by [`Scenario::truth_hash`]:
/// `mean log Y(1) - mean log Y(0)` and `mean Y(1) / mean Y(0)` among always-survivors.
pub fn true_sace(sc: &Scenario) -> Result<TruthValues> {
    true_sace_with(sc, TRUTH_CLUSTERS)
}

/// [`true_sace`] with a custom number of clusters.
pub fn true_sace_with(sc: &Scenario, n_clusters: usize) -> Result<TruthValues> {
    sc.validate()?;
    let var = sc.variances()?;
    let mut rng = RngStream::new(sc.truth_hash(), 0);
    let mut counts = [0usize; 3];
    let (mut diff, mut y1, mut y0) = (0.0, 0.0, 0.0);
    simulate_population(sc, &var, n_clusters, &mut rng, |d| {
        counts[d.stratum.proportion_index()] += 1;
        if d.stratum == StratumLabel::AlwaysSurvivor {
            diff += d.y11_treated - d.y11_control;
            y1 += d.y11_treated.exp();
            y0 += d.y11_control.exp();
        }
    });
    let n: usize = counts.iter().sum();
    let n_as = counts[2] as f64;
    Ok(TruthValues {
        mu_ldiff: diff / n_as,
        mu_rom: y1 / y0,
        strata_proportions: counts.map(|c| c as f64 / n as f64),
        n_individuals: n,
    })
}

/// Settings of a replicated study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub models: Vec<ModelVariant>,
    pub n_replicates: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub mass: f64,
    pub priors: PriorSpec,
}

impl Default for StudyConfig {
    /// Model 1, 200 replicates of one 5,000-iteration chain with 1,500 burn-in.
    fn default() -> Self {
        StudyConfig {
            models: vec![ModelVariant::M1],
            n_replicates: 200,
            iterations: 5000,
            burn_in: 1500,
            thinning: 1,
            n_chains: 1,
            seed: 1,
            mass: 0.95,
            priors: PriorSpec::default(),
        }
    }
}

impl StudyConfig {
    pub fn model_config(&self, variant: ModelVariant) -> ModelConfig {
        let mut c = ModelConfig::for_variant(variant);
        c.iterations = self.iterations;
        c.burn_in = self.burn_in;
        c.thinning = self.thinning;
        c.n_chains = self.n_chains;
        c.seed = self.seed;
        c.priors = self.priors.clone();
        c
    }
}

/// Stream id of replicate `r`; chains use the low bits above it.
pub fn replicate_stream_base(replicate: usize) -> u64 {
    (replicate as u64) << 16
}

/// Posterior summary of one model fitted to one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub model: ModelVariant,
    pub n_chains_failed: usize,
    /// Why the replicate produced no estimate, if it did not.
    pub failure: Option<String>,
    pub ldiff_mean: f64,
    pub ldiff_hpd: (f64, f64),
    pub rom_mean: f64,
    pub rom_hpd: (f64, f64),
    pub strata_mean: [f64; 3],
    pub missing_contrast_fraction: f64,
}

impl ReplicateRow {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Bias, RMSE and HPD coverage of one contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastMetrics {
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
}

/// Metrics of one model over all successful replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub model: ModelVariant,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub failure_rate: f64,
    pub ldiff: ContrastMetrics,
    pub rom: ContrastMetrics,
    /// Truth, bias and RMSE of `(pi_00, pi_10, pi_11)`.
    pub strata: [(f64, f64, f64); 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub scenario: String,
    pub truth: TruthValues,
    pub rows: Vec<ReplicateRow>,
    pub metrics: Vec<ModelMetrics>,
}

fn fit_replicate(sc: &Scenario, study: &StudyConfig, replicate: usize) -> Vec<ReplicateRow> {
    let base = replicate_stream_base(replicate);
    let mut data_rng = RngStream::new(study.seed, base);
    let failed_row = |model, reason: String, n_chains_failed| ReplicateRow {
        replicate,
        model,
        n_chains_failed,
        failure: Some(reason),
        ldiff_mean: f64::NAN,
        ldiff_hpd: (f64::NAN, f64::NAN),
        rom_mean: f64::NAN,
        rom_hpd: (f64::NAN, f64::NAN),
        strata_mean: [f64::NAN; 3],
        missing_contrast_fraction: f64::NAN,
    };
    let prepared = generate_trial(sc, &mut data_rng)
        .and_then(|(data, _)| build_designs(&data).map(|dm| (data, dm)));
    let (data, dm) = match prepared {
        Ok(x) => x,
        Err(e) => {
            return study
                .models
                .iter()
                .map(|m| failed_row(*m, e.to_string(), study.n_chains))
                .collect()
        }
    };
    study
        .models
        .iter()
        .map(|&model| {
            let config = study.model_config(model);
            let results = run_chains(&data, &dm, &config, base);
            let mut draws = PosteriorDraws::default();
            let mut failures = Vec::new();
            for r in results {
                match r {
                    Ok(out) => draws.extend(out.draws),
                    Err(f) => failures.push(f.to_string()),
                }
            }
            if draws.is_empty() {
                return failed_row(model, failures.join("; "), failures.len());
            }
            let s = summarize(&draws, study.mass);
            match (s.mu_ldiff, s.mu_rom) {
                (Some(l), Some(r)) => ReplicateRow {
                    replicate,
                    model,
                    n_chains_failed: failures.len(),
                    failure: None,
                    ldiff_mean: l.mean,
                    ldiff_hpd: l.hpd.unwrap_or((f64::NAN, f64::NAN)),
                    rom_mean: r.mean,
                    rom_hpd: r.hpd.unwrap_or((f64::NAN, f64::NAN)),
                    strata_mean: s.strata.map(|f| f.map_or(f64::NAN, |f| f.mean)),
                    missing_contrast_fraction: s.missing_contrast_fraction,
                },
                _ => failed_row(
                    model,
                    "no always-survivor in any draw".into(),
                    failures.len(),
                ),
            }
        })
        .collect()
}

fn contrast_metrics(truth: f64, est: &[(f64, (f64, f64))]) -> ContrastMetrics {
    let n = est.len() as f64;
    if est.is_empty() {
        return ContrastMetrics {
            truth,
            bias: f64::NAN,
            rmse: f64::NAN,
            coverage: f64::NAN,
        };
    }
    let bias = est.iter().map(|(m, _)| m - truth).sum::<f64>() / n;
    let rmse = (est.iter().map(|(m, _)| (m - truth).powi(2)).sum::<f64>() / n).sqrt();
    let covered = est
        .iter()
        .filter(|(_, (lo, hi))| *lo <= truth && truth <= *hi)
        .count();
    ContrastMetrics {
        truth,
        bias,
        rmse,
        coverage: covered as f64 / n,
    }
}

/// Aggregates replicate rows into per-model metrics, in `models` order.
pub fn aggregate(
    rows: &[ReplicateRow],
    models: &[ModelVariant],
    truth: &TruthValues,
) -> Vec<ModelMetrics> {
    models
        .iter()
        .map(|&model| {
            let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.model == model).collect();
            let ok: Vec<&ReplicateRow> = mine.iter().copied().filter(|r| r.succeeded()).collect();
            let n_failed = mine.len() - ok.len();
            let ldiff: Vec<_> = ok.iter().map(|r| (r.ldiff_mean, r.ldiff_hpd)).collect();
            let rom: Vec<_> = ok.iter().map(|r| (r.rom_mean, r.rom_hpd)).collect();
            let strata = std::array::from_fn(|k| {
                let t = truth.strata_proportions[k];
                let n = ok.len() as f64;
                let bias = ok.iter().map(|r| r.strata_mean[k] - t).sum::<f64>() / n;
                let rmse = (ok
                    .iter()
                    .map(|r| (r.strata_mean[k] - t).powi(2))
                    .sum::<f64>()
                    / n)
                    .sqrt();
                (t, bias, rmse)
            });
            ModelMetrics {
                model,
                n_replicates: mine.len(),
                n_failed,
                failure_rate: if mine.is_empty() {
                    0.0
                } else {
                    n_failed as f64 / mine.len() as f64
                },
                ldiff: contrast_metrics(truth.mu_ldiff, &ldiff),
                rom: contrast_metrics(truth.mu_rom, &rom),
                strata,
            }
        })
        .collect()
}

/// Runs the replicated study. Replicates run in parallel on the current rayon
/// pool; every replicate draws from its own streams, so results do not depend
/// on the degree of parallelism.
pub fn run_study(sc: &Scenario, study: &StudyConfig, truth: &TruthValues) -> Result<StudyReport> {
    sc.validate()?;
    if study.n_replicates == 0 {
        return Err(SaceError::InvalidConfig(
            "n_replicates must be at least 1".into(),
        ));
    }
    if study.models.is_empty() {
        return Err(SaceError::InvalidConfig(
            "at least one model is required".into(),
        ));
    }
    study.model_config(study.models[0]).validate()?;
    let rows: Vec<ReplicateRow> = (0..study.n_replicates)
        .into_par_iter()
        .map(|r| fit_replicate(sc, study, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let metrics = aggregate(&rows, &study.models, truth);
    Ok(StudyReport {
        scenario: sc.name.clone(),
        truth: *truth,
        rows,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_algebra() {
        assert_eq!(
            variances_from_correlations(1.0, 0.0, 0.0).unwrap(),
            (0.0, 0.0)
        );
        let (c, cp) = variances_from_correlations(1.0, 0.03, 0.035).unwrap();
        assert!((c - 0.031088).abs() < 1e-6, "{c}");
        assert!((cp - 0.005181).abs() < 1e-6, "{cp}");
        let (b, w) = correlations_from_variances(c, cp, 1.0);
        assert!((b - 0.03).abs() < 1e-12 && (w - 0.035).abs() < 1e-12);
        assert!(variances_from_correlations(1.0, 0.2, 0.1).is_err());
        assert!(variances_from_correlations(1.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn icc_algebra() {
        assert_eq!(tau_from_icc(0.0).unwrap(), 0.0);
        assert!((tau_from_icc(0.035).unwrap() - 0.119322).abs() < 1e-6);
        assert!((tau_from_icc(0.5).unwrap() - PI * PI / 3.0).abs() < 1e-12);
        assert!(tau_from_icc(1.0).is_err());
    }

    #[test]
    fn trial_shape_and_masking() {
        let sc = Scenario::scenario1();
        let mut rng = RngStream::new(3, 0);
        let (data, table) = generate_trial(&sc, &mut rng).unwrap();
        assert!(data.validate().is_empty());
        assert_eq!(data.individuals.len(), table.records.len());
        let mut cps = std::collections::BTreeSet::new();
        let mut treated_first = 0;
        for (ind, po) in data.individuals.iter().zip(&table.records) {
            cps.insert((ind.cluster_id, ind.period));
            let (s1, s0) = po.survival();
            assert!(s1 || !s0, "monotonicity");
            let s = if ind.treatment { s1 } else { s0 };
            assert_eq!(ind.survived, s);
            let y = if ind.treatment { po.log_y1 } else { po.log_y0 };
            assert_eq!(ind.log_outcome().is_some(), y.is_some());
            if let (Some(a), Some(b)) = (ind.log_outcome(), y) {
                assert!((a - b).abs() < 1e-12);
            }
            if !ind.treatment && ind.survived {
                assert_eq!(po.stratum, StratumLabel::AlwaysSurvivor);
            }
            if ind.period == 1 && ind.treatment {
                treated_first += 1;
            }
        }
        assert_eq!(cps.len(), 36);
        assert!(treated_first > 0);
    }

    #[test]
    fn sequences_are_balanced() {
        let sc = Scenario::scenario2();
        let mut rng = RngStream::new(4, 0);
        let (data, _) = generate_trial(&sc, &mut rng).unwrap();
        let mut first = std::collections::BTreeMap::new();
        for ind in &data.individuals {
            if ind.period == 1 {
                first.insert(ind.cluster_id, ind.treatment);
            }
        }
        assert_eq!(first.values().filter(|a| **a).count(), 9);
    }

    #[test]
    fn null_effect_truth() {
        let mut sc = Scenario::scenario2();
        sc.always_control = sc.always_treated.clone();
        let t = true_sace_with(&sc, 300).unwrap();
        assert!(t.mu_ldiff.abs() < 1e-12);
        assert!((t.mu_rom - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truth_key_ignores_seed_and_name() {
        let mut a = Scenario::scenario2();
        let h = a.truth_hash();
        a.seed = 99;
        a.name = "other".into();
        assert_eq!(a.truth_hash(), h);
        a.outcome_bpc = 0.031;
        assert_ne!(a.truth_hash(), h);
    }

    #[test]
    fn aggregate_coverage_is_binary_for_one_replicate() {
        let truth = TruthValues {
            mu_ldiff: -1.0,
            mu_rom: 0.5,
            strata_proportions: [0.3, 0.3, 0.4],
            n_individuals: 1,
        };
        let row = ReplicateRow {
            replicate: 0,
            model: ModelVariant::M1,
            n_chains_failed: 0,
            failure: None,
            ldiff_mean: -0.9,
            ldiff_hpd: (-1.2, -0.7),
            rom_mean: 0.6,
            rom_hpd: (0.55, 0.7),
            strata_mean: [0.3, 0.3, 0.4],
            missing_contrast_fraction: 0.0,
        };
        let m = &aggregate(&[row], &[ModelVariant::M1], &truth)[0];
        assert_eq!(m.ldiff.coverage, 1.0);
        assert_eq!(m.rom.coverage, 0.0);
        assert!((m.ldiff.bias - 0.1).abs() < 1e-12);
    }
}
