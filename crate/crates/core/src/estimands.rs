//! Per-draw SACE contrasts, strata proportions and posterior summaries.

use crate::design::DesignMatrices;
use crate::error::{Result, SaceError};
use crate::math::log_sum_exp;
use crate::model::{ParameterState, PosteriorDraws, StratumLabel, VarianceComponents};

/// Minimum number of draws accepted by [`hpd_interval`].
pub const MIN_HPD_DRAWS: usize = 50;

/// Log-scale difference in means among current always-survivors:
/// `α₁ + β₁ᵀ X̄`. `None` when no individual is labelled always-survivor.
pub fn sace_ldiff(state: &ParameterState, dm: &DesignMatrices) -> Option<f64> {
    let p = dm.n_covariates();
    let theta = &state.theta_always;
    let mut sum = vec![0.0; p];
    let mut n = 0usize;
    for (r, l) in state.labels.iter().enumerate() {
        if *l == StratumLabel::AlwaysSurvivor {
            let row = dm.out11_row(r);
            for q in 0..p {
                sum[q] += row[2 + q];
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let interaction: f64 = (0..p).map(|q| theta[3 + p + q] * sum[q] / n as f64).sum();
    Some(theta[1] + interaction)
}

/// Ratio of means among current always-survivors:
/// `exp(α₁) · mean exp(βᵀX + δκ + β₁ᵀX) / mean exp(βᵀX + δκ)`, evaluated with
/// log-sum-exp. `None` when no individual is labelled always-survivor.
pub fn sace_rom(state: &ParameterState, dm: &DesignMatrices) -> Option<f64> {
    let p = dm.n_covariates();
    let theta = &state.theta_always;
    let mut num = Vec::new();
    let mut den = Vec::new();
    for (r, l) in state.labels.iter().enumerate() {
        if *l != StratumLabel::AlwaysSurvivor {
            continue;
        }
        let row = dm.out11_row(r);
        let mut base = theta[2 + p] * row[2 + p];
        let mut inter = 0.0;
        for q in 0..p {
            base += theta[2 + q] * row[2 + q];
            inter += theta[3 + p + q] * row[2 + q];
        }
        den.push(base);
        num.push(base + inter);
    }
    if num.is_empty() {
        return None;
    }
    Some((theta[1] + log_sum_exp(&num) - log_sum_exp(&den)).exp())
}

/// Label counts in the order `(0,0)`, `(1,0)`, `(1,1)`.
pub fn strata_counts(labels: &[StratumLabel]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.proportion_index()] += 1;
    }
    counts
}

/// Sample proportions `(pi_00, pi_10, pi_11)` as counts / N.
pub fn strata_proportions(labels: &[StratumLabel]) -> [f64; 3] {
    let counts = strata_counts(labels);
    let n = labels.len().max(1) as f64;
    let p00 = counts[0] as f64 / n;
    let p10 = counts[1] as f64 / n;
    // closing the simplex this way makes the left-to-right sum exactly 1
    [p00, p10, (1.0 - (p00 + p10)).max(0.0)]
}

/// Shortest window over the sorted draws holding `ceil(mass · n)` points.
/// Ties go to the window with the smallest lower end.
pub fn hpd_interval(draws: &[f64], mass: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(SaceError::InvalidParameter(format!(
            "HPD mass must be in (0, 1), got {mass}"
        )));
    }
    if draws.iter().any(|x| !x.is_finite()) {
        return Err(SaceError::InvalidParameter(
            "HPD draws must be finite".into(),
        ));
    }
    let n = draws.len();
    if n < MIN_HPD_DRAWS {
        return Err(SaceError::NotEnoughDraws {
            needed: MIN_HPD_DRAWS,
            got: n,
        });
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = hpd_window_size(n, mass);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=n - k {
        let width = sorted[i + k - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + k - 1]))
}

/// Number of sorted draws an HPD window of `mass` must contain.
pub fn hpd_window_size(n: usize, mass: f64) -> usize {
    // Guard against `0.95 * 100` landing a hair above 95.
    let k = (mass * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    k.clamp(1, n)
}

/// Split-chain potential scale reduction for draws grouped by chain.
/// `None` with fewer than two split halves of length two or more.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h >= 2 {
            halves.push(&c[..h]);
            halves.push(&c[c.len() - h..]);
        }
    }
    if halves.len() < 2 {
        return None;
    }
    let n = halves.iter().map(|h| h.len()).min()?;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h[..n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { Some(1.0) } else { None };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Some((var_plus / w).sqrt())
}

/// Mean, standard deviation and HPD interval of one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSummary {
    pub mean: f64,
    pub sd: f64,
    /// `None` when fewer than [`MIN_HPD_DRAWS`] draws are available.
    pub hpd: Option<(f64, f64)>,
    pub n: usize,
}

impl FieldSummary {
    pub fn from_draws(draws: &[f64], mass: f64) -> Option<FieldSummary> {
        if draws.is_empty() {
            return None;
        }
        let n = draws.len();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let hpd = hpd_interval(draws, mass).ok();
        Some(FieldSummary { mean, sd, hpd, n })
    }
}

/// Pooled posterior summary of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SaceSummary {
    pub mass: f64,
    pub n_draws: usize,
    pub n_chains: usize,
    pub mu_ldiff: Option<FieldSummary>,
    pub mu_rom: Option<FieldSummary>,
    /// `(pi_00, pi_10, pi_11)`
    pub strata: [Option<FieldSummary>; 3],
    /// Indexed as [`VarianceComponents::NAMES`]; `None` for components not sampled.
    pub variances: [Option<FieldSummary>; 10],
    /// Fraction of draws with no labelled always-survivor.
    pub missing_contrast_fraction: f64,
    pub rhat_ldiff: Option<f64>,
}

impl SaceSummary {
    /// `(name, summary)` pairs in a fixed order, for reporting.
    pub fn fields(&self) -> Vec<(&'static str, Option<FieldSummary>)> {
        let mut out = vec![
            ("mu_ldiff", self.mu_ldiff),
            ("mu_rom", self.mu_rom),
            ("pi_00", self.strata[0]),
            ("pi_10", self.strata[1]),
            ("pi_11", self.strata[2]),
        ];
        for (name, v) in VarianceComponents::NAMES.iter().zip(self.variances) {
            out.push((name, v));
        }
        out
    }
}

/// Pools retained draws across chains and summarizes every recorded field.
pub fn summarize(draws: &PosteriorDraws, mass: f64) -> SaceSummary {
    let records = &draws.records;
    let ldiff: Vec<f64> = records.iter().filter_map(|r| r.mu_ldiff).collect();
    let rom: Vec<f64> = records.iter().filter_map(|r| r.mu_rom).collect();
    let strata = std::array::from_fn(|k| {
        let v: Vec<f64> = records.iter().map(|r| r.strata_proportions[k]).collect();
        FieldSummary::from_draws(&v, mass)
    });
    let variances = std::array::from_fn(|k| {
        let v: Vec<f64> = records.iter().filter_map(|r| r.variances[k]).collect();
        FieldSummary::from_draws(&v, mass)
    });
    let chain_ids = draws.chain_ids();
    let per_chain: Vec<Vec<f64>> = chain_ids
        .iter()
        .map(|c| {
            records
                .iter()
                .filter(|r| r.chain_id == *c)
                .filter_map(|r| r.mu_ldiff)
                .collect()
        })
        .collect();
    let missing = records.iter().filter(|r| r.mu_ldiff.is_none()).count();
    SaceSummary {
        mass,
        n_draws: records.len(),
        n_chains: chain_ids.len(),
        mu_ldiff: FieldSummary::from_draws(&ldiff, mass),
        mu_rom: FieldSummary::from_draws(&rom, mass),
        strata,
        variances,
        missing_contrast_fraction: if records.is_empty() {
            0.0
        } else {
            missing as f64 / records.len() as f64
        },
        rhat_ldiff: split_rhat(&per_chain),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_designs;
    use crate::model::{DrawRecord, Individual, TrialData, VarianceComponents};

    fn one_cov_data(xs: &[(f64, usize)]) -> TrialData {
        // every individual survives; cluster 1 treated in period 1
        TrialData {
            individuals: xs
                .iter()
                .map(|(x, period)| Individual {
                    cluster_id: 1,
                    period: *period,
                    treatment: *period == 1,
                    survived: true,
                    outcome: Some(1.5),
                    covariates: vec![*x],
                })
                .collect(),
            n_clusters: 1,
            n_periods: 2,
            covariate_names: vec!["x".into()],
        }
    }

    fn state_with(theta: Vec<f64>, labels: Vec<StratumLabel>) -> ParameterState {
        ParameterState {
            theta_always: theta,
            theta_protected: vec![],
            theta_z: vec![],
            theta_w: vec![],
            xi_always: vec![],
            xi_protected: vec![],
            gamma_always: vec![],
            gamma_protected: vec![],
            eta_z: vec![],
            eta_w: vec![],
            nu_z: vec![],
            nu_w: vec![],
            variances: VarianceComponents {
                sigma2_always: 1.0,
                sigma2_protected: 1.0,
                sigma2_c_always: 1.0,
                sigma2_c_protected: 1.0,
                sigma2_cp_always: 1.0,
                sigma2_cp_protected: 1.0,
                tau2_c_z: 1.0,
                tau2_c_w: 1.0,
                tau2_cp_z: 1.0,
                tau2_cp_w: 1.0,
            },
            omega_z: vec![],
            omega_w: vec![],
            labels,
        }
    }

    #[test]
    fn ldiff_hand_instance() {
        let dm = build_designs(&one_cov_data(&[(-1.0, 1), (-1.0, 2), (5.0, 1)])).unwrap();
        use StratumLabel::*;
        // theta = [alpha, alpha1, beta, delta, beta1]
        let s = state_with(
            vec![0.1, 0.5, 0.3, 0.2, 0.2],
            vec![AlwaysSurvivor, AlwaysSurvivor, Protected],
        );
        assert!((sace_ldiff(&s, &dm).unwrap() - 0.3).abs() < 1e-15);
        let s0 = state_with(vec![0.1, 0.5, 0.3, 0.2, 0.0], s.labels.clone());
        assert_eq!(sace_ldiff(&s0, &dm), Some(0.5));
        let none = state_with(s.theta_always.clone(), vec![Protected; 3]);
        assert_eq!(sace_ldiff(&none, &dm), None);
        assert_eq!(sace_rom(&none, &dm), None);
    }

    #[test]
    fn rom_hand_instance() {
        let xs = [(0.3, 1), (-1.2, 2), (2.0, 1)];
        let dm = build_designs(&one_cov_data(&xs)).unwrap();
        let theta = vec![0.4, -0.7, 0.25, 0.6, -0.35];
        let s = state_with(theta.clone(), vec![StratumLabel::AlwaysSurvivor; 3]);
        let (mut num, mut den) = (0.0, 0.0);
        for (x, period) in xs {
            let kappa = if period == 2 { 1.0 } else { 0.0 };
            num += (theta[2] * x + theta[3] * kappa + theta[4] * x).exp();
            den += (theta[2] * x + theta[3] * kappa).exp();
        }
        let direct = theta[1].exp() * (num / 3.0) / (den / 3.0);
        assert!((sace_rom(&s, &dm).unwrap() - direct).abs() < 1e-12 * direct);

        let cancel = state_with(vec![0.0, 2f64.ln(), 0.0, 0.0, 0.0], s.labels.clone());
        assert!((sace_rom(&cancel, &dm).unwrap() - 2.0).abs() < 1e-14);
        let no_inter = state_with(vec![0.4, -0.7, 0.25, 0.6, 0.0], s.labels.clone());
        assert!((sace_rom(&no_inter, &dm).unwrap() - (-0.7f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn proportions() {
        use StratumLabel::*;
        assert_eq!(strata_proportions(&[AlwaysSurvivor; 5]), [0.0, 0.0, 1.0]);
        let split = [AlwaysSurvivor, AlwaysSurvivor, Protected, NeverSurvivor];
        assert_eq!(strata_proportions(&split), [0.25, 0.25, 0.5]);
        assert_eq!(strata_counts(&split), [1, 1, 2]);
    }

    #[test]
    fn hpd_uniform_spacing_ties_to_smallest_lo() {
        let draws: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(hpd_window_size(100, 0.95), 95);
        assert_eq!(hpd_interval(&draws, 0.95).unwrap(), (1.0, 95.0));
    }

    #[test]
    fn hpd_errors() {
        assert!(matches!(
            hpd_interval(&[1.0; 10], 0.95),
            Err(SaceError::NotEnoughDraws {
                needed: 50,
                got: 10
            })
        ));
        assert!(hpd_interval(&[1.0; 60], 1.0).is_err());
    }

    #[test]
    fn hpd_shorter_than_equal_tailed_for_skewed_draws() {
        // deterministic exponential quantiles
        let n = 2000;
        let draws: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let (lo, hi) = hpd_interval(&draws, 0.9).unwrap();
        let et = (
            draws[(0.05 * n as f64) as usize],
            draws[(0.95 * n as f64) as usize],
        );
        assert!(hi - lo < et.1 - et.0);
        assert!(lo < et.0);
    }

    #[test]
    fn constant_chain_summary() {
        let rec = |chain_id, iteration| DrawRecord {
            chain_id,
            iteration,
            mu_ldiff: Some(0.7),
            mu_rom: Some(2.0),
            strata_proportions: [0.25, 0.25, 0.5],
            variances: [Some(1.0); 10],
            theta_always: None,
            theta_protected: None,
        };
        let draws = PosteriorDraws {
            records: (0..60).map(|i| rec(0, i)).collect(),
        };
        let s = summarize(&draws, 0.95);
        let l = s.mu_ldiff.unwrap();
        assert!((l.mean - 0.7).abs() < 1e-12);
        assert_eq!(l.hpd, Some((0.7, 0.7)));
        assert_eq!(s.missing_contrast_fraction, 0.0);
        assert_eq!(s.n_chains, 1);
    }

    #[test]
    fn pooled_summary_spans_disjoint_chains() {
        let mut records = Vec::new();
        for c in 0..2 {
            for i in 0..100 {
                records.push(DrawRecord {
                    chain_id: c,
                    iteration: i,
                    mu_ldiff: Some(c as f64 * 10.0 + i as f64 * 0.01),
                    mu_rom: None,
                    strata_proportions: [0.0, 0.0, 1.0],
                    variances: [None; 10],
                    theta_always: None,
                    theta_protected: None,
                });
            }
        }
        let s = summarize(&PosteriorDraws { records }, 0.95);
        let l = s.mu_ldiff.unwrap();
        let (lo, hi) = l.hpd.unwrap();
        assert!(lo < 1.0 && hi > 10.0);
        assert!(s.rhat_ldiff.unwrap() > 2.0);
        assert_eq!(s.missing_contrast_fraction, 0.0);
        assert!(s.mu_rom.is_none());
    }

    #[test]
    fn rhat_near_one_for_identical_chains() {
        let chain: Vec<f64> = (0..400).map(|i| ((i * 7919) % 400) as f64).collect();
        let r = split_rhat(&[chain.clone(), chain]).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }
}
