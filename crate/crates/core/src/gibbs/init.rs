use std::f64::consts::PI;

use rand::Rng;

use crate::design::DesignMatrices;
use crate::error::{Result, SaceError};
use crate::model::{initial_strata, ModelConfig, ParameterState, TrialData, VarianceComponents};
use crate::rand_dist::standard_normal_vector;

/// Latent-scale ICC assumed when initializing strata random-effect variances.
const ICC_GUESS: f64 = 0.05;
/// Half-width of the multiplicative band around each variance benchmark.
const BAND: f64 = 0.5;

/// Moment-based centers for the initial variance components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBenchmarks {
    /// Pooled within-cluster-period variance of logged outcomes.
    pub sigma2: f64,
    /// Variance of cluster means of logged outcomes.
    pub sigma2_c: f64,
    /// Variance of cluster-period means around their cluster means.
    pub sigma2_cp: f64,
    /// `ICC · (π²/3) / (1 - ICC)` at an ICC of 0.05.
    pub tau2: f64,
}

/// Closed-form moment decomposition of the observed logged outcomes.
pub fn variance_benchmarks(dm: &DesignMatrices) -> Result<VarianceBenchmarks> {
    let i_count = dm.n_clusters();
    let n_cp = dm.n_cp();
    let mut c_sum = vec![0.0; i_count];
    let mut c_n = vec![0usize; i_count];
    let mut cp_sum = vec![0.0; n_cp];
    let mut cp_n = vec![0usize; n_cp];
    let mut total_n = 0usize;
    let mut total_sum = 0.0;
    for r in 0..dm.n() {
        if !dm.survived(r) {
            continue;
        }
        let y = dm.log_y(r);
        c_sum[dm.cluster(r)] += y;
        c_n[dm.cluster(r)] += 1;
        cp_sum[dm.cp(r)] += y;
        cp_n[dm.cp(r)] += 1;
        total_sum += y;
        total_n += 1;
    }
    if total_n == 0 {
        return Err(SaceError::NoOutcomeInformation);
    }
    let grand = total_sum / total_n as f64;
    let c_mean: Vec<f64> = c_sum
        .iter()
        .zip(&c_n)
        .map(|(s, n)| if *n > 0 { s / *n as f64 } else { f64::NAN })
        .collect();
    let cp_mean: Vec<f64> = cp_sum
        .iter()
        .zip(&cp_n)
        .map(|(s, n)| if *n > 0 { s / *n as f64 } else { f64::NAN })
        .collect();

    let mut total_ss = 0.0;
    let mut within_ss = 0.0;
    for r in 0..dm.n() {
        if dm.survived(r) {
            let y = dm.log_y(r);
            total_ss += (y - grand).powi(2);
            within_ss += (y - cp_mean[dm.cp(r)]).powi(2);
        }
    }
    let total_var = if total_n > 1 {
        total_ss / (total_n - 1) as f64
    } else {
        1.0
    };
    let nonempty_cp = cp_n.iter().filter(|n| **n > 0).count();
    let sigma2 = if total_n > nonempty_cp {
        within_ss / (total_n - nonempty_cp) as f64
    } else {
        total_var
    };

    let sample_var = |xs: &[f64]| -> f64 {
        if xs.len() < 2 {
            return f64::NAN;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let cm: Vec<f64> = c_mean.iter().copied().filter(|x| x.is_finite()).collect();
    let sigma2_c = sample_var(&cm);
    let dev: Vec<f64> = (0..n_cp)
        .filter(|j| cp_n[*j] > 0)
        .map(|j| cp_mean[j] - c_mean[dm.cp_cluster(j)])
        .collect();
    let sigma2_cp = if dev.len() < 2 {
        f64::NAN
    } else {
        dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64
    };

    let scale = if total_var.is_finite() && total_var > 0.0 {
        total_var
    } else {
        1.0
    };
    let floor = (1e-2 * scale).max(1e-6);
    let positive = |x: f64| if x.is_finite() && x > floor { x } else { floor };
    Ok(VarianceBenchmarks {
        sigma2: positive(sigma2),
        sigma2_c: positive(sigma2_c),
        sigma2_cp: positive(sigma2_cp),
        tau2: ICC_GUESS * (PI * PI / 3.0) / (1.0 - ICC_GUESS),
    })
}

fn banded<R: Rng + ?Sized>(center: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    center * ((1.0 - BAND) + 2.0 * BAND * u)
}

/// Starting state: zero random effects, `N(0, I)` coefficients, banded
/// moment-based variances, `ω = 1/4` and labels from [`initial_strata`].
pub fn init_state<R: Rng + ?Sized>(
    data: &TrialData,
    dm: &DesignMatrices,
    _config: &ModelConfig,
    rng: &mut R,
) -> Result<ParameterState> {
    let bench = variance_benchmarks(dm)?;
    let labels = initial_strata(data, rng);
    let theta_always = standard_normal_vector(dm.k_out11(), rng)
        .as_slice()
        .to_vec();
    let theta_protected = standard_normal_vector(dm.k_out10(), rng)
        .as_slice()
        .to_vec();
    let theta_z = standard_normal_vector(dm.k_ps(), rng).as_slice().to_vec();
    let theta_w = standard_normal_vector(dm.k_ps(), rng).as_slice().to_vec();
    let variances = VarianceComponents {
        sigma2_always: banded(bench.sigma2, rng),
        sigma2_protected: banded(bench.sigma2, rng),
        sigma2_c_always: banded(bench.sigma2_c, rng),
        sigma2_c_protected: banded(bench.sigma2_c, rng),
        sigma2_cp_always: banded(bench.sigma2_cp, rng),
        sigma2_cp_protected: banded(bench.sigma2_cp, rng),
        tau2_c_z: banded(bench.tau2, rng),
        tau2_c_w: banded(bench.tau2, rng),
        tau2_cp_z: banded(bench.tau2, rng),
        tau2_cp_w: banded(bench.tau2, rng),
    };
    let i_count = dm.n_clusters();
    Ok(ParameterState {
        theta_always,
        theta_protected,
        theta_z,
        theta_w,
        xi_always: vec![0.0; i_count],
        xi_protected: vec![0.0; i_count],
        gamma_always: vec![0.0; dm.n_cp()],
        gamma_protected: vec![0.0; dm.n_treated_cp()],
        eta_z: vec![0.0; i_count],
        eta_w: vec![0.0; i_count],
        nu_z: vec![0.0; dm.n_cp()],
        nu_w: vec![0.0; dm.n_cp()],
        variances,
        omega_z: vec![0.25; dm.n()],
        omega_w: vec![0.25; dm.n()],
        labels,
    })
}
