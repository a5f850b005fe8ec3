//! Slow reference implementations for testing: a truncated-series Pólya-Gamma
//! sampler, a two-sample Kolmogorov-Smirnov test, an exhaustive HPD search and
//! unnormalized log-densities of the sampler's targets written in matrix form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::design::{stratum_views, DesignMatrices};
use crate::error::Result;
use crate::gibbs::*;
use crate::math::log1pexp;
use crate::model::{
    admissible_labels, CoefficientPrior, IgPrior, Individual, ModelConfig, ParameterState,
    StratumLabel, TrialData, VarianceComponents,
};

/// `PG(1, c)` as `(1 / 2π²) Σ_{k=1}^{terms} g_k / ((k - 1/2)² + c²/(4π²))`
/// with `g_k ~ Exp(1)`.
pub fn pg_truncated_series<R: Rng + ?Sized>(c: f64, terms: usize, rng: &mut R) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let shift = c * c / (4.0 * pi2);
    let mut s = 0.0;
    for k in 1..=terms {
        let g: f64 = Exp1.sample(rng);
        let h = k as f64 - 0.5;
        s += g / (h * h + shift);
    }
    s / (2.0 * pi2)
}

/// Two-sample KS statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Shortest interval `[x_i, x_j]` over all pairs of sorted draws holding at
/// least `ceil(mass · n)` draws; ties go to the smallest lower end.
pub fn hpd_exhaustive(draws: &[f64], mass: f64) -> (f64, f64) {
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let need = (mass * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..n {
        for j in i..n {
            if j - i + 1 >= need && x[j] - x[i] < best.0 {
                best = (x[j] - x[i], x[i], x[j]);
            }
        }
    }
    (best.1, best.2)
}

/// Fraction of `draws` inside `[lo, hi]`.
pub fn interval_mass(draws: &[f64], (lo, hi): (f64, f64)) -> f64 {
    draws.iter().filter(|x| lo <= **x && **x <= hi).count() as f64 / draws.len() as f64
}

fn coefficient_log_prior(prior: &CoefficientPrior, theta: &[f64]) -> f64 {
    let k = theta.len();
    let (mean, cov) = match prior {
        CoefficientPrior::Isotropic { mean, variance } => (
            DVector::from_element(k, *mean),
            DMatrix::identity(k, k) * *variance,
        ),
        CoefficientPrior::Full { mean, covariance } => (mean.clone(), covariance.clone()),
    };
    let d = DVector::from_column_slice(theta) - mean;
    let sol = cov.lu().solve(&d).expect("invertible prior covariance");
    -0.5 * d.dot(&sol)
}

fn ig_log_prior(p: IgPrior, v: f64) -> f64 {
    -(p.shape + 1.0) * v.ln() - p.rate / v
}

fn normal_re_log(effects: &[f64], var: f64) -> f64 {
    -0.5 * effects.len() as f64 * var.ln()
        - effects.iter().map(|e| e * e).sum::<f64>() / (2.0 * var)
}

/// Spreads compact cluster-period values onto all `IJ` indicator columns.
fn full_cp(dm: &DesignMatrices, compact: &[f64], treated_only: bool) -> DVector<f64> {
    let mut v = DVector::zeros(dm.n_clusters() * dm.n_periods());
    let mut t = 0;
    for c in 0..dm.n_cp() {
        if treated_only {
            if dm.cp_is_treated(c) {
                v[dm.cp_full_column(c) - 1] = compact[t];
                t += 1;
            }
        } else {
            v[dm.cp_full_column(c) - 1] = compact[c];
        }
    }
    v
}

/// Log of the outcome part of the joint posterior of stratum `g` up to a
/// constant: likelihood of the labelled survivors, coefficient prior,
/// random-effect laws and variance priors.
pub fn outcome_log_joint(
    dm: &DesignMatrices,
    config: &ModelConfig,
    state: &ParameterState,
    g: OutcomeStratum,
) -> f64 {
    let (d, theta, xi, gamma, label, s2, s2c, s2cp, prior, treated_only) = match g {
        OutcomeStratum::Always => (
            dm.d_out_11(),
            &state.theta_always,
            &state.xi_always,
            &state.gamma_always,
            StratumLabel::AlwaysSurvivor,
            state.variances.sigma2_always,
            state.variances.sigma2_c_always,
            state.variances.sigma2_cp_always,
            &config.priors.always,
            false,
        ),
        OutcomeStratum::Protected => (
            dm.d_out_10(),
            &state.theta_protected,
            &state.xi_protected,
            &state.gamma_protected,
            StratumLabel::Protected,
            state.variances.sigma2_protected,
            state.variances.sigma2_c_protected,
            state.variances.sigma2_cp_protected,
            &config.priors.protected,
            true,
        ),
    };
    let cp_on = config.outcome_clusterperiod_re;
    let mut mean =
        &d * DVector::from_column_slice(theta) + dm.p_matrix() * DVector::from_column_slice(xi);
    if cp_on {
        mean += dm.l_matrix() * full_cp(dm, gamma, treated_only);
    }
    let mut lp = 0.0;
    let mut n_obs = 0usize;
    for r in 0..dm.n() {
        if dm.survived(r) && state.labels[r] == label {
            n_obs += 1;
            lp -= (dm.log_y(r) - mean[r]).powi(2) / (2.0 * s2);
        }
    }
    lp -= 0.5 * n_obs as f64 * s2.ln();
    lp += coefficient_log_prior(&prior.coefficients, theta);
    lp += normal_re_log(xi, s2c) + ig_log_prior(prior.error, s2) + ig_log_prior(prior.cluster, s2c);
    if cp_on {
        lp += normal_re_log(gamma, s2cp) + ig_log_prior(prior.cluster_period, s2cp);
    }
    lp
}

/// Linear predictors `(z, w)` in matrix form.
pub fn strata_predictors_dense(
    dm: &DesignMatrices,
    config: &ModelConfig,
    state: &ParameterState,
) -> (DVector<f64>, DVector<f64>) {
    let d = dm.d_ps();
    let p = dm.p_matrix();
    let l = dm.l_matrix();
    let build = |theta: &[f64], eta: &[f64], nu: &[f64]| {
        let mut v = &d * DVector::from_column_slice(theta);
        if config.ps_cluster_re {
            v += &p * DVector::from_column_slice(eta);
        }
        if config.ps_clusterperiod_re {
            v += &l * full_cp(dm, nu, false);
        }
        v
    };
    (
        build(&state.theta_z, &state.eta_z, &state.nu_z),
        build(&state.theta_w, &state.eta_w, &state.nu_w),
    )
}

/// Log of the Pólya-Gamma-augmented target of component `comp` given the
/// other component, the labels and `ω`: `Σ[κψ - ωψ²/2]` with
/// `ψ = own - log(1 + e^other)`, plus the component's priors.
pub fn strata_log_joint(
    dm: &DesignMatrices,
    config: &ModelConfig,
    state: &ParameterState,
    comp: StrataComponent,
) -> f64 {
    let (z, w) = strata_predictors_dense(dm, config, state);
    let (own, other, omega, target, theta, eta, nu, t2c, t2cp, prior) = match comp {
        StrataComponent::Z => (
            z,
            w,
            &state.omega_z,
            StratumLabel::AlwaysSurvivor,
            &state.theta_z,
            &state.eta_z,
            &state.nu_z,
            state.variances.tau2_c_z,
            state.variances.tau2_cp_z,
            &config.priors.z,
        ),
        StrataComponent::W => (
            w,
            z,
            &state.omega_w,
            StratumLabel::Protected,
            &state.theta_w,
            &state.eta_w,
            &state.nu_w,
            state.variances.tau2_c_w,
            state.variances.tau2_cp_w,
            &config.priors.w,
        ),
    };
    let mut lp = 0.0;
    for r in 0..dm.n() {
        let psi = own[r] - log1pexp(other[r]);
        let kappa = if state.labels[r] == target { 0.5 } else { -0.5 };
        lp += kappa * psi - 0.5 * omega[r] * psi * psi;
    }
    lp += coefficient_log_prior(&prior.coefficients, theta);
    if config.ps_cluster_re {
        lp += normal_re_log(eta, t2c) + ig_log_prior(prior.cluster, t2c);
    }
    if config.ps_clusterperiod_re {
        lp += normal_re_log(nu, t2cp) + ig_log_prior(prior.cluster_period, t2cp);
    }
    lp
}

/// Probability that row `r` belongs to the first admissible stratum, from the
/// unaugmented multinomial-logit likelihood and the outcome densities.
pub fn membership_probability_bruteforce(
    dm: &DesignMatrices,
    config: &ModelConfig,
    state: &ParameterState,
    r: usize,
) -> Option<f64> {
    let (z, w) = strata_predictors_dense(dm, config, state);
    let denom = 1.0 + z[r].exp() + w[r].exp();
    let (p11, p10, p00) = (z[r].exp() / denom, w[r].exp() / denom, 1.0 / denom);
    match (dm.treatment(r), dm.survived(r)) {
        (true, true) => {
            let dens = |g| {
                let mut s = state.clone();
                s.labels = vec![StratumLabel::NeverSurvivor; dm.n()];
                s.labels[r] = match g {
                    OutcomeStratum::Always => StratumLabel::AlwaysSurvivor,
                    OutcomeStratum::Protected => StratumLabel::Protected,
                };
                let with = outcome_log_joint(dm, config, &s, g);
                s.labels[r] = StratumLabel::NeverSurvivor;
                (with - outcome_log_joint(dm, config, &s, g)).exp()
            };
            let a = p11 * dens(OutcomeStratum::Always);
            let b = p10 * dens(OutcomeStratum::Protected);
            Some(a / (a + b))
        }
        (false, false) => Some(p10 / (p10 + p00)),
        _ => None,
    }
}

/// Precision `Q` and linear term `b` of a quadratic log-density
/// `f(x) = -xᵀQx/2 + bᵀx + c`, read off by central differences at the origin.
/// Exact up to rounding when `f` is quadratic.
pub fn quadratic_from_log_density(
    dim: usize,
    f: impl Fn(&[f64]) -> f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let unit = |i: usize, s: f64, x: &mut Vec<f64>| x[i] += s;
    let f0 = f(&vec![0.0; dim]);
    let mut q = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for i in 0..dim {
        let mut xp = vec![0.0; dim];
        unit(i, 1.0, &mut xp);
        let mut xm = vec![0.0; dim];
        unit(i, -1.0, &mut xm);
        let (fp, fm) = (f(&xp), f(&xm));
        q[(i, i)] = -(fp + fm - 2.0 * f0);
        b[i] = (fp - fm) / 2.0;
        for j in 0..i {
            let eval = |si: f64, sj: f64| {
                let mut x = vec![0.0; dim];
                x[i] += si;
                x[j] += sj;
                f(&x)
            };
            let v = -(eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / 4.0;
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    (q, b)
}

/// Shape and rate of an inverse-gamma log-density
/// `g(v) = -(shape + 1) ln v - rate / v + c`, from evaluations at `v ∈ {s, 2s, 4s}`.
pub fn inverse_gamma_from_log_density(scale: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
    let (g1, g2, g4) = (g(scale), g(2.0 * scale), g(4.0 * scale));
    let rate = -4.0 * scale * ((g1 - g2) - (g2 - g4));
    let shape = (g2 - g4 + rate / (4.0 * scale)) / std::f64::consts::LN_2 - 1.0;
    (shape, rate)
}

/// Which quantity a [`ConditionalCheck`] compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Gaussian,
    InverseGamma,
    Membership,
}

/// Agreement between one analytic conditional and its oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCheck {
    pub name: String,
    pub kind: CheckKind,
    /// Max-norm relative error of mean and covariance (Gaussian), of shape and
    /// rate recovered from the log-density (inverse gamma), or of the label
    /// probability (membership).
    pub rel_error: f64,
    /// Inverse gamma only: shape equals `prior shape + count/2` bit for bit and
    /// rate equals `prior rate + sum of squares/2` to rounding.
    pub formula_match: Option<bool>,
}

/// A 2-cluster, 12-individual trial with one covariate and a fixed state:
/// labels, Pólya-Gamma latents, random effects and variances all set by hand.
pub fn tiny_instance() -> (TrialData, ParameterState) {
    let x = [
        0.3, -1.1, 0.8, 1.7, -0.4, 0.2, -0.9, 0.5, 1.2, -0.2, 0.6, -1.5,
    ];
    let survived = [
        true, true, false, true, false, true, true, false, true, false, true, true,
    ];
    let y = [2.1, 0.7, 0.0, 1.4, 0.0, 3.3, 0.9, 0.0, 1.8, 0.0, 2.6, 0.5];
    let mut individuals = Vec::new();
    for r in 0..12 {
        let cluster = r / 6;
        let period = (r / 3) % 2;
        let treatment = (cluster == 0) == (period == 0);
        individuals.push(Individual {
            cluster_id: cluster + 1,
            period: period + 1,
            treatment,
            survived: survived[r],
            outcome: survived[r].then_some(y[r]),
            covariates: vec![x[r]],
        });
    }
    let data = TrialData {
        individuals,
        n_clusters: 2,
        n_periods: 2,
        covariate_names: vec!["x".into()],
    };
    let mut flip = false;
    let labels = data
        .individuals
        .iter()
        .map(|ind| {
            let (first, second) = admissible_labels(ind.treatment, ind.survived);
            match second {
                Some(second) => {
                    flip = !flip;
                    if flip {
                        first
                    } else {
                        second
                    }
                }
                None => first,
            }
        })
        .collect();
    let seq = |n: usize, a: f64, b: f64| (0..n).map(|i| a + b * i as f64).collect::<Vec<_>>();
    let state = ParameterState {
        theta_always: vec![0.4, -0.3, 0.2, 0.1, -0.05],
        theta_protected: vec![0.6, 0.15, -0.2],
        theta_z: vec![0.1, 0.3, -0.2],
        theta_w: vec![-0.2, -0.1, 0.25],
        xi_always: vec![0.12, -0.07],
        xi_protected: vec![-0.05, 0.09],
        gamma_always: vec![0.03, -0.02, 0.05, -0.04],
        gamma_protected: vec![0.02, -0.06],
        eta_z: vec![0.2, -0.15],
        eta_w: vec![-0.1, 0.05],
        nu_z: vec![0.04, -0.03, 0.02, 0.01],
        nu_w: vec![-0.02, 0.03, 0.05, -0.01],
        variances: VarianceComponents {
            sigma2_always: 0.8,
            sigma2_protected: 1.3,
            sigma2_c_always: 0.05,
            sigma2_c_protected: 0.07,
            sigma2_cp_always: 0.02,
            sigma2_cp_protected: 0.03,
            tau2_c_z: 0.2,
            tau2_c_w: 0.15,
            tau2_cp_z: 0.04,
            tau2_cp_w: 0.06,
        },
        omega_z: seq(12, 0.11, 0.013),
        omega_w: seq(12, 0.23, -0.009),
        labels,
    };
    (data, state)
}

/// Zeroes the random effects a configuration leaves out, as a chain does.
pub fn zero_disabled_effects(config: &ModelConfig, state: &mut ParameterState) {
    let zero = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = 0.0);
    if !config.outcome_clusterperiod_re {
        zero(&mut state.gamma_always);
        zero(&mut state.gamma_protected);
    }
    if !config.ps_cluster_re {
        zero(&mut state.eta_z);
        zero(&mut state.eta_w);
    }
    if !config.ps_clusterperiod_re {
        zero(&mut state.nu_z);
        zero(&mut state.nu_w);
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

fn gaussian_rel_error(
    q_a: &DMatrix<f64>,
    b_a: &DVector<f64>,
    q_o: &DMatrix<f64>,
    b_o: &DVector<f64>,
) -> f64 {
    let solve = |q: &DMatrix<f64>, b: &DVector<f64>| {
        let ch = q.clone().cholesky().expect("positive definite precision");
        (
            DMatrix::from_column_slice(b.len(), 1, ch.solve(b).as_slice()),
            ch.inverse(),
        )
    };
    let (m_a, c_a) = solve(q_a, b_a);
    let (m_o, c_o) = solve(q_o, b_o);
    rel(&m_a, &m_o).max(rel(&c_a, &c_o))
}

fn block_mut<'s>(state: &'s mut ParameterState, name: &str) -> &'s mut Vec<f64> {
    match name {
        "theta_always" => &mut state.theta_always,
        "theta_protected" => &mut state.theta_protected,
        "xi_always" => &mut state.xi_always,
        "xi_protected" => &mut state.xi_protected,
        "gamma_always" => &mut state.gamma_always,
        "gamma_protected" => &mut state.gamma_protected,
        "theta_z" => &mut state.theta_z,
        "theta_w" => &mut state.theta_w,
        "eta_z" => &mut state.eta_z,
        "eta_w" => &mut state.eta_w,
        "nu_z" => &mut state.nu_z,
        "nu_w" => &mut state.nu_w,
        _ => unreachable!("unknown block {name}"),
    }
}

fn variance_mut<'s>(state: &'s mut ParameterState, name: &str) -> &'s mut f64 {
    let v = &mut state.variances;
    match name {
        "sigma2_always" => &mut v.sigma2_always,
        "sigma2_protected" => &mut v.sigma2_protected,
        "sigma2_c_always" => &mut v.sigma2_c_always,
        "sigma2_c_protected" => &mut v.sigma2_c_protected,
        "sigma2_cp_always" => &mut v.sigma2_cp_always,
        "sigma2_cp_protected" => &mut v.sigma2_cp_protected,
        "tau2_c_z" => &mut v.tau2_c_z,
        "tau2_c_w" => &mut v.tau2_c_w,
        "tau2_cp_z" => &mut v.tau2_cp_z,
        "tau2_cp_w" => &mut v.tau2_cp_w,
        _ => unreachable!("unknown variance {name}"),
    }
}

/// Compares every enabled conditional of `config` at `state` with the
/// oracle log-densities. The state's labels and latents are held fixed.
pub fn check_conditionals(
    dm: &DesignMatrices,
    config: &ModelConfig,
    state: &ParameterState,
) -> Result<Vec<ConditionalCheck>> {
    use OutcomeStratum::{Always, Protected};
    use StrataComponent::{W, Z};
    let ctx = GibbsContext::new(dm, config)?;
    let views = stratum_views(dm, &state.labels);
    let mut out = Vec::new();

    let target = |block: &'static str| -> Box<dyn Fn(&ParameterState) -> f64 + '_> {
        // blocks and variances are routed to their log-density by name suffix
        let g = match block {
            b if b.ends_with("_always") => Some(Always),
            b if b.ends_with("_protected") => Some(Protected),
            _ => None,
        };
        let comp = if block.ends_with("_z") { Z } else { W };
        match g {
            Some(g) => Box::new(move |s| outcome_log_joint(dm, config, s, g)),
            None => Box::new(move |s| strata_log_joint(dm, config, s, comp)),
        }
    };

    let mut gaussian = |name: &'static str, q: DMatrix<f64>, b: DVector<f64>| {
        let f = target(name);
        let dim = b.len();
        let (q_o, b_o) = quadratic_from_log_density(dim, |x| {
            let mut s = state.clone();
            block_mut(&mut s, name).copy_from_slice(x);
            f(&s)
        });
        out.push(ConditionalCheck {
            name: name.into(),
            kind: CheckKind::Gaussian,
            rel_error: gaussian_rel_error(&q, &b, &q_o, &b_o),
            formula_match: None,
        });
    };
    let diag = |d: DiagonalGaussian| {
        (
            DMatrix::from_diagonal(&DVector::from_vec(d.precision)),
            DVector::from_vec(d.linear),
        )
    };

    let c = outcome_coefficients_conditional(&ctx, state, &views, Always);
    gaussian("theta_always", c.precision, c.linear);
    let c = outcome_coefficients_conditional(&ctx, state, &views, Protected);
    gaussian("theta_protected", c.precision, c.linear);
    let (q, b) = diag(outcome_cluster_effects_conditional(
        &ctx, state, &views, Always,
    ));
    gaussian("xi_always", q, b);
    let (q, b) = diag(outcome_cluster_effects_conditional(
        &ctx, state, &views, Protected,
    ));
    gaussian("xi_protected", q, b);
    if config.outcome_clusterperiod_re {
        let (q, b) = diag(outcome_cp_effects_conditional(&ctx, state, &views, Always));
        gaussian("gamma_always", q, b);
        let (q, b) = diag(outcome_cp_effects_conditional(
            &ctx, state, &views, Protected,
        ));
        gaussian("gamma_protected", q, b);
    }
    for (comp, th, et, nu) in [
        (Z, "theta_z", "eta_z", "nu_z"),
        (W, "theta_w", "eta_w", "nu_w"),
    ] {
        let c = strata_coefficients_conditional(&ctx, state, comp);
        gaussian(th, c.precision, c.linear);
        if config.ps_cluster_re {
            let (q, b) = diag(strata_cluster_effects_conditional(&ctx, state, comp));
            gaussian(et, q, b);
        }
        if config.ps_clusterperiod_re {
            let (q, b) = diag(strata_cp_effects_conditional(&ctx, state, comp));
            gaussian(nu, q, b);
        }
    }

    let sumsq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let resid_ss = |g| sumsq(&outcome_residuals(&ctx, state, &views, g));
    let pr = &config.priors;
    let mut inv_gamma =
        |name: &'static str, got: InvGammaParams, prior: IgPrior, count: usize, ss: f64| {
            let f = target(name);
            let scale = got.rate / got.shape;
            let (shape_o, rate_o) = inverse_gamma_from_log_density(scale, |v| {
                let mut s = state.clone();
                *variance_mut(&mut s, name) = v;
                f(&s)
            });
            let rel_error =
                ((got.shape - shape_o).abs() / shape_o).max((got.rate - rate_o).abs() / rate_o);
            let want_rate = prior.rate + ss / 2.0;
            let formula = got.shape == prior.shape + count as f64 / 2.0
                && (got.rate - want_rate).abs() <= 1e-12 * want_rate;
            out.push(ConditionalCheck {
                name: name.into(),
                kind: CheckKind::InverseGamma,
                rel_error,
                formula_match: Some(formula),
            });
        };
    inv_gamma(
        "sigma2_always",
        outcome_error_variance_conditional(&ctx, state, &views, Always),
        pr.always.error,
        views.n_y11(),
        resid_ss(Always),
    );
    inv_gamma(
        "sigma2_protected",
        outcome_error_variance_conditional(&ctx, state, &views, Protected),
        pr.protected.error,
        views.n_y10(),
        resid_ss(Protected),
    );
    inv_gamma(
        "sigma2_c_always",
        outcome_cluster_variance_conditional(&ctx, state, Always),
        pr.always.cluster,
        dm.n_clusters(),
        sumsq(&state.xi_always),
    );
    inv_gamma(
        "sigma2_c_protected",
        outcome_cluster_variance_conditional(&ctx, state, Protected),
        pr.protected.cluster,
        dm.n_clusters(),
        sumsq(&state.xi_protected),
    );
    if config.outcome_clusterperiod_re {
        inv_gamma(
            "sigma2_cp_always",
            outcome_cp_variance_conditional(&ctx, state, Always),
            pr.always.cluster_period,
            dm.n_cp(),
            sumsq(&state.gamma_always),
        );
        inv_gamma(
            "sigma2_cp_protected",
            outcome_cp_variance_conditional(&ctx, state, Protected),
            pr.protected.cluster_period,
            dm.n_treated_cp(),
            sumsq(&state.gamma_protected),
        );
    }
    for (comp, prior, eta, nu, c_name, cp_name) in [
        (Z, &pr.z, &state.eta_z, &state.nu_z, "tau2_c_z", "tau2_cp_z"),
        (W, &pr.w, &state.eta_w, &state.nu_w, "tau2_c_w", "tau2_cp_w"),
    ] {
        if config.ps_cluster_re {
            let got = strata_cluster_variance_conditional(&ctx, state, comp);
            inv_gamma(c_name, got, prior.cluster, dm.n_clusters(), sumsq(eta));
        }
        if config.ps_clusterperiod_re {
            let got = strata_cp_variance_conditional(&ctx, state, comp);
            inv_gamma(cp_name, got, prior.cluster_period, dm.n_cp(), sumsq(nu));
        }
    }

    let probs = membership_probabilities(&ctx, state)?;
    let mut worst: f64 = 0.0;
    for (r, p) in probs.iter().enumerate() {
        let oracle = membership_probability_bruteforce(dm, config, state, r);
        match (p, oracle) {
            (MembershipProbability::Bernoulli { p_first, .. }, Some(o)) => {
                worst = worst.max((p_first - o).abs() / o.max(f64::MIN_POSITIVE));
            }
            (MembershipProbability::Forced(_), None) => {}
            _ => worst = f64::INFINITY,
        }
    }
    out.push(ConditionalCheck {
        name: "labels".into(),
        kind: CheckKind::Membership,
        rel_error: worst,
        formula_match: None,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::pg1_mean;
    use crate::rand_dist::RngStream;

    #[test]
    fn series_mean() {
        let mut rng = RngStream::new(1, 0);
        let n = 4000;
        let m: f64 = (0..n)
            .map(|_| pg_truncated_series(1.0, 500, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((m - pg1_mean(1.0)).abs() < 0.01);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b).1 < 1e-6);
        assert!(ks_two_sample(&a, &a).1 > 0.99);
    }

    #[test]
    fn quadratic_recovery_is_exact() {
        let f = |x: &[f64]| {
            -0.5 * (2.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 3.0 * x[1] * x[1]) + x[0] - 4.0 * x[1]
                + 7.0
        };
        let (q, b) = quadratic_from_log_density(2, f);
        assert!((q[(0, 0)] - 2.0).abs() < 1e-12 && (q[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((q[(1, 1)] - 3.0).abs() < 1e-12);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn conditionals_match_on_tiny_instance() {
        let (data, state) = tiny_instance();
        let dm = crate::design::build_designs(&data).unwrap();
        let config = ModelConfig::for_variant(crate::model::ModelVariant::A);
        let checks = check_conditionals(&dm, &config, &state).unwrap();
        assert_eq!(checks.len(), 12 + 10 + 1);
        for c in &checks {
            assert!(c.rel_error < 1e-6, "{c:?}");
            assert_ne!(c.formula_match, Some(false), "{c:?}");
        }
    }

    #[test]
    fn mis_scaled_precision_is_flagged() {
        let (data, state) = tiny_instance();
        let dm = crate::design::build_designs(&data).unwrap();
        let config = ModelConfig::for_variant(crate::model::ModelVariant::M1);
        let (q, b) = quadratic_from_log_density(dm.k_out10(), |x| {
            let mut s = state.clone();
            s.theta_protected.copy_from_slice(x);
            outcome_log_joint(&dm, &config, &s, OutcomeStratum::Protected)
        });
        assert!(gaussian_rel_error(&q, &b, &q, &b) < 1e-15);
        assert!(gaussian_rel_error(&(&q * 1.01), &b, &q, &b) > 1e-3);
    }

    #[test]
    fn inverse_gamma_recovery() {
        let (shape, rate) =
            inverse_gamma_from_log_density(1.0, |v| -(3.5 + 1.0) * v.ln() - 2.25 / v + 1.0);
        assert!((shape - 3.5).abs() < 1e-12 && (rate - 2.25).abs() < 1e-12);
    }
}
