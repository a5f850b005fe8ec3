//! Overflow-safe scalar helpers.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

/// `log(1 + exp(x))` without overflow for large `x` or loss of precision for very negative `x`.
pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sum_i exp(x_i))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the standard normal CDF.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < -30.0 {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    } else {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    }
}

/// Log-density of `N(mean, var)` at `x`.
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI).ln() + var.ln() + d * d / var)
}

/// Mean of `PG(1, c)`: `tanh(c/2) / (2c)`, with limit `1/4` at zero.
pub fn pg1_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Variance of `PG(1, c)`, with limit `1/24` at zero.
pub fn pg1_variance(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        1.0 / 24.0 - c * c / 120.0
    } else {
        (c.sinh() - c) / (4.0 * c.powi(3) * (0.5 * c).cosh().powi(2))
    }
}
