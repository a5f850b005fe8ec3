//! Pólya-Gamma `PG(1, c)` draws by Devroye's alternating-series method.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Result, SaceError};
use statrs::function::erf::erfc;

use crate::math::log_norm_cdf;

const TRUNC: f64 = 0.64;

/// Draws from `PG(1, c)`. The distribution depends on `c` only through `|c|`.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    if !c.is_finite() {
        return Err(SaceError::InvalidTilt(c));
    }
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_right = mass_texpon(z, fz);

    loop {
        let x = if rng.random::<f64>() < p_right {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };

        let series = Series::new(x);
        let mut s = series.coef(0);
        let y = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series.coef(n);
                if y <= s {
                    return Ok(0.25 * x);
                }
            } else {
                s += series.coef(n);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability of proposing from the exponential tail piece.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let qdivp = if z < 10.0 {
        let phi = |x: f64| 0.5 * erfc(-x / SQRT_2);
        let ez = z.exp();
        4.0 / PI * fz * (fz * t).exp() * (phi(b) / ez + ez * phi(a))
    } else {
        let x0 = fz.ln() + fz * t;
        let xb = x0 - z + log_norm_cdf(b);
        let xa = x0 + z + log_norm_cdf(a);
        4.0 / PI * (xb.exp() + xa.exp())
    };
    1.0 / (1.0 + qdivp)
}

/// Inverse Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let r = TRUNC;
    let mu = 1.0 / z;
    if mu > r {
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / r {
                    let d = 1.0 + r * e1;
                    break r / (d * d);
                }
            };
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let my = mu * y;
            let mut x = mu + 0.5 * mu * my - 0.5 * mu * (4.0 * my + my * my).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= r {
                return x;
            }
        }
    }
}

/// Piecewise coefficients `a_n(x)` of the alternating series for `J*(1, 0)`.
struct Series {
    x: f64,
    log_base: f64,
}

impl Series {
    fn new(x: f64) -> Self {
        let log_base = if x > TRUNC {
            0.0
        } else {
            1.5 * (2.0 / (PI * x)).ln()
        };
        Series { x, log_base }
    }

    fn coef(&self, n: u32) -> f64 {
        let k = n as f64 + 0.5;
        if self.x > TRUNC {
            PI * k * (-0.5 * k * k * PI * PI * self.x).exp()
        } else {
            (self.log_base + (PI * k).ln() - 2.0 * k * k / self.x).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{pg1_mean, pg1_variance};
    use crate::rand_dist::RngStream;

    #[test]
    fn rejects_non_finite_tilt() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_pg1(f64::NAN, &mut rng),
            Err(SaceError::InvalidTilt(_))
        ));
        assert!(matches!(
            sample_pg1(f64::INFINITY, &mut rng),
            Err(SaceError::InvalidTilt(_))
        ));
    }

    #[test]
    fn moments_at_moderate_sample_size() {
        let mut rng = RngStream::new(5, 1);
        for c in [0.0, 0.5, 1.0, 2.0, 5.0, 20.0, 200.0] {
            let n = 100_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_pg1(c, &mut rng).unwrap()).collect();
            assert!(draws.iter().all(|x| *x > 0.0 && x.is_finite()));
            let mean = draws.iter().sum::<f64>() / n as f64;
            let se = (pg1_variance(c) / n as f64).sqrt();
            assert!(
                (mean - pg1_mean(c)).abs() < 4.0 * se,
                "c={c}: {mean} vs {}",
                pg1_mean(c)
            );
        }
    }

    #[test]
    fn tail_mass_is_a_probability() {
        for z in [0.0, 0.1, 1.0, 9.999, 10.0, 100.0, 1e4] {
            let fz = PI * PI / 8.0 + 0.5 * z * z;
            let p = mass_texpon(z, fz);
            assert!((0.0..=1.0).contains(&p), "z={z} p={p}");
        }
    }

    #[test]
    fn tail_mass_is_continuous_across_branches() {
        let f = |z: f64| mass_texpon(z, PI * PI / 8.0 + 0.5 * z * z);
        assert!((f(10.0 - 1e-9) - f(10.0)).abs() < 1e-9);
    }
}
