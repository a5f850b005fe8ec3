use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SaceError};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of `m`, adding `1e-10 · mean(diag)` to the diagonal on
/// failure and escalating by factors of ten up to `1e-6 · mean(diag)`.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = if n == 0 {
        1.0
    } else {
        m.diagonal().mean().abs().max(f64::MIN_POSITIVE)
    };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += rel * scale;
        }
        if let Some(c) = jittered.cholesky() {
            return Ok(c);
        }
        rel *= 10.0;
    }
    Err(SaceError::CovarianceNotSpd {
        dim: n,
        max_jitter: JITTER_MAX * scale,
    })
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draws `mean + L z` where `covariance = L Lᵀ`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
        return Err(SaceError::DimensionMismatch(format!(
            "mean has length {} but covariance is {}x{}",
            mean.len(),
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    let chol = cholesky_jittered(covariance)?;
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + chol.l() * z)
}

/// Draws from `N(Q⁻¹ b, Q⁻¹)` given precision `Q` and linear term `b`.
/// Returns the draw and the conditional mean.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if precision.nrows() != linear.len() || precision.ncols() != linear.len() {
        return Err(SaceError::DimensionMismatch(format!(
            "linear term has length {} but precision is {}x{}",
            linear.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol = cholesky_jittered(precision)?;
    let mean = chol.solve(linear);
    let z = standard_normal_vector(linear.len(), rng);
    let l = chol.l();
    let offset = l
        .tr_solve_lower_triangular(&z)
        .ok_or(SaceError::CovarianceNotSpd {
            dim: linear.len(),
            max_jitter: JITTER_MAX,
        })?;
    Ok((&mean + offset, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_dist::RngStream;

    #[test]
    fn identity_mean_recovered() {
        let mut rng = RngStream::new(9, 0);
        let mean = DVector::from_vec(vec![3.0, -1.0]);
        let cov = DMatrix::identity(2, 2);
        let n = 100_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += sample_mvn(&mean, &cov, &mut rng).unwrap();
        }
        acc /= n as f64;
        assert!((acc - mean).abs().max() < 0.02);
    }

    #[test]
    fn univariate_variance() {
        let mut rng = RngStream::new(10, 0);
        let mean = DVector::from_vec(vec![0.0]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap()[0])
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - 4.0).abs() < 0.1, "variance {v}");
    }

    #[test]
    fn correlation_recovered() {
        let mut rng = RngStream::new(11, 0);
        let mean = DVector::zeros(2);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let n = 100_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let d = sample_mvn(&mean, &cov, &mut rng).unwrap();
            sxy += d[0] * d[1];
            sxx += d[0] * d[0];
            syy += d[1] * d[1];
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.9).abs() < 0.01, "r = {r}");
    }

    #[test]
    fn precision_form_matches_covariance_form() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let mut rng = RngStream::new(12, 0);
        let (_, mean) = sample_mvn_precision(&q, &b, &mut rng).unwrap();
        let expected = q.clone().try_inverse().unwrap() * &b;
        assert!((mean - &expected).abs().max() < 1e-12);
        let n = 200_000;
        let mut s2 = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let (d, _) = sample_mvn_precision(&q, &b, &mut rng).unwrap();
            let c = d - &expected;
            s2 += &c * c.transpose();
        }
        s2 /= n as f64;
        let cov = q.try_inverse().unwrap();
        assert!((s2 - cov).abs().max() < 0.01);
    }

    #[test]
    fn singular_matrix_needs_jitter_and_indefinite_fails() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_jittered(&singular).is_ok());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_jittered(&indefinite),
            Err(SaceError::CovarianceNotSpd { dim: 2, .. })
        ));
    }
}
