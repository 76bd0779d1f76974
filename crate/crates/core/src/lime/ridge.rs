use super::perturb::PerturbationMatrix;
use crate::error::{Error, Result};

/// Weighted ridge surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination on the fitted sample.
    pub r2: f64,
}

/// Minimizes `sum_i w_i (y_i - b0 - z_i . b)^2 + lambda |b|^2` with an
/// unpenalized intercept, via the normal equations of the weighted,
/// centred system and a Cholesky solve.
pub fn fit_weighted_ridge(z: &PerturbationMatrix, y: &[f64], w: &[f64], lambda: f64) -> Result<RidgeFit> {
    let (n, d) = (z.rows(), z.dim());
    if y.len() != n || w.len() != n {
        return Err(Error::Dimension(format!(
            "{n} design rows, {} targets, {} weights",
            y.len(),
            w.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Data("sample weights must be finite and non-negative".into()));
    }
    let w_sum: f64 = w.iter().sum();
    if w_sum <= 0.0 {
        return Err(Error::Data("sample weights sum to zero".into()));
    }

    let mut z_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
        for (m, &v) in z_mean.iter_mut().zip(row) {
            *m += wi * f64::from(v);
        }
        y_mean += wi * yi;
    }
    z_mean.iter_mut().for_each(|m| *m /= w_sum);
    y_mean /= w_sum;

    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut centred = vec![0.0; d];
    for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
        for ((c, &v), m) in centred.iter_mut().zip(row).zip(&z_mean) {
            *c = f64::from(v) - m;
        }
        let yc = yi - y_mean;
        for a in 0..d {
            let wa = wi * centred[a];
            rhs[a] += wa * yc;
            for b in 0..=a {
                gram[a * d + b] += wa * centred[b];
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] += lambda;
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
    }

    let coefficients = cholesky_solve(&mut gram, d, &rhs).ok_or_else(|| {
        Error::Numerical(if lambda == 0.0 {
            "surrogate normal equations are singular; use a ridge penalty lambda > 0".into()
        } else {
            "surrogate normal equations are not positive definite".into()
        })
    })?;
    let intercept = y_mean - z_mean.iter().zip(&coefficients).map(|(m, b)| m * b).sum::<f64>();

    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
        let fitted = intercept
            + row
                .iter()
                .zip(&coefficients)
                .map(|(&v, b)| f64::from(v) * b)
                .sum::<f64>();
        ss_res += wi * (yi - fitted).powi(2);
        ss_tot += wi * (yi - y_mean).powi(2);
    }
    // a target that is constant up to rounding is fitted perfectly by the
    // intercept alone
    let flat = 1e-20 * y.iter().zip(w).map(|(yi, wi)| wi * yi * yi).sum::<f64>().max(f64::MIN_POSITIVE);
    let r2 = if ss_tot > flat {
        1.0 - ss_res / ss_tot
    } else if ss_res <= flat {
        1.0
    } else {
        0.0
    };

    Ok(RidgeFit {
        coefficients,
        intercept,
        r2,
    })
}

/// Solves `A x = b` for symmetric positive-definite `A` (overwritten with
/// its Cholesky factor). `None` if a pivot collapses.
fn cholesky_solve(a: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(1.0, f64::max);
    let tol = 1e-12 * scale;
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > tol) {
            return None;
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[i * n + k] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= a[k * n + i] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lime::perturb::sample_perturbations;

    #[test]
    fn constant_target() {
        let z = sample_perturbations(4, 40, 1).unwrap();
        let fit = fit_weighted_ridge(&z, &[0.3; 40], &[1.0; 40], 0.0).unwrap();
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!((fit.intercept - 0.3).abs() < 1e-12);
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn two_point_line() {
        let z = PerturbationMatrix::from_rows(&[vec![0], vec![1]]).unwrap();
        let fit = fit_weighted_ridge(&z, &[0.2, 0.8], &[1.0, 1.0], 0.0).unwrap();
        assert!((fit.coefficients[0] - 0.6).abs() < 1e-12);
        assert!((fit.intercept - 0.2).abs() < 1e-12);
    }

    #[test]
    fn heavy_penalty_shrinks_to_weighted_mean() {
        let z = sample_perturbations(5, 60, 2).unwrap();
        let y: Vec<f64> = (0..60).map(|i| (i % 7) as f64 / 7.0).collect();
        let w: Vec<f64> = (0..60).map(|i| 1.0 + (i % 3) as f64).collect();
        let fit = fit_weighted_ridge(&z, &y, &w, 1e9).unwrap();
        let norm = fit.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm < 1e-6);
        let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!((fit.intercept - mean).abs() < 1e-6);
    }

    #[test]
    fn singular_without_penalty() {
        // identical columns
        let rows: Vec<Vec<u8>> = (0..10).map(|i| vec![(i % 2) as u8, (i % 2) as u8]).collect();
        let z = PerturbationMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = fit_weighted_ridge(&z, &y, &[1.0; 10], 0.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("lambda > 0")));
        assert!(fit_weighted_ridge(&z, &y, &[1.0; 10], 0.5).is_ok());
    }

    #[test]
    fn recovers_exact_linear_model() {
        let z = sample_perturbations(6, 200, 5).unwrap();
        let beta = [0.5, -1.0, 0.0, 2.0, 0.25, -0.75];
        let y: Vec<f64> = z
            .iter()
            .map(|r| 0.1 + r.iter().zip(&beta).map(|(&v, b)| f64::from(v) * b).sum::<f64>())
            .collect();
        let w: Vec<f64> = z.iter().map(|r| crate::lime::proximity_weight(r, 0.25).unwrap()).collect();
        let fit = fit_weighted_ridge(&z, &y, &w, 0.0).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((fit.intercept - 0.1).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }
}
