//! Kernel ridge regression, exact and through a sampled embedding, plus the
//! closed-form fixed-design risk used to compare the two.

use nalgebra::{DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{
    check_psd, psd_rank, shifted_cholesky_solve, spectral_approx_check_gram, statistical_dimension, DenseMatrix,
};
use crate::poly::poly_embed_out_of_sample;
use crate::sampler::SamplingMatrix;
use crate::sparse::SparseDataMatrix;
use crate::taylor::taylor_embed_out_of_sample;

/// Relative residual the solves are expected to reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KrrMode {
    /// `f(x) = sum_j k(x_j, x) alpha_j`.
    Exact { alpha: Vec<f64> },
    /// `f(x) = <w, Pi phi(x)>`.
    Approximate { w: Vec<f64>, sampler: SamplingMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub mode: KrrMode,
    pub lambda: f64,
    /// Ridge actually used by the solve; larger than `lambda` only when the
    /// Cholesky factorization needed a retry.
    pub solve_shift: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "lambda must be positive and finite, got {lambda}"
        )))
    }
}

/// Solves `(K + lambda I) alpha = y`.
pub fn fit_exact(k: &DenseMatrix, y: &[f64], lambda: f64) -> Result<KrrModel> {
    check_lambda(lambda)?;
    check_psd(k)?;
    if y.len() != k.nrows() {
        return Err(Error::invalid(format!(
            "{} targets for a {}x{} kernel",
            y.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    let (alpha, shift) = shifted_cholesky_solve(k, lambda, &DVector::from_column_slice(y))?;
    Ok(KrrModel {
        mode: KrrMode::Exact {
            alpha: alpha.iter().copied().collect(),
        },
        lambda,
        solve_shift: shift,
    })
}

/// Solves `(Z Z^T + lambda I) w = Z y` for an `s x n` embedding `Z`.
pub fn fit_approx(z: &DenseMatrix, y: &[f64], lambda: f64, pi: &SamplingMatrix) -> Result<KrrModel> {
    check_lambda(lambda)?;
    if y.len() != z.ncols() {
        return Err(Error::invalid(format!(
            "{} targets for an embedding of {} points",
            y.len(),
            z.ncols()
        )));
    }
    if z.nrows() != pi.len() {
        return Err(Error::invalid(format!(
            "embedding has {} rows but the sampler has {}",
            z.nrows(),
            pi.len()
        )));
    }
    let gram = z * z.transpose();
    let rhs = z * DVector::from_column_slice(y);
    let (w, shift) = shifted_cholesky_solve(&gram, lambda, &rhs)?;
    Ok(KrrModel {
        mode: KrrMode::Approximate {
            w: w.iter().copied().collect(),
            sampler: pi.clone(),
        },
        lambda,
        solve_shift: shift,
    })
}

impl KrrModel {
    /// Predictions on the training points from the matrix used to fit:
    /// `K alpha` for an exact model, `Z^T w` for an approximate one.
    pub fn fitted_values(&self, fit_matrix: &DenseMatrix) -> Result<Vec<f64>> {
        let v = match &self.mode {
            KrrMode::Exact { alpha } => {
                if fit_matrix.ncols() != alpha.len() {
                    return Err(Error::invalid("kernel matrix does not match the model"));
                }
                fit_matrix * DVector::from_column_slice(alpha)
            }
            KrrMode::Approximate { w, .. } => {
                if fit_matrix.nrows() != w.len() {
                    return Err(Error::invalid("embedding does not match the model"));
                }
                fit_matrix.transpose() * DVector::from_column_slice(w)
            }
        };
        Ok(v.iter().copied().collect())
    }

    /// Predictions at the columns of `x_test`. `train` is the training data
    /// (needed by exact models); `kernel` is the kernel the model was fit for.
    pub fn predict(
        &self,
        kernel: &KernelSpec,
        train: &SparseDataMatrix,
        x_test: &SparseDataMatrix,
    ) -> Result<Vec<f64>> {
        if x_test.n_rows() != train.n_rows() {
            return Err(Error::invalid(format!(
                "test points have dimension {}, training points {}",
                x_test.n_rows(),
                train.n_rows()
            )));
        }
        match &self.mode {
            KrrMode::Exact { alpha } => {
                if alpha.len() != train.n_cols() {
                    return Err(Error::invalid("training data does not match the model"));
                }
                let norms = train.column_norms_sq();
                let train_cols = train.columns();
                (0..x_test.n_cols())
                    .into_par_iter()
                    .map(|t| {
                        let x = x_test.column_vector(t);
                        let nx = x.norm_sq();
                        Ok(train_cols
                            .iter()
                            .zip(alpha)
                            .zip(&norms)
                            .map(|((xj, a), &nj)| a * kernel_value(kernel, x.dot(xj), nx, nj))
                            .sum())
                    })
                    .collect()
            }
            KrrMode::Approximate { w, sampler } => (0..x_test.n_cols())
                .into_par_iter()
                .map(|t| {
                    let x = x_test.column_vector(t);
                    let phi = match kernel {
                        KernelSpec::Polynomial { .. } => poly_embed_out_of_sample(&x, sampler)?,
                        KernelSpec::Taylor(spec) => taylor_embed_out_of_sample(&x, spec, sampler)?,
                    };
                    Ok(phi.iter().zip(w).map(|(a, b)| a * b).sum())
                })
                .collect(),
        }
    }
}

fn kernel_value(kernel: &KernelSpec, dot: f64, nx: f64, ny: f64) -> f64 {
    match kernel {
        KernelSpec::Polynomial { degree } => dot.powi(*degree as i32),
        KernelSpec::Taylor(t) => t.evaluate_from_dot(dot, nx, ny),
    }
}

/// `(1/n) sum_i (pred_i - f_i)^2`.
pub fn empirical_risk(predictions: &[f64], f_star: &[f64]) -> Result<f64> {
    if predictions.len() != f_star.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            f_star.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    Ok(predictions
        .iter()
        .zip(f_star)
        .map(|(p, f)| (p - f).powi(2))
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Root-mean-square error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    empirical_risk(predictions, targets).map(f64::sqrt)
}

fn eigen(k: &DenseMatrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((k + k.transpose()) * 0.5)
}

/// Expected in-sample risk of exact KRR with noise variance `sigma_sq`:
/// `n^-1 lambda^2 f^T (K + lambda I)^-2 f + n^-1 sigma^2 tr(K^2 (K + lambda I)^-2)`.
pub fn exact_krr_risk(k: &DenseMatrix, f_star: &[f64], sigma_sq: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if f_star.len() != k.nrows() {
        return Err(Error::invalid("f has the wrong length"));
    }
    let n = f_star.len() as f64;
    let e = eigen(k);
    let f = DVector::from_column_slice(f_star);
    let proj = e.eigenvectors.transpose() * f;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (i, &l) in e.eigenvalues.iter().enumerate() {
        let l = l.max(0.0);
        let denom = l + lambda;
        bias += lambda * lambda * proj[i] * proj[i] / (denom * denom);
        variance += l * l / (denom * denom);
    }
    Ok((bias + sigma_sq * variance) / n)
}

/// The surrogate risk `n^-1 lambda f^T (K + lambda I)^-1 f + n^-1 sigma^2 s_lambda(K)`
/// that upper-bounds [`exact_krr_risk`].
pub fn risk_surrogate(k: &DenseMatrix, f_star: &[f64], sigma_sq: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if f_star.len() != k.nrows() {
        return Err(Error::invalid("f has the wrong length"));
    }
    let n = f_star.len() as f64;
    let e = eigen(k);
    let f = DVector::from_column_slice(f_star);
    let proj = e.eigenvectors.transpose() * f;
    let eigs: Vec<f64> = e.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let bias: f64 = eigs
        .iter()
        .zip(proj.iter())
        .map(|(l, p)| lambda * p * p / (l + lambda))
        .sum();
    Ok((bias + sigma_sq * statistical_dimension(&eigs, lambda)?) / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares the surrogate risk on `k_tilde` against
/// `(1 - eps)^-1 R(K) + eps/(1 + eps) rank(k_tilde)/n sigma^2`.
pub fn risk_bound_check(
    k: &DenseMatrix,
    k_tilde: &DenseMatrix,
    f_star: &[f64],
    sigma_sq: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<RiskBound> {
    if !(sigma_sq >= 0.0) {
        return Err(Error::invalid("noise variance must be nonnegative"));
    }
    let check = spectral_approx_check_gram(k, k_tilde, lambda, epsilon)?;
    if !check.passed {
        return Err(Error::invalid(format!(
            "surrogate is not an ({epsilon}, {lambda}) spectral approximation (deviation {:e})",
            check.max_relative_deviation
        )));
    }
    let top = check_psd(k)?.last().copied().unwrap_or(0.0);
    if top < 1.0 {
        return Err(Error::invalid(format!("kernel operator norm {top} is below one")));
    }
    let n = f_star.len() as f64;
    let lhs = risk_surrogate(k_tilde, f_star, sigma_sq, lambda)?;
    let rhs = risk_surrogate(k, f_star, sigma_sq, lambda)? / (1.0 - epsilon)
        + epsilon / (1.0 + epsilon) * psd_rank(k_tilde) as f64 / n * sigma_sq;
    Ok(RiskBound {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSeed;
    use crate::sampler::{FeatureIndex, WeightedSample};
    use rand::Rng;

    fn random_psd(n: usize, rank: usize, seed: u64) -> DenseMatrix {
        let mut rng = RandomSeed(seed).rng();
        let a = DenseMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * a
    }

    fn residual(k: &DenseMatrix, lambda: f64, x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let r =
            k * DVector::from_column_slice(x) + DVector::from_column_slice(x) * lambda - DVector::from_column_slice(y);
        debug_assert_eq!(r.len(), n);
        r.norm()
    }

    fn identity_sampler(s: usize) -> SamplingMatrix {
        SamplingMatrix::new(
            (0..s)
                .map(|i| WeightedSample {
                    index: FeatureIndex::row(i),
                    weight: 1.0,
                    claimed_probability: 1.0,
                })
                .collect(),
            None,
        )
    }

    #[test]
    fn exact_fit_examples() {
        let y = [1.0, -2.0, 4.0];
        let m = fit_exact(&DenseMatrix::identity(3, 3), &y, 1.0).unwrap();
        let KrrMode::Exact { alpha } = m.mode else { panic!() };
        for (a, v) in alpha.iter().zip(y) {
            assert!((a - v / 2.0).abs() < 1e-15);
        }
        let m = fit_exact(&DenseMatrix::from_element(1, 1, 3.0), &[2.0], 0.5).unwrap();
        let KrrMode::Exact { alpha } = m.mode else { panic!() };
        assert!((alpha[0] - 2.0 / 3.5).abs() < 1e-15);

        let k = random_psd(10, 10, 1);
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let m = fit_exact(&k, &y, 0.1).unwrap();
        let KrrMode::Exact { alpha } = &m.mode else { panic!() };
        assert!(residual(&k, 0.1, alpha, &y) <= RESIDUAL_TOLERANCE * DVector::from_column_slice(&y).norm());
        assert!(fit_exact(&k, &y[..3], 0.1).is_err());
        assert!(fit_exact(&k, &y, 0.0).is_err());
    }

    #[test]
    fn approximate_fit_examples() {
        let c = 2.0;
        let z = DenseMatrix::from_row_slice(2, 3, &[c, 0.0, 0.0, 0.0, c, 0.0]);
        let y = [1.0, 3.0, 5.0];
        let m = fit_approx(&z, &y, 0.5, &identity_sampler(2)).unwrap();
        let KrrMode::Approximate { w, .. } = &m.mode else {
            panic!()
        };
        assert!((w[0] - c * 1.0 / (c * c + 0.5)).abs() < 1e-15);
        assert!((w[1] - c * 3.0 / (c * c + 0.5)).abs() < 1e-15);

        let z = DenseMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let m = fit_approx(&z, &y, 0.25, &identity_sampler(1)).unwrap();
        let KrrMode::Approximate { w, .. } = &m.mode else {
            panic!()
        };
        assert!((w[0] - 2.0 / 6.25).abs() < 1e-15);
        assert!(fit_approx(&z, &y, 0.25, &identity_sampler(2)).is_err());
    }

    #[test]
    fn cholesky_factor_embedding_matches_exact_fit() {
        let k = random_psd(12, 12, 4);
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let lambda = 0.05;
        let l = k.clone().cholesky().unwrap().l();
        let z = l.transpose();
        let exact = fit_exact(&k, &y, lambda).unwrap().fitted_values(&k).unwrap();
        let approx = fit_approx(&z, &y, lambda, &identity_sampler(12))
            .unwrap()
            .fitted_values(&z)
            .unwrap();
        for (a, b) in exact.iter().zip(&approx) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn prediction_on_training_points() {
        let x =
            SparseDataMatrix::from_columns(2, vec![vec![(0, 0.5)], vec![(0, 0.2), (1, 0.4)], vec![(1, -0.7)]]).unwrap();
        let kernel = KernelSpec::polynomial(2).unwrap();
        let k = kernel.kernel_matrix(&x);
        let y = [1.0, 0.0, -1.0];
        let model = fit_exact(&k, &y, 0.1).unwrap();
        let fitted = model.fitted_values(&k).unwrap();
        let predicted = model.predict(&kernel, &x, &x).unwrap();
        for (a, b) in fitted.iter().zip(&predicted) {
            assert!((a - b).abs() < 1e-12);
        }

        let pi = SamplingMatrix::new(
            vec![
                WeightedSample::new(FeatureIndex::new(vec![0, 0]), 0.5, 2),
                WeightedSample::new(FeatureIndex::new(vec![1, 1]), 0.5, 2),
            ],
            Some(kernel.clone()),
        );
        let z = crate::poly::poly_embed_rows(&x, &pi).unwrap();
        let model = fit_approx(&z, &y, 0.1, &pi).unwrap();
        let fitted = model.fitted_values(&z).unwrap();
        let predicted = model.predict(&kernel, &x, &x).unwrap();
        for (a, b) in fitted.iter().zip(&predicted) {
            assert!((a - b).abs() < 1e-12);
        }
        let wrong = SparseDataMatrix::from_columns(3, vec![vec![]]).unwrap();
        assert!(model.predict(&kernel, &x, &wrong).is_err());
    }

    #[test]
    fn risk_examples() {
        assert_eq!(empirical_risk(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((empirical_risk(&[1.5, 2.5], &[1.0, 2.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(empirical_risk(&[1.0], &[1.0, 2.0]).is_err());
        assert!((rmse(&[3.0, 3.0], &[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_risk_matches_direct_matrix_formula() {
        let k = random_psd(6, 4, 9);
        let f: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let (sigma_sq, lambda) = (0.3, 0.2);
        let mut kl = k.clone();
        for i in 0..6 {
            kl[(i, i)] += lambda;
        }
        let inv = kl.try_inverse().unwrap();
        let inv2 = &inv * &inv;
        let fv = DVector::from_column_slice(&f);
        let bias = lambda * lambda * (fv.transpose() * &inv2 * &fv)[(0, 0)];
        let variance = sigma_sq * (&k * &k * &inv2).trace();
        let expect = (bias + variance) / 6.0;
        assert!((exact_krr_risk(&k, &f, sigma_sq, lambda).unwrap() - expect).abs() < 1e-12);
        let surrogate = (lambda * (fv.transpose() * &inv * &fv)[(0, 0)] + sigma_sq * (&k * &inv).trace()) / 6.0;
        assert!((risk_surrogate(&k, &f, sigma_sq, lambda).unwrap() - surrogate).abs() < 1e-12);
        assert!(exact_krr_risk(&k, &f, sigma_sq, lambda).unwrap() <= surrogate);
    }

    #[test]
    fn risk_bound_with_identical_kernels() {
        let k = random_psd(8, 8, 3) * 4.0;
        let f: Vec<f64> = (0..8).map(|i| (i as f64).sqrt()).collect();
        let b = risk_bound_check(&k, &k, &f, 0.5, 0.1, 0.3).unwrap();
        assert!(b.holds && b.lhs < b.rhs);
        let b = risk_bound_check(&k, &k, &f, 0.5, 0.1, 1e-12).unwrap();
        assert!(b.holds);
        assert!((b.lhs - b.rhs).abs() <= 1e-10 * b.rhs);
        assert!(risk_bound_check(&k, &(&k * 3.0), &f, 0.5, 0.1, 0.1).is_err());
        assert!(risk_bound_check(&(&k * 1e-3), &(&k * 1e-3), &f, 0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn monte_carlo_risk_matches_closed_form() {
        let k = random_psd(10, 6, 11);
        let f: Vec<f64> = (0..10).map(|i| (i as f64 * 0.4).sin()).collect();
        let (sigma, lambda) = (0.5, 0.3);
        let mut rng = RandomSeed(5).rng();
        let draws = 400;
        let risks: Vec<f64> = (0..draws)
            .map(|_| {
                let y: Vec<f64> = f
                    .iter()
                    .map(|v| v + sigma * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
                    .collect();
                let pred = fit_exact(&k, &y, lambda).unwrap().fitted_values(&k).unwrap();
                empirical_risk(&pred, &f).unwrap()
            })
            .collect();
        let mean = risks.iter().sum::<f64>() / draws as f64;
        let sd = (risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let expect = exact_krr_risk(&k, &f, sigma * sigma, lambda).unwrap();
        assert!(
            (mean - expect).abs() <= 4.0 * sd / (draws as f64).sqrt(),
            "{mean} vs {expect}"
        );
    }
}
