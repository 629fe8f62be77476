//! Dense linear-algebra primitives shared by every sampler: Gaussian JL
//! matrices, the regularized inverse square root applied through a thin SVD,
//! statistical dimension, ridge leverage scores and the two-sided spectral
//! approximation check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RandomSeed;

pub type DenseMatrix = DMatrix<f64>;

/// Relative tolerance used for symmetry and definiteness checks.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// A `rows x cols` matrix of i.i.d. standard normal entries, filled in
/// row-major order from the seed's stream.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: RandomSeed) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "gaussian matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let mut rng = seed.stream("gaussian-matrix", 0);
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// Computes `(B^T B + lambda I)^{-1/2} H` without forming any `n x n` matrix.
///
/// With the thin SVD `B = U S V^T` the result is
/// `lambda^{-1/2} H + V diag((s_i^2 + lambda)^{-1/2} - lambda^{-1/2}) V^T H`.
/// `B` may have zero rows, in which case the result is `lambda^{-1/2} H`.
pub fn regularized_inv_sqrt_apply(b: &DenseMatrix, lambda: f64, h: &DenseMatrix) -> Result<DenseMatrix> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    ensure_finite(b, "B")?;
    ensure_finite(h, "H")?;
    let base = 1.0 / lambda.sqrt();
    if b.nrows() == 0 {
        return Ok(h * base);
    }
    if b.ncols() != h.nrows() {
        return Err(Error::invalid(format!(
            "B has {} columns but H has {} rows",
            b.ncols(),
            h.nrows()
        )));
    }
    let svd = b.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numerical("inverse square root", "SVD did not return V"))?;
    let mut projected = &v_t * h;
    for (k, sigma) in svd.singular_values.iter().enumerate() {
        let f = 1.0 / (sigma * sigma + lambda).sqrt() - base;
        projected.row_mut(k).scale_mut(f);
    }
    let mut out = v_t.transpose() * projected;
    out += h * base;
    Ok(out)
}

/// `sum_i e_i / (e_i + lambda)`. Slightly negative eigenvalues (round-off,
/// down to `-1e-9 * max`) are clamped to zero.
pub fn statistical_dimension(eigenvalues: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let max = eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let mut total = 0.0;
    for &e in eigenvalues {
        if !e.is_finite() {
            return Err(Error::invalid("non-finite eigenvalue"));
        }
        if e < -1e-9 * max {
            return Err(Error::invalid(format!("negative eigenvalue {e}")));
        }
        let e = e.max(0.0);
        total += e / (e + lambda);
    }
    Ok(total)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(k: &DenseMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(k.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Checks that `k` is square, symmetric and positive semidefinite within
/// `PSD_TOLERANCE` relative to its spectral norm. Returns the eigenvalues.
pub fn check_psd(k: &DenseMatrix) -> Result<Vec<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::invalid(format!(
            "matrix is {}x{}, not square",
            k.nrows(),
            k.ncols()
        )));
    }
    ensure_finite(k, "kernel matrix")?;
    let scale = k.norm().max(f64::MIN_POSITIVE);
    let asym = (k - k.transpose()).amax();
    if asym > PSD_TOLERANCE * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (k + k.transpose()) * 0.5;
    let ev = symmetric_eigenvalues(&sym);
    let top = ev.last().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    if let Some(&min) = ev.first() {
        if min < -PSD_TOLERANCE * top {
            return Err(Error::invalid(format!("matrix is indefinite (eigenvalue {min:e})")));
        }
    }
    Ok(ev)
}

/// Outcome of a two-sided spectral approximation check.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralCheck {
    pub passed: bool,
    /// Largest distance of a generalized eigenvalue outside
    /// `[1/(1+eps), 1/(1-eps)]`; zero when all are inside.
    pub max_relative_deviation: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Generalized eigenvalues of `(A + lambda I)` relative to `(K + lambda I)`,
/// computed by whitening with the Cholesky factor of `K + lambda I`.
pub fn generalized_ratios(k: &DenseMatrix, a: &DenseMatrix, lambda: f64) -> Result<Vec<f64>> {
    let n = k.nrows();
    let mut kl = (k + k.transpose()) * 0.5;
    let mut al = (a + a.transpose()) * 0.5;
    for i in 0..n {
        kl[(i, i)] += lambda;
        al[(i, i)] += lambda;
    }
    let chol = kl
        .cholesky()
        .ok_or_else(|| Error::numerical("spectral check", "K + lambda I is not positive definite"))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&al)
        .ok_or_else(|| Error::numerical("spectral check", "triangular solve failed"))?;
    let w = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::numerical("spectral check", "triangular solve failed"))?;
    let w = (&w + w.transpose()) * 0.5;
    Ok(symmetric_eigenvalues(&w))
}

/// Verifies `(K + lambda I)/(1+eps) <= Z^T Z + lambda I <= (K + lambda I)/(1-eps)`.
pub fn spectral_approx_check(k: &DenseMatrix, z: &DenseMatrix, lambda: f64, epsilon: f64) -> Result<SpectralCheck> {
    if z.ncols() != k.ncols() {
        return Err(Error::invalid(format!(
            "Z has {} columns but K is {}x{}",
            z.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    let gram = z.transpose() * z;
    spectral_approx_check_gram(k, &gram, lambda, epsilon)
}

/// Same as [`spectral_approx_check`] with the surrogate given as a PSD matrix.
pub fn spectral_approx_check_gram(
    k: &DenseMatrix,
    k_tilde: &DenseMatrix,
    lambda: f64,
    epsilon: f64,
) -> Result<SpectralCheck> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    check_psd(k)?;
    if k_tilde.shape() != k.shape() {
        return Err(Error::invalid("surrogate and kernel matrices differ in shape"));
    }
    let ratios = generalized_ratios(k, k_tilde, lambda)?;
    let lo = 1.0 / (1.0 + epsilon);
    let hi = 1.0 / (1.0 - epsilon);
    let min_ratio = ratios.first().copied().unwrap_or(1.0);
    let max_ratio = ratios.last().copied().unwrap_or(1.0);
    let deviation = (lo - min_ratio).max(max_ratio - hi).max(0.0);
    Ok(SpectralCheck {
        passed: deviation <= 1e-12 * hi,
        max_relative_deviation: deviation,
        min_ratio,
        max_ratio,
    })
}

/// Ridge leverage scores `phi_i^T (Phi^T Phi + lambda I)^{-1} phi_i` of the
/// rows of `phi`.
pub fn ridge_leverage_scores(phi: &DenseMatrix, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    ensure_finite(phi, "Phi")?;
    let n = phi.ncols();
    let mut g = phi.transpose() * phi;
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::numerical("leverage scores", "Gram matrix not positive definite"))?;
    let w = chol
        .l()
        .solve_lower_triangular(&phi.transpose())
        .ok_or_else(|| Error::numerical("leverage scores", "triangular solve failed"))?;
    Ok(w.column_iter().map(|c| c.norm_squared()).collect())
}

/// Solves `(A + lambda I) x = rhs` for symmetric PSD `A` by Cholesky. On
/// failure the shift is multiplied by ten, up to three times. Returns the
/// solution and the shift actually used.
pub fn shifted_cholesky_solve(a: &DenseMatrix, lambda: f64, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows();
    let mut shift = lambda;
    for _ in 0..4 {
        let mut m = (a + a.transpose()) * 0.5;
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(chol) = m.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, shift));
            }
        }
        shift *= 10.0;
    }
    Err(Error::numerical(
        "cholesky solve",
        format!("system not positive definite even with shift {shift:e}"),
    ))
}

/// Numerical rank of a symmetric PSD matrix.
pub fn psd_rank(k: &DenseMatrix) -> usize {
    let ev = symmetric_eigenvalues(k);
    let top = ev.last().copied().unwrap_or(0.0).max(0.0);
    let tol = top * (k.nrows().max(1) as f64) * f64::EPSILON * 10.0;
    ev.iter().filter(|&&e| e > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Dense oracle: explicit eigendecomposition of `B^T B + lambda I`.
    fn dense_inv_sqrt(b: &DenseMatrix, lambda: f64) -> DenseMatrix {
        let n = b.ncols();
        let g = b.transpose() * b + DMatrix::identity(n, n) * lambda;
        let eig = SymmetricEigen::new(g);
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    fn dense_sqrt(b: &DenseMatrix, lambda: f64) -> DenseMatrix {
        let n = b.ncols();
        let g = b.transpose() * b + DMatrix::identity(n, n) * lambda;
        let eig = SymmetricEigen::new(g);
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.sqrt()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    #[test]
    fn gaussian_matrix_is_deterministic_and_seed_sensitive() {
        let a = gaussian_matrix(2, 2, RandomSeed(7)).unwrap();
        let b = gaussian_matrix(2, 2, RandomSeed(7)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_matrix(1, 1, RandomSeed(1)).unwrap();
        let d = gaussian_matrix(1, 1, RandomSeed(2)).unwrap();
        assert_ne!(c[(0, 0)], d[(0, 0)]);
        assert!(gaussian_matrix(0, 3, RandomSeed(1)).is_err());
    }

    #[test]
    fn gaussian_matrix_moments() {
        let g = gaussian_matrix(1000, 1, RandomSeed(3)).unwrap();
        let mean = g.mean();
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn inv_sqrt_empty_b() {
        let b = DMatrix::<f64>::zeros(0, 4);
        let h = DMatrix::<f64>::identity(4, 4);
        let m = regularized_inv_sqrt_apply(&b, 4.0, &h).unwrap();
        assert_relative_eq!(m, DMatrix::identity(4, 4) * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn inv_sqrt_identity_b() {
        let b = DMatrix::<f64>::identity(3, 3);
        let h = DMatrix::<f64>::identity(3, 3);
        let m = regularized_inv_sqrt_apply(&b, 3.0, &h).unwrap();
        assert_relative_eq!(m, DMatrix::identity(3, 3) * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn inv_sqrt_matches_dense_eigendecomposition() {
        let b = gaussian_matrix(2, 5, RandomSeed(11)).unwrap();
        let h = gaussian_matrix(5, 4, RandomSeed(12)).unwrap();
        let fast = regularized_inv_sqrt_apply(&b, 0.7, &h).unwrap();
        let oracle = dense_inv_sqrt(&b, 0.7) * &h;
        assert!((&fast - &oracle).norm() <= 1e-10 * oracle.norm());
    }

    #[test]
    fn inv_sqrt_recovers_h_through_square_root() {
        for (seed, m, n) in [(1u64, 3usize, 20usize), (2, 10, 50), (3, 1, 7), (4, 8, 8)] {
            let b = gaussian_matrix(m, n, RandomSeed(seed)).unwrap();
            let h = gaussian_matrix(n, 3, RandomSeed(seed + 100)).unwrap();
            let out = regularized_inv_sqrt_apply(&b, 0.3, &h).unwrap();
            let back = dense_sqrt(&b, 0.3) * out;
            assert!((&back - &h).norm() <= 1e-8 * h.norm());
        }
    }

    #[test]
    fn inv_sqrt_rejects_bad_input() {
        let b = DMatrix::<f64>::identity(2, 2);
        let h = DMatrix::<f64>::identity(2, 2);
        assert!(regularized_inv_sqrt_apply(&b, 0.0, &h).is_err());
        assert!(regularized_inv_sqrt_apply(&b, -1.0, &h).is_err());
        let mut bad = b.clone();
        bad[(0, 1)] = f64::INFINITY;
        assert!(regularized_inv_sqrt_apply(&bad, 1.0, &h).is_err());
    }

    #[test]
    fn statistical_dimension_examples() {
        let ones = vec![1.0; 7];
        assert_relative_eq!(statistical_dimension(&ones, 1.0).unwrap(), 3.5);

        let eig = [3.0, 1.0, 0.5, 0.0];
        let lambda = 1e12 * 3.0;
        let sd = statistical_dimension(&eig, lambda).unwrap();
        assert!((sd - 4.5 / lambda).abs() <= 1e-11 * 4.0 * 3.0 / lambda);

        assert!(statistical_dimension(&[1.0, -0.5], 1.0).is_err());
        assert!(statistical_dimension(&[1.0, -1e-12], 1.0).is_ok());
    }

    #[test]
    fn statistical_dimension_matches_trace_formula() {
        let a = gaussian_matrix(6, 6, RandomSeed(5)).unwrap();
        let k = &a * a.transpose();
        let lambda = 0.3;
        let mut kl = k.clone();
        for i in 0..6 {
            kl[(i, i)] += lambda;
        }
        let oracle = (&k * kl.try_inverse().unwrap()).trace();
        let sd = statistical_dimension(&symmetric_eigenvalues(&k), lambda).unwrap();
        assert_relative_eq!(sd, oracle, max_relative = 1e-10);
    }

    #[test]
    fn spectral_check_identity_case() {
        let a = gaussian_matrix(5, 5, RandomSeed(9)).unwrap();
        let k = &a * a.transpose();
        let z = k.clone().cholesky().unwrap().l().transpose();
        let r = spectral_approx_check(&k, &z, 0.1, 0.2).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_relative_deviation, 0.0);
    }

    #[test]
    fn spectral_check_zero_embedding_large_lambda() {
        let a = gaussian_matrix(4, 4, RandomSeed(2)).unwrap();
        let k = &a * a.transpose();
        let op = symmetric_eigenvalues(&k).last().copied().unwrap();
        let eps = 0.25;
        let z = DMatrix::zeros(1, 4);
        assert!(spectral_approx_check(&k, &z, op / eps, eps).unwrap().passed);
        assert!(spectral_approx_check(&k, &z, 2.0 * op / eps, eps).unwrap().passed);
    }

    #[test]
    fn spectral_check_forced_failure() {
        let k = DMatrix::<f64>::identity(3, 3);
        let z = DMatrix::zeros(2, 3);
        let r = spectral_approx_check(&k, &z, 1.0, 0.1).unwrap();
        assert!(!r.passed);
        assert_relative_eq!(r.min_ratio, 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.max_relative_deviation, 1.0 / 1.1 - 0.5, epsilon = 1e-14);
    }

    #[test]
    fn spectral_check_rejects_bad_k() {
        let mut k = DMatrix::<f64>::identity(2, 2);
        k[(0, 1)] = 0.5;
        assert!(spectral_approx_check(&k, &DMatrix::zeros(1, 2), 1.0, 0.1).is_err());
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spectral_approx_check(&k, &DMatrix::zeros(1, 2), 1.0, 0.1).is_err());
    }

    #[test]
    fn leverage_scores_examples() {
        let phi = DMatrix::<f64>::identity(4, 4);
        for l in ridge_leverage_scores(&phi, 1.0).unwrap() {
            assert_relative_eq!(l, 0.5, epsilon = 1e-14);
        }

        let mut phi = DMatrix::<f64>::zeros(3, 4);
        phi.set_row(1, &nalgebra::RowDVector::from_row_slice(&[1.0, 2.0, 0.0, -1.0]));
        let scores = ridge_leverage_scores(&phi, 0.5).unwrap();
        assert_relative_eq!(scores[1], 6.0 / 6.5, epsilon = 1e-14);
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[2], 0.0);
    }

    #[test]
    fn leverage_scores_sum_to_statistical_dimension() {
        let phi = gaussian_matrix(8, 3, RandomSeed(21)).unwrap();
        let scores = ridge_leverage_scores(&phi, 0.5).unwrap();
        let sd = statistical_dimension(&symmetric_eigenvalues(&(phi.transpose() * &phi)), 0.5).unwrap();
        assert_relative_eq!(scores.iter().sum::<f64>(), sd, max_relative = 1e-8);
        assert!(scores.iter().all(|&l| (0.0..1.0).contains(&l)));
    }

    #[test]
    fn shifted_solve_retries_with_larger_shift() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.5]);
        let rhs = DVector::from_vec(vec![1.0, 1.0]);
        let (x, shift) = shifted_cholesky_solve(&a, 1.0, &rhs).unwrap();
        assert_eq!(shift, 10.0);
        assert_relative_eq!(x[0], 1.0 / 11.0, epsilon = 1e-14);
    }
}
