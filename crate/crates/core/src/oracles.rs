//! Brute-force references for tests and verification runs: explicit feature
//! matrices, exact row-norm distributions, and samplers that draw from them.
//! Everything here is dense and guarded by size limits.

use std::collections::HashMap;

use nalgebra::SymmetricEigen;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::linalg::{ridge_leverage_scores, DenseMatrix};
use crate::rng::RandomSeed;
use crate::sampler::{
    recursive_leverage_sampling, FeatureIndex, RowSampler, SamplerConfig, SamplingMatrix, WeightedSample,
};
use crate::sketch::{dense_tensor_power, DENSE_ENTRY_LIMIT};
use crate::sparse::SparseDataMatrix;
use crate::taylor::{dense_lifting, LiftedFeatureLayout, TaylorKernelSpec};

/// A distribution over the rows of an explicit feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub probabilities: Vec<f64>,
}

impl ExactDistribution {
    fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateInput(format!("row masses sum to {total}")));
        }
        Ok(ExactDistribution {
            probabilities: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Keys rows `0..d` as single-coordinate indices.
    pub fn keyed_by_row(&self) -> HashMap<FeatureIndex, f64> {
        self.keyed(FeatureIndex::row)
    }

    /// Keys the rows of a `d^q x n` tensor power by their coordinate tuples.
    pub fn keyed_by_tensor(&self, d: usize, q: usize) -> HashMap<FeatureIndex, f64> {
        self.keyed(|r| {
            let mut rest = r;
            let mut idx = vec![0; q];
            for slot in idx.iter_mut().rev() {
                *slot = rest % d;
                rest /= d;
            }
            FeatureIndex::new(idx)
        })
    }

    /// Keys the rows of a Taylor lifting by block degree and tuple.
    pub fn keyed_by_lifting(&self, layout: LiftedFeatureLayout) -> HashMap<FeatureIndex, f64> {
        self.keyed(|r| layout.index_at(r).expect("row inside the layout"))
    }

    fn keyed(&self, key: impl Fn(usize) -> FeatureIndex) -> HashMap<FeatureIndex, f64> {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(r, &p)| (key(r), p))
            .collect()
    }
}

fn guard(rows: usize, cols: usize, what: &str) -> Result<()> {
    if rows.saturating_mul(cols) > DENSE_ENTRY_LIMIT {
        return Err(Error::ResourceLimit(format!("{what} would be {rows} x {cols}")));
    }
    Ok(())
}

/// The explicit `d^q x n` matrix `X^{(x)q}`.
pub fn tensor_power_matrix(x: &SparseDataMatrix, q: usize) -> Result<DenseMatrix> {
    let d = x.n_rows();
    let rows = d
        .checked_pow(q as u32)
        .ok_or_else(|| Error::ResourceLimit(format!("{d}^{q} rows")))?;
    guard(rows, x.n_cols(), "tensor power")?;
    let mut out = DenseMatrix::zeros(rows, x.n_cols());
    for c in 0..x.n_cols() {
        let col = dense_tensor_power(&x.column_vector(c).to_dense(), q)?;
        out.column_mut(c).copy_from_slice(&col);
    }
    Ok(out)
}

/// `Phi (B^T B + lambda I)^{-1/2}` through a dense eigendecomposition.
pub fn whitened_features(phi: &DenseMatrix, b: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let n = phi.ncols();
    guard(phi.nrows(), n, "feature matrix")?;
    if b.nrows() > 0 && b.ncols() != n {
        return Err(Error::invalid(format!("B has {} columns, expected {n}", b.ncols())));
    }
    let mut g = if b.nrows() == 0 {
        DenseMatrix::zeros(n, n)
    } else {
        b.transpose() * b
    };
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    let e = SymmetricEigen::new(g);
    let scaled = DenseMatrix::from_fn(n, n, |i, j| e.eigenvectors[(i, j)] / e.eigenvalues[j].sqrt());
    let inv_sqrt = &scaled * e.eigenvectors.transpose();
    Ok(phi * inv_sqrt)
}

/// `p_i = |row_i(Phi (B^T B + lambda I)^{-1/2})|^2 / |Phi (B^T B + lambda I)^{-1/2}|_F^2`.
pub fn exact_row_norm_distribution(phi: &DenseMatrix, b: &DenseMatrix, lambda: f64) -> Result<ExactDistribution> {
    let m = whitened_features(phi, b, lambda)?;
    ExactDistribution::from_weights(m.row_iter().map(|r| r.norm_squared()).collect())
}

/// Exact row-norm distribution of the explicit Taylor lifting of `x`.
pub fn dense_lifting_distribution(
    x: &SparseDataMatrix,
    spec: &TaylorKernelSpec,
    b: &DenseMatrix,
    lambda: f64,
) -> Result<ExactDistribution> {
    exact_row_norm_distribution(&dense_lifting(x, spec)?, b, lambda)
}

/// Ridge leverage scores of the rows of `phi`, normalized.
pub fn ridge_leverage_distribution(phi: &DenseMatrix, lambda: f64) -> Result<ExactDistribution> {
    guard(phi.nrows(), phi.ncols(), "feature matrix")?;
    ExactDistribution::from_weights(ridge_leverage_scores(phi, lambda)?)
}

/// `s` i.i.d. row draws from `dist`, weighted `1/sqrt(s p)`.
pub fn sample_from(dist: &ExactDistribution, s: usize, seed: RandomSeed) -> Result<SamplingMatrix> {
    if s == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let table =
        WeightedIndex::new(&dist.probabilities).map_err(|e| Error::numerical("exact sampling", e.to_string()))?;
    let mut rng = seed.stream("exact-draw", 0);
    let samples = (0..s)
        .map(|_| {
            let i = table.sample(&mut rng);
            WeightedSample::new(FeatureIndex::row(i), dist.probabilities[i], s)
        })
        .collect();
    Ok(SamplingMatrix::new(samples, None))
}

/// `Z = Pi Phi` for a sampler whose indices are rows of `phi`.
pub fn embed_rows(phi: &DenseMatrix, pi: &SamplingMatrix) -> Result<DenseMatrix> {
    let mut z = DenseMatrix::zeros(pi.len(), phi.ncols());
    for (l, sample) in pi.samples.iter().enumerate() {
        let [r] = sample.index.indices[..] else {
            return Err(Error::invalid("oracle samplers index single rows"));
        };
        if r >= phi.nrows() {
            return Err(Error::invalid(format!("row {r} out of range")));
        }
        z.row_mut(l).copy_from(&(phi.row(r) * sample.weight));
    }
    Ok(z)
}

/// Exact ridge leverage score sampling of `s` rows of `phi`.
pub fn leverage_score_sampling(phi: &DenseMatrix, lambda: f64, s: usize, seed: RandomSeed) -> Result<SamplingMatrix> {
    sample_from(&ridge_leverage_distribution(phi, lambda)?, s, seed)
}

/// A [`RowSampler`] over an explicit feature matrix that draws from the exact
/// row-norm distribution.
#[derive(Debug, Clone)]
pub struct ExactRowSampler<'a> {
    phi: &'a DenseMatrix,
}

impl<'a> ExactRowSampler<'a> {
    pub fn new(phi: &'a DenseMatrix) -> Result<Self> {
        guard(phi.nrows(), phi.ncols(), "feature matrix")?;
        Ok(ExactRowSampler { phi })
    }
}

impl RowSampler for ExactRowSampler<'_> {
    fn n_points(&self) -> usize {
        self.phi.ncols()
    }

    fn frobenius_sq(&self) -> f64 {
        self.phi.norm_squared()
    }

    fn sample(&self, b: &DenseMatrix, lambda: f64, s: usize, seed: RandomSeed) -> Result<SamplingMatrix> {
        sample_from(&exact_row_norm_distribution(self.phi, b, lambda)?, s, seed)
    }

    fn embed(&self, pi: &SamplingMatrix) -> Result<DenseMatrix> {
        embed_rows(self.phi, pi)
    }
}

/// The recursive driver run on exact row-norm sampling of `phi`.
pub fn dense_pipeline(
    phi: &DenseMatrix,
    lambda: f64,
    epsilon: f64,
    mu: f64,
    config: &SamplerConfig,
) -> Result<SamplingMatrix> {
    recursive_leverage_sampling(&ExactRowSampler::new(phi)?, lambda, epsilon, mu, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_approx_check;
    use crate::sampler::{empirical_frequencies, verify_row_norm_sampler, weight_consistency_check};
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = RandomSeed(seed).rng();
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn empty_b_gives_row_norm_shares() {
        let phi = random_matrix(6, 4, 1);
        let total = phi.norm_squared();
        for lambda in [0.01, 1.0, 50.0] {
            let d = exact_row_norm_distribution(&phi, &DenseMatrix::zeros(0, 4), lambda).unwrap();
            for (r, p) in d.probabilities.iter().enumerate() {
                assert!((p - phi.row(r).norm_squared() / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_features_follow_inverse_diagonal() {
        let b = random_matrix(2, 5, 2);
        let lambda = 0.3;
        let d = exact_row_norm_distribution(&DenseMatrix::identity(5, 5), &b, lambda).unwrap();
        let mut g = b.transpose() * &b;
        for i in 0..5 {
            g[(i, i)] += lambda;
        }
        let inv = g.try_inverse().unwrap();
        let trace = inv.trace();
        for i in 0..5 {
            assert!((d.probabilities[i] - inv[(i, i)] / trace).abs() < 1e-12);
        }
        assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_power_distribution_matches_entrywise_double_loop() {
        let x = SparseDataMatrix::from_dense(&random_matrix(2, 3, 3)).unwrap();
        let b = random_matrix(2, 3, 4);
        let lambda = 0.5;
        let phi = tensor_power_matrix(&x, 2).unwrap();
        let dist = exact_row_norm_distribution(&phi, &b, lambda)
            .unwrap()
            .keyed_by_tensor(2, 2);
        let mut g = b.transpose() * &b;
        for i in 0..3 {
            g[(i, i)] += lambda;
        }
        let ginv = g.try_inverse().unwrap();
        let mut masses = HashMap::new();
        let mut total = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let row: Vec<f64> = (0..3).map(|c| x.get(i, c) * x.get(j, c)).collect();
                let mut m = 0.0;
                for a in 0..3 {
                    for c in 0..3 {
                        m += row[a] * ginv[(a, c)] * row[c];
                    }
                }
                total += m;
                masses.insert(FeatureIndex::new(vec![i, j]), m);
            }
        }
        for (k, m) in masses {
            assert!((dist[&k] - m / total).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_sampler_passes_verifier_and_weights_are_consistent() {
        let phi = random_matrix(7, 3, 5);
        let dist = exact_row_norm_distribution(&phi, &DenseMatrix::zeros(0, 3), 1.0).unwrap();
        let draws = 20_000;
        let pi = sample_from(&dist, draws, RandomSeed(6)).unwrap();
        assert!(pi.samples.iter().all(|s| weight_consistency_check(s, draws)));
        let freq = empirical_frequencies(pi.samples.iter().map(|s| &s.index));
        let verdict = verify_row_norm_sampler(&freq, &dist.keyed_by_row(), 0.25, draws).unwrap();
        assert!(verdict.passed && verdict.worst_ratio > 0.9);
    }

    #[test]
    fn embedding_of_rows() {
        let phi = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let pi = SamplingMatrix::new(
            vec![WeightedSample {
                index: FeatureIndex::row(1),
                weight: 0.5,
                claimed_probability: 1.0,
            }],
            None,
        );
        assert_eq!(
            embed_rows(&phi, &pi).unwrap(),
            DenseMatrix::from_row_slice(1, 2, &[1.5, 2.0])
        );
    }

    #[test]
    fn dense_pipeline_on_identity() {
        let phi = DenseMatrix::identity(8, 8);
        let k = DenseMatrix::identity(8, 8);
        let mut passes = 0;
        for seed in 0..40 {
            let pi = dense_pipeline(&phi, 1.0, 1.0 / 3.0, 4.0, &SamplerConfig::with_seed(seed)).unwrap();
            assert!(pi.samples.iter().all(|s| weight_consistency_check(s, pi.len())));
            let z = embed_rows(&phi, &pi).unwrap();
            if spectral_approx_check(&k, &z, 1.0, 1.0 / 3.0).unwrap().passed {
                passes += 1;
            }
        }
        assert!(passes >= 38, "{passes}/40");
    }

    #[test]
    fn one_round_when_lambda_is_large() {
        let phi = random_matrix(5, 4, 8);
        let big = phi.norm_squared() * 10.0;
        let pi = dense_pipeline(&phi, big, 1.0 / 3.0, 1.0, &SamplerConfig::with_seed(1)).unwrap();
        assert_eq!(pi.rounds, 1);
    }

    #[test]
    fn size_guards() {
        let x = SparseDataMatrix::from_columns(100, vec![vec![(0, 1.0)]]).unwrap();
        assert!(matches!(tensor_power_matrix(&x, 4), Err(Error::ResourceLimit(_))));
    }
}
