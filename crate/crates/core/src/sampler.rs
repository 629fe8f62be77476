//! Generic recursive ridge-leverage-score sampling.
//!
//! A [`RowSampler`] knows how to draw rows of `Phi (B^T B + lambda I)^{-1/2}`
//! (with at least a quarter of the exact squared-row-norm probability) for a
//! fixed feature matrix `Phi`, and how to materialize `S Phi` for a drawn
//! sampler `S`. [`recursive_leverage_sampling`] halves the ridge each round,
//! feeding the previous round's embedding back in as `B`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::DenseMatrix;
use crate::rng::RandomSeed;

/// One coordinate of a lifted feature space: the tensor row `(i_1, ..., i_w)`
/// of block degree `w = indices.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub indices: Vec<usize>,
}

impl FeatureIndex {
    pub fn new(indices: Vec<usize>) -> Self {
        FeatureIndex { indices }
    }

    /// A plain row of an explicit matrix.
    pub fn row(i: usize) -> Self {
        FeatureIndex { indices: vec![i] }
    }

    pub fn block_degree(&self) -> usize {
        self.indices.len()
    }

    /// Row-major position of the tuple inside its own block of `d^w` rows.
    pub fn tensor_offset(&self, d: usize) -> usize {
        self.indices.iter().fold(0, |acc, &i| acc * d + i)
    }

    /// Position inside the concatenated lifting `block_0 (+) block_1 (+) ...`,
    /// where block `w` starts at `(d^w - 1)/(d - 1)`.
    pub fn lifted_offset(&self, d: usize) -> usize {
        block_start(d, self.block_degree()) + self.tensor_offset(d)
    }
}

/// First row of block `w` in the concatenated lifting.
pub fn block_start(d: usize, w: usize) -> usize {
    (0..w).map(|j| d.pow(j as u32)).sum()
}

/// A drawn row with its importance weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub index: FeatureIndex,
    /// Scale applied to the selected row, `1/sqrt(s * claimed_probability)`.
    pub weight: f64,
    /// Probability with which a single draw produces `index`, as computed
    /// by the sampler.
    pub claimed_probability: f64,
}

impl WeightedSample {
    pub fn new(index: FeatureIndex, claimed_probability: f64, s: usize) -> Self {
        WeightedSample {
            index,
            weight: 1.0 / (s as f64 * claimed_probability).sqrt(),
            claimed_probability,
        }
    }
}

/// The sampler `Pi`: `s` weighted rows of a lifted feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMatrix {
    pub samples: Vec<WeightedSample>,
    /// Kernel whose lifting the indices refer to; `None` for explicit matrices.
    pub kernel: Option<KernelSpec>,
    /// Number of recursive rounds that produced this sampler.
    pub rounds: usize,
    /// Set when a round produced an all-zero embedding and the recursion
    /// stopped early.
    pub degenerate: bool,
}

impl SamplingMatrix {
    pub fn new(samples: Vec<WeightedSample>, kernel: Option<KernelSpec>) -> Self {
        SamplingMatrix {
            samples,
            kernel,
            rounds: 1,
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_block_degree(&self) -> usize {
        self.samples.iter().map(|s| s.index.block_degree()).max().unwrap_or(0)
    }
}

/// Ridge sequence `lambda_0 = ||Phi||_F^2 / eps`, halved `T` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSchedule {
    pub lambda_0: f64,
    pub rounds: usize,
}

impl RidgeSchedule {
    pub fn new(frobenius_sq: f64, epsilon: f64, lambda: f64) -> Result<Self> {
        if !(frobenius_sq > 0.0 && frobenius_sq.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "feature matrix has Frobenius norm^2 {frobenius_sq}"
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let lambda_0 = frobenius_sq / epsilon;
        let rounds = if lambda_0 > lambda {
            (lambda_0 / lambda).log2().ceil() as usize
        } else {
            0
        };
        Ok(RidgeSchedule { lambda_0, rounds })
    }

    /// `lambda_t = lambda_0 / 2^t`.
    pub fn lambda_at(&self, t: usize) -> f64 {
        self.lambda_0 / 2f64.powi(t as i32)
    }

    pub fn final_lambda(&self) -> f64 {
        self.lambda_at(self.rounds)
    }
}

/// Constants the sampling algorithms leave symbolic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `s = ceil(c * mu * eps^-2 * log2 n)`.
    pub c: f64,
    /// Gaussian projection width `d' = c1 * q * log2 n`.
    pub c1: f64,
    /// Sketch output size `m' = c2 * q^2 * log2 n`.
    pub c2: f64,
    /// Per-bucket compression height `n' = c3 * q^2 * log2 n`.
    pub c3: f64,
    /// Lower bound applied to `d'`, `m'` and `n'`.
    pub dimension_floor: usize,
    /// Optional upper bound on `d'`, `m'` and `n'`, for runs where the
    /// asymptotic sizes are too large to afford.
    pub dimension_cap: Option<usize>,
    pub osnap_sparsity: usize,
    /// Internal sketch-tree width; `None` means the next power of two at
    /// least `2 m'`.
    pub sketch_internal_dim: Option<usize>,
    /// Guarantee level of a row norm sampler.
    pub alpha: f64,
    pub seed: RandomSeed,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            c: 16.0,
            c1: 4.0,
            c2: 0.5,
            c3: 1.0,
            dimension_floor: 64,
            dimension_cap: None,
            osnap_sparsity: 8,
            sketch_internal_dim: None,
            alpha: 0.25,
            seed: RandomSeed(0),
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        SamplerConfig {
            seed: RandomSeed(seed),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c", self.c), ("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("constant {name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.osnap_sparsity == 0 || self.dimension_floor == 0 {
            return Err(Error::invalid("osnap_sparsity and dimension_floor must be positive"));
        }
        Ok(())
    }

    pub fn sample_size(&self, mu: f64, epsilon: f64, n: usize) -> usize {
        sample_size(self.c, mu, epsilon, n)
    }

    fn scaled_dim(&self, constant: f64, q: usize, power: i32, n: usize) -> usize {
        let raw = constant * (q.max(1) as f64).powi(power) * log2_count(n);
        let dim = (raw.ceil() as usize).max(self.dimension_floor);
        self.dimension_cap.map_or(dim, |cap| dim.min(cap.max(1)))
    }

    pub fn projection_dim(&self, q: usize, n: usize) -> usize {
        self.scaled_dim(self.c1, q, 1, n)
    }

    pub fn sketch_dim(&self, q: usize, n: usize) -> usize {
        self.scaled_dim(self.c2, q, 2, n)
    }

    pub fn bucket_dim(&self, q: usize, n: usize) -> usize {
        self.scaled_dim(self.c3, q, 2, n)
    }

    pub fn internal_dim(&self, sketch_dim: usize) -> usize {
        self.sketch_internal_dim
            .unwrap_or(2 * sketch_dim)
            .max(sketch_dim)
            .next_power_of_two()
    }
}

fn log2_count(n: usize) -> f64 {
    (n.max(1) as f64).log2()
}

/// `ceil(c * mu * eps^-2 * log2 n)`, at least one.
pub fn sample_size(c: f64, mu: f64, epsilon: f64, n: usize) -> usize {
    let raw = c * mu * log2_count(n) / (epsilon * epsilon);
    (raw.ceil() as usize).max(1)
}

/// Row norm sampling for a fixed feature matrix `Phi` with `n` columns.
pub trait RowSampler: Sync {
    fn n_points(&self) -> usize;

    /// `||Phi||_F^2`.
    fn frobenius_sq(&self) -> f64;

    /// Draws `s` rows of `Phi (B^T B + lambda I)^{-1/2}` with probabilities at
    /// least a constant fraction of the squared row norms. `b` may have zero
    /// rows.
    fn sample(&self, b: &DenseMatrix, lambda: f64, s: usize, seed: RandomSeed) -> Result<SamplingMatrix>;

    /// The `s x n` embedding `Pi Phi`.
    fn embed(&self, pi: &SamplingMatrix) -> Result<DenseMatrix>;
}

/// How many rows the recursive driver draws per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleBudget {
    /// `s = ceil(c * mu * eps^-2 * log2 n)` with the configured `c`.
    StatisticalDimension(f64),
    Rows(usize),
}

/// Recursive leverage score sampling with `s` chosen from `mu`.
pub fn recursive_leverage_sampling<S: RowSampler + ?Sized>(
    sampler: &S,
    lambda: f64,
    epsilon: f64,
    mu: f64,
    config: &SamplerConfig,
) -> Result<SamplingMatrix> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    recursive_sampling_with_budget(sampler, lambda, epsilon, SampleBudget::StatisticalDimension(mu), config)
}

pub fn recursive_sampling_with_budget<S: RowSampler + ?Sized>(
    sampler: &S,
    lambda: f64,
    epsilon: f64,
    budget: SampleBudget,
    config: &SamplerConfig,
) -> Result<SamplingMatrix> {
    if !(epsilon > 0.0 && epsilon <= 1.0 / 3.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1/3], got {epsilon}")));
    }
    config.validate()?;
    let n = sampler.n_points();
    let s = match budget {
        SampleBudget::StatisticalDimension(mu) => config.sample_size(mu, epsilon, n),
        SampleBudget::Rows(0) => return Err(Error::invalid("sample count must be positive")),
        SampleBudget::Rows(s) => s,
    };
    let schedule = RidgeSchedule::new(sampler.frobenius_sq(), epsilon, lambda)?;

    if schedule.rounds == 0 {
        let empty = DenseMatrix::zeros(0, n);
        let mut pi = sampler.sample(&empty, schedule.lambda_0, s, config.seed.derive("round", 1))?;
        pi.rounds = 1;
        return Ok(pi);
    }

    let mut b = DenseMatrix::zeros(0, n);
    let mut current = None;
    for t in 1..=schedule.rounds {
        let mut pi = sampler.sample(&b, schedule.lambda_at(t - 1), s, config.seed.derive("round", t as u64))?;
        pi.rounds = t;
        if t < schedule.rounds {
            b = sampler.embed(&pi)?;
            if b.iter().all(|v| *v == 0.0) {
                pi.degenerate = true;
                return Ok(pi);
            }
        }
        current = Some(pi);
    }
    Ok(current.expect("at least one round"))
}

/// Result of comparing a sampler's empirical frequencies against a target
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowNormVerdict {
    pub passed: bool,
    /// Smallest `f_i / e_i` over the tested indices.
    pub worst_ratio: f64,
    pub tested: usize,
}

/// Empirical frequencies of the sampled indices.
pub fn empirical_frequencies<'a, I>(indices: I) -> HashMap<FeatureIndex, f64>
where
    I: IntoIterator<Item = &'a FeatureIndex>,
{
    let mut counts: HashMap<FeatureIndex, f64> = HashMap::new();
    let mut total = 0.0;
    for idx in indices {
        *counts.entry(idx.clone()).or_default() += 1.0;
        total += 1.0;
    }
    counts.values_mut().for_each(|c| *c /= total);
    counts
}

/// Checks `f_i >= alpha * e_i - 3 sqrt(e_i / N)` for every index with
/// `e_i >= 50 / N`.
pub fn verify_row_norm_sampler(
    empirical: &HashMap<FeatureIndex, f64>,
    exact: &HashMap<FeatureIndex, f64>,
    alpha: f64,
    draws: usize,
) -> Result<RowNormVerdict> {
    if draws < 10_000 {
        return Err(Error::invalid(format!("need at least 10^4 draws, got {draws}")));
    }
    let total: f64 = exact.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("exact distribution sums to {total}")));
    }
    if let Some(extra) = empirical.keys().find(|k| !exact.contains_key(*k)) {
        return Err(Error::invalid(format!(
            "empirical index {:?} is outside the exact support",
            extra.indices
        )));
    }
    let n = draws as f64;
    let mut passed = true;
    let mut worst_ratio = f64::INFINITY;
    let mut tested = 0;
    for (idx, &e) in exact {
        if e < 50.0 / n {
            continue;
        }
        tested += 1;
        let f = empirical.get(idx).copied().unwrap_or(0.0);
        worst_ratio = worst_ratio.min(f / e);
        if f < alpha * e - 3.0 * (e / n).sqrt() {
            passed = false;
        }
    }
    Ok(RowNormVerdict {
        passed,
        worst_ratio,
        tested,
    })
}

/// `weight == 1/sqrt(s * claimed_probability)` to `1e-9` relative.
pub fn weight_consistency_check(sample: &WeightedSample, s: usize) -> bool {
    let expect = 1.0 / (s as f64 * sample.claimed_probability).sqrt();
    sample.claimed_probability > 0.0
        && sample.claimed_probability <= 1.0 + 1e-12
        && (sample.weight - expect).abs() <= 1e-9 * expect
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(entries: &[(usize, f64)]) -> HashMap<FeatureIndex, f64> {
        entries.iter().map(|&(i, p)| (FeatureIndex::row(i), p)).collect()
    }

    #[test]
    fn offsets_follow_block_layout() {
        assert_eq!(FeatureIndex::new(vec![]).lifted_offset(3), 0);
        assert_eq!(FeatureIndex::new(vec![2]).lifted_offset(3), 3);
        assert_eq!(FeatureIndex::new(vec![1, 2]).tensor_offset(3), 5);
        assert_eq!(FeatureIndex::new(vec![1, 2]).lifted_offset(3), 4 + 5);
        assert_eq!(FeatureIndex::new(vec![0, 0, 0]).lifted_offset(2), 7);
        assert_eq!(block_start(2, 4), 15);
        assert_eq!(block_start(1, 3), 3);
    }

    #[test]
    fn schedule_rounds() {
        let s = RidgeSchedule::new(8.0 / 3.0, 1.0 / 3.0, 1.0).unwrap();
        assert!((s.lambda_0 - 8.0).abs() < 1e-12);
        assert_eq!(s.rounds, 3);
        assert!(s.final_lambda() <= 1.0 + 1e-12);

        let s = RidgeSchedule::new(3.0, 0.25, 1.7).unwrap();
        assert!(s.final_lambda() <= 1.7 && 1.7 < 2.0 * s.final_lambda());
        for t in 1..=s.rounds {
            assert!((s.lambda_at(t) - s.lambda_at(t - 1) / 2.0).abs() < 1e-12);
        }

        assert_eq!(RidgeSchedule::new(1.0, 0.25, 4.0).unwrap().rounds, 0);
        assert_eq!(RidgeSchedule::new(1.0, 0.25, 100.0).unwrap().rounds, 0);
        assert!(RidgeSchedule::new(0.0, 0.25, 1.0).is_err());
    }

    #[test]
    fn sample_size_formula() {
        assert_eq!(
            sample_size(16.0, 4.0, 1.0 / 3.0, 64),
            (16.0f64 * 4.0 * 9.0 * 6.0).ceil() as usize
        );
        assert_eq!(sample_size(16.0, 4.0, 1.0 / 3.0, 1), 1);
    }

    #[test]
    fn verifier_examples() {
        let exact = dist(&[(0, 0.9), (1, 0.1)]);
        let uniform = dist(&[(0, 0.5), (1, 0.5)]);
        let v = verify_row_norm_sampler(&uniform, &exact, 0.25, 100_000).unwrap();
        assert!(v.passed);
        assert!((v.worst_ratio - 0.5 / 0.9).abs() < 1e-12);

        let exact = dist(&[(0, 0.5), (1, 0.5)]);
        let v = verify_row_norm_sampler(&dist(&[(0, 1.0)]), &exact, 0.25, 100_000).unwrap();
        assert!(!v.passed);
        assert_eq!(v.worst_ratio, 0.0);

        let v = verify_row_norm_sampler(&exact, &exact, 0.25, 100_000).unwrap();
        assert!(v.passed && (v.worst_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verifier_rejects_bad_inputs() {
        let exact = dist(&[(0, 0.5), (1, 0.5)]);
        assert!(verify_row_norm_sampler(&exact, &exact, 0.25, 100).is_err());
        assert!(verify_row_norm_sampler(&dist(&[(7, 1.0)]), &exact, 0.25, 100_000).is_err());
        assert!(verify_row_norm_sampler(&exact, &dist(&[(0, 0.7)]), 0.25, 100_000).is_err());
    }

    #[test]
    fn weight_consistency_examples() {
        let idx = FeatureIndex::row(0);
        let sample = |p: f64, w: f64| WeightedSample {
            index: idx.clone(),
            weight: w,
            claimed_probability: p,
        };
        assert!(weight_consistency_check(&sample(0.01, 1.0), 100));
        assert!(weight_consistency_check(&sample(0.04, 1.0), 25));
        assert!(!weight_consistency_check(&sample(0.04, 1.01), 25));
        assert!(weight_consistency_check(&WeightedSample::new(idx, 0.3, 7), 7));
    }

    #[test]
    fn driver_rejects_bad_epsilon() {
        struct Never;
        impl RowSampler for Never {
            fn n_points(&self) -> usize {
                2
            }
            fn frobenius_sq(&self) -> f64 {
                1.0
            }
            fn sample(&self, _: &DenseMatrix, _: f64, _: usize, _: RandomSeed) -> Result<SamplingMatrix> {
                unreachable!()
            }
            fn embed(&self, _: &SamplingMatrix) -> Result<DenseMatrix> {
                unreachable!()
            }
        }
        let cfg = SamplerConfig::default();
        assert!(recursive_leverage_sampling(&Never, 1.0, 0.5, 1.0, &cfg).is_err());
        assert!(recursive_leverage_sampling(&Never, 1.0, 0.0, 1.0, &cfg).is_err());
        assert!(recursive_leverage_sampling(&Never, 1.0, 0.3, 0.0, &cfg).is_err());
    }
}
