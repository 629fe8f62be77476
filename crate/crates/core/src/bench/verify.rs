//! Oracle batteries behind `ksembed verify`. These are reduced versions of
//! the checks in the acceptance tests, sized to finish in seconds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::{empirical_risk, exact_krr_risk, fit_approx, fit_exact};
use crate::linalg::{
    gaussian_matrix, spectral_approx_check, statistical_dimension, symmetric_eigenvalues, DenseMatrix,
};
use crate::oracles::{dense_lifting_distribution, exact_row_norm_distribution, tensor_power_matrix};
use crate::poly::{poly_row_sampler, PolynomialSampler};
use crate::rng::RandomSeed;
use crate::sampler::{
    empirical_frequencies, recursive_leverage_sampling, verify_row_norm_sampler, FeatureIndex, RowSampler,
    SamplerConfig, SamplingMatrix, WeightedSample,
};
use crate::sketch::{build_sketch_tree, SketchShape};
use crate::sparse::SparseDataMatrix;
use crate::taylor::{taylor_row_sampler, LiftedFeatureLayout, TaylorKernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Samplers,
    Spectral,
    Krr,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "samplers" => Ok(Suite::Samplers),
            "spectral" => Ok(Suite::Spectral),
            "krr" => Ok(Suite::Krr),
            other => Err(Error::invalid(format!(
                "unknown suite {other:?}; use samplers, spectral or krr"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn outcome(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Samplers => samplers(seed),
        Suite::Spectral => spectral(seed),
        Suite::Krr => krr(seed),
    }
}

/// A random `d x n` matrix with entries uniform in `[-1, 1]`, columns
/// rescaled to squared norm at most `radius` when given.
pub fn random_data(d: usize, n: usize, radius: Option<f64>, seed: RandomSeed) -> SparseDataMatrix {
    let mut rng = seed.stream("random-data", 0);
    let mut m = DenseMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
    if let Some(r) = radius {
        for mut col in m.column_iter_mut() {
            let norm_sq = col.norm_squared();
            let target = r * rng.random_range(0.25..1.0);
            if norm_sq > 0.0 {
                col *= (target / norm_sq).sqrt();
            }
        }
    }
    SparseDataMatrix::from_dense(&m).expect("finite entries")
}

fn draw_check(
    name: String,
    pi: &SamplingMatrix,
    exact: &std::collections::HashMap<FeatureIndex, f64>,
) -> Result<CheckOutcome> {
    let freq = empirical_frequencies(pi.samples.iter().map(|s| &s.index));
    let v = verify_row_norm_sampler(&freq, exact, 0.25, pi.len())?;
    Ok(outcome(
        name,
        v.passed,
        format!(
            "{} draws, worst empirical/exact ratio {:.3} over {} indices",
            pi.len(),
            v.worst_ratio,
            v.tested
        ),
    ))
}

fn samplers(seed: u64) -> Result<Vec<CheckOutcome>> {
    let draws = 20_000;
    let mut out = Vec::new();
    for (d, n, q) in [(2, 3, 2), (3, 4, 3)] {
        let root = RandomSeed(seed).derive("verify-poly", (d * 100 + n * 10 + q) as u64);
        let x = random_data(d, n, None, root);
        let b = gaussian_matrix(2, n, root.derive("b", 0))?;
        let pi = poly_row_sampler(&x, q, &b, 0.5, draws, &SamplerConfig::with_seed(root.0))?;
        let exact = exact_row_norm_distribution(&tensor_power_matrix(&x, q)?, &b, 0.5)?.keyed_by_tensor(d, q);
        out.push(draw_check(
            format!("polynomial sampler d={d} n={n} q={q}"),
            &pi,
            &exact,
        )?);
    }
    for (d, n, q) in [(2, 3, 2), (3, 4, 3)] {
        let root = RandomSeed(seed).derive("verify-gauss", (d * 100 + n * 10 + q) as u64);
        let x = random_data(d, n, Some(1.0), root);
        let spec = TaylorKernelSpec::gaussian(q, 1.0)?;
        let b = gaussian_matrix(2, n, root.derive("b", 0))?;
        let pi = taylor_row_sampler(&x, &spec, &b, 0.5, draws, &SamplerConfig::with_seed(root.0))?;
        let exact = dense_lifting_distribution(&x, &spec, &b, 0.5)?.keyed_by_lifting(LiftedFeatureLayout::new(d, q));
        out.push(draw_check(format!("gaussian sampler d={d} n={n} q={q}"), &pi, &exact)?);
    }
    Ok(out)
}

fn spectral(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let (n, d, q, eps) = (32, 4, 2, 1.0 / 3.0);
    let x = random_data(d, n, None, RandomSeed(seed).derive("verify-spectral", 0));
    let k = KernelSpec::polynomial(q)?.kernel_matrix(&x);
    let eigs: Vec<f64> = symmetric_eigenvalues(&k).into_iter().map(|e| e.max(0.0)).collect();
    let lambda = eigs.iter().sum::<f64>() / 8.0;
    let mu = statistical_dimension(&eigs, lambda)?;
    let runs = 10;
    let mut passes = 0;
    for r in 0..runs {
        let config = SamplerConfig::with_seed(RandomSeed(seed).derive("verify-spectral-run", r).0);
        let sampler = PolynomialSampler::new(&x, q, config.clone())?;
        let pi = recursive_leverage_sampling(&sampler, lambda, eps, mu, &config)?;
        if spectral_approx_check(&k, &sampler.embed(&pi)?, lambda, eps)?.passed {
            passes += 1;
        }
    }
    out.push(outcome(
        "polynomial recursive sampling",
        passes * 10 >= runs * 9,
        format!("{passes}/{runs} runs within eps={eps:.3} at s_lambda={mu:.2}"),
    ));

    let (d, q, trees, probes) = (4, 3, 100, 5);
    let shape_eps = 0.1;
    let shape = SketchShape::for_accuracy(d, q, shape_eps, 0.05);
    let mut rng = RandomSeed(seed).stream("verify-sketch-probes", 0);
    let probes = DenseMatrix::from_fn(d, probes, |_, _| StandardNormal.sample(&mut rng));
    let norms: Vec<f64> = probes.column_iter().map(|c| c.norm_squared().powi(q as i32)).collect();
    let probe_data = SparseDataMatrix::from_dense(&probes)?;
    let mut violations = 0;
    for t in 0..trees {
        let tree = build_sketch_tree(
            d,
            q,
            shape.final_dim,
            shape.internal_dim,
            shape.osnap_sparsity,
            RandomSeed(seed).derive("verify-tree", t),
        )?;
        let out = tree.tensor_power_matrix(&probe_data)?;
        for (col, expect) in out.column_iter().zip(&norms) {
            if (col.norm_squared() - expect).abs() > shape_eps * expect {
                violations += 1;
            }
        }
    }
    let rate = violations as f64 / (trees as usize * probes.ncols()) as f64;
    out.push(outcome(
        "tensor sketch norm preservation",
        rate <= 0.08,
        format!("violation rate {rate:.3} over {trees} trees"),
    ));
    Ok(out)
}

fn krr(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let n = 20;
    let x = random_data(3, n, Some(1.0), RandomSeed(seed).derive("verify-krr", 0));
    let k = KernelSpec::Taylor(TaylorKernelSpec::gaussian(10, 1.0)?).kernel_matrix(&x);
    let lambda = 0.05;
    let f: Vec<f64> = (0..n).map(|c| (3.0 * x.get(0, c)).sin()).collect();

    let l = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("verify", "kernel not positive definite"))?;
    let z = l.l().transpose();
    let identity = SamplingMatrix::new(
        (0..n)
            .map(|i| WeightedSample::new(FeatureIndex::row(i), 1.0, 1))
            .collect(),
        None,
    );
    let exact = fit_exact(&k, &f, lambda)?.fitted_values(&k)?;
    let approx = fit_approx(&z, &f, lambda, &identity)?.fitted_values(&z)?;
    let worst = exact
        .iter()
        .zip(&approx)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
        .fold(0.0, f64::max);
    out.push(outcome(
        "cholesky embedding reproduces exact fit",
        worst <= 1e-6,
        format!("max relative deviation {worst:.2e}"),
    ));

    let sigma: f64 = 0.3;
    let draws = 200;
    let mut rng = RandomSeed(seed).stream("verify-krr-noise", 0);
    let mut risks = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y: Vec<f64> = f
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + sigma * z
            })
            .collect();
        let pred = fit_exact(&k, &y, lambda)?.fitted_values(&k)?;
        risks.push(empirical_risk(&pred, &f)?);
    }
    let mean = risks.iter().sum::<f64>() / draws as f64;
    let sd = (risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    let se = sd / (draws as f64).sqrt();
    let closed = exact_krr_risk(&k, &f, sigma * sigma, lambda)?;
    out.push(outcome(
        "exact KRR risk closed form",
        (mean - closed).abs() <= 3.0 * se,
        format!("Monte Carlo {mean:.5} +- {se:.5} vs closed form {closed:.5}"),
    ));
    Ok(out)
}
