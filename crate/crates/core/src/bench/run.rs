//! One end-to-end regression run: sample, embed, fit, predict, score.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::bench::dataset::Dataset;
use crate::bench::report::{PhaseTimings, RunReport, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::{fit_approx, fit_exact, rmse};
use crate::linalg::{spectral_approx_check, statistical_dimension, symmetric_eigenvalues};
use crate::poly::PolynomialSampler;
use crate::rng::RandomSeed;
use crate::sampler::{recursive_sampling_with_budget, RidgeSchedule, RowSampler, SampleBudget, SamplerConfig};
use crate::sparse::SparseDataMatrix;
use crate::taylor::{TaylorKernelSpec, TaylorSampler};

/// Largest training set the exact method accepts.
pub const EXACT_LIMIT: usize = 20_000;
/// Largest training set for which approximate runs also report a spectral check.
pub const ORACLE_SCALE: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The full recursive sampler.
    Adaptive,
    /// One round of row norm sampling with `B` empty.
    Rownorm,
    /// Exact kernel ridge regression.
    Exact,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaptive" => Ok(Method::Adaptive),
            "rownorm" | "row-norm" => Ok(Method::Rownorm),
            "exact" => Ok(Method::Exact),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}; use adaptive, rownorm or exact"
            ))),
        }
    }
}

/// A kernel as written on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelChoice {
    /// `poly:q=3`
    Poly { q: usize },
    /// `gaussian:r=1.0` or `gaussian:r=1.0,q=12`; `q` defaults to the
    /// truncation degree for the training set size.
    Gaussian { r: f64, q: Option<usize> },
    /// `invpoly:q=20`
    InversePolynomial { q: usize },
    /// `taylor:a=1/0.5/0.25`
    Taylor { coefficients: Vec<f64> },
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, params) = s.split_once(':').unwrap_or((s, ""));
        let mut q = None;
        let mut r = None;
        let mut coefficients = None;
        for kv in params.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("kernel parameter {kv:?} is not key=value")))?;
            let bad = || Error::invalid(format!("bad value for kernel parameter {key}: {value:?}"));
            match key.trim() {
                "q" => q = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
                "r" => r = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                "a" => {
                    coefficients = Some(
                        value
                            .split('/')
                            .map(|v| v.trim().parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::invalid(format!("bad Taylor coefficients {value:?}")))?,
                    )
                }
                other => return Err(Error::invalid(format!("unknown kernel parameter {other:?}"))),
            }
        }
        let need_q = || q.ok_or_else(|| Error::invalid(format!("kernel {family} needs q=<degree>")));
        match family.trim().to_ascii_lowercase().as_str() {
            "poly" | "polynomial" => Ok(KernelChoice::Poly { q: need_q()? }),
            "gaussian" | "rbf" => Ok(KernelChoice::Gaussian {
                r: r.ok_or_else(|| Error::invalid("gaussian kernel needs r=<radius>"))?,
                q,
            }),
            "invpoly" | "inverse_polynomial" => Ok(KernelChoice::InversePolynomial { q: need_q()? }),
            "taylor" => Ok(KernelChoice::Taylor {
                coefficients: coefficients.ok_or_else(|| Error::invalid("taylor kernel needs a=<a0>/<a1>/..."))?,
            }),
            other => Err(Error::invalid(format!(
                "unknown kernel family {other:?}; use poly, gaussian, invpoly or taylor"
            ))),
        }
    }
}

impl KernelChoice {
    /// The concrete kernel for a training set of `n` points.
    pub fn resolve(&self, n: usize) -> Result<KernelSpec> {
        match self {
            KernelChoice::Poly { q } => KernelSpec::polynomial(*q),
            KernelChoice::Gaussian { r, q: Some(q) } => Ok(KernelSpec::Taylor(TaylorKernelSpec::gaussian(*q, *r)?)),
            KernelChoice::Gaussian { r, q: None } => {
                Ok(KernelSpec::Taylor(TaylorKernelSpec::gaussian_for(*r, n, 1.0)?))
            }
            KernelChoice::InversePolynomial { q } => Ok(KernelSpec::Taylor(TaylorKernelSpec::inverse_polynomial(*q))),
            KernelChoice::Taylor { coefficients } => Ok(KernelSpec::Taylor(TaylorKernelSpec::from_coefficients(
                coefficients.clone(),
            )?)),
        }
    }
}

/// How many features to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// `s` from a known statistical dimension.
    Mu(f64),
    /// A fixed number of rows.
    Samples(usize),
    /// `s` from a statistical dimension estimated on a subsample.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub kernel: KernelChoice,
    pub epsilon: f64,
    pub lambda: f64,
    pub budget: Budget,
    pub sampler: SamplerConfig,
    /// Fit on targets minus their training mean and add it back to predictions.
    pub center_targets: bool,
}

impl RunConfig {
    pub fn new(method: Method, kernel: KernelChoice, epsilon: f64, lambda: f64, budget: Budget, seed: u64) -> Self {
        RunConfig {
            method,
            kernel,
            epsilon,
            lambda,
            budget,
            sampler: SamplerConfig::with_seed(seed),
            center_targets: true,
        }
    }
}

/// Estimates `s_lambda(K)` from the eigenvalues of the kernel on `m` random
/// points, scaled up by `n/m`.
pub fn estimate_statistical_dimension(
    x: &SparseDataMatrix,
    kernel: &KernelSpec,
    lambda: f64,
    m: usize,
    seed: RandomSeed,
) -> Result<f64> {
    let n = x.n_cols();
    let m = m.clamp(1, n.max(1));
    let mut idx = sample_indices(&mut seed.stream("mu-estimate", 0), n, m).into_vec();
    idx.sort_unstable();
    let sub = x.select_columns(&idx)?;
    let scale = n as f64 / m as f64;
    let eigs: Vec<f64> = symmetric_eigenvalues(&kernel.kernel_matrix(&sub))
        .into_iter()
        .map(|e| e.max(0.0) * scale)
        .collect();
    statistical_dimension(&eigs, lambda)
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs one configuration on `data`, scoring on its test split when present.
pub fn run_benchmark(data: &Dataset, config: &RunConfig) -> Result<RunReport> {
    let x = &data.features;
    let n = x.n_cols();
    if n == 0 {
        return Err(Error::invalid("dataset has no points"));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be positive, got {}",
            config.lambda
        )));
    }
    if config.method != Method::Exact && !(config.epsilon > 0.0 && config.epsilon <= 1.0 / 3.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1/3], got {}",
            config.epsilon
        )));
    }
    let kernel = config.kernel.resolve(n)?;
    if let KernelSpec::Taylor(spec) = &kernel {
        spec.check_radius(x)?;
    }
    let offset = if config.center_targets {
        data.targets.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let y: Vec<f64> = data.targets.iter().map(|t| t - offset).collect();
    let score = |pred: Vec<f64>, truth: &[f64]| -> Result<f64> {
        rmse(&pred.iter().map(|p| p + offset).collect::<Vec<_>>(), truth)
    };
    let mut timings = PhaseTimings::default();
    let mut report = RunReport {
        schema_version: SCHEMA_VERSION,
        method: config.method,
        kernel: kernel.clone(),
        n_train: n,
        n_test: data.test.as_ref().map_or(0, |t| t.1.len()),
        dim: x.n_rows(),
        s: 0,
        rounds: 0,
        mu: None,
        epsilon: config.epsilon,
        lambda: config.lambda,
        seed: config.sampler.seed.0,
        timings_ms: timings,
        train_rmse: 0.0,
        test_rmse: None,
        spectral: None,
        solve_shift: config.lambda,
        target_offset: offset,
    };

    if config.method == Method::Exact {
        if n > EXACT_LIMIT {
            return Err(Error::invalid(format!(
                "exact KRR is limited to {EXACT_LIMIT} training points, got {n}; use adaptive or rownorm"
            )));
        }
        let t = Instant::now();
        let k = kernel.kernel_matrix(x);
        timings.embedding = ms_since(t);
        let t = Instant::now();
        let model = fit_exact(&k, &y, config.lambda)?;
        timings.solve = ms_since(t);
        let t = Instant::now();
        report.train_rmse = score(model.fitted_values(&k)?, &data.targets)?;
        if let Some((xt, yt)) = &data.test {
            report.test_rmse = Some(score(model.predict(&kernel, x, xt)?, yt)?);
        }
        timings.predict = ms_since(t);
        report.s = n;
        report.solve_shift = model.solve_shift;
        report.timings_ms = timings;
        return Ok(report);
    }

    let sampler: Box<dyn RowSampler + '_> = match &kernel {
        KernelSpec::Polynomial { degree } => Box::new(PolynomialSampler::new(x, *degree, config.sampler.clone())?),
        KernelSpec::Taylor(spec) => Box::new(TaylorSampler::new(x, spec.clone(), config.sampler.clone())?),
    };
    let budget = match config.budget {
        Budget::Mu(mu) => {
            report.mu = Some(mu);
            SampleBudget::StatisticalDimension(mu)
        }
        Budget::Samples(s) => SampleBudget::Rows(s),
        Budget::Estimated => {
            let mu = estimate_statistical_dimension(x, &kernel, config.lambda, 1000, config.sampler.seed)?;
            report.mu = Some(mu);
            SampleBudget::StatisticalDimension(mu.max(1.0))
        }
    };

    let t = Instant::now();
    let pi = match config.method {
        Method::Adaptive => {
            recursive_sampling_with_budget(&*sampler, config.lambda, config.epsilon, budget, &config.sampler)?
        }
        Method::Rownorm => {
            let s = match budget {
                SampleBudget::StatisticalDimension(mu) => config.sampler.sample_size(mu, config.epsilon, n),
                SampleBudget::Rows(s) => s,
            };
            let schedule = RidgeSchedule::new(sampler.frobenius_sq(), config.epsilon, config.lambda)?;
            let empty = crate::linalg::DenseMatrix::zeros(0, n);
            let mut pi = sampler.sample(&empty, schedule.lambda_0, s, config.sampler.seed.derive("round", 1))?;
            pi.rounds = 1;
            pi
        }
        Method::Exact => unreachable!("handled above"),
    };
    timings.sampling = ms_since(t);
    report.s = pi.len();
    report.rounds = pi.rounds;

    let t = Instant::now();
    let z = sampler.embed(&pi)?;
    timings.embedding = ms_since(t);

    let t = Instant::now();
    let model = fit_approx(&z, &y, config.lambda, &pi)?;
    timings.solve = ms_since(t);
    report.solve_shift = model.solve_shift;

    let t = Instant::now();
    report.train_rmse = score(model.fitted_values(&z)?, &data.targets)?;
    if let Some((xt, yt)) = &data.test {
        report.test_rmse = Some(score(model.predict(&kernel, x, xt)?, yt)?);
    }
    timings.predict = ms_since(t);
    report.timings_ms = timings;

    if n <= ORACLE_SCALE {
        let k = kernel.kernel_matrix(x);
        report.spectral = Some(spectral_approx_check(&k, &z, config.lambda, config.epsilon)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = RandomSeed(seed).rng();
        let cols: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|_| (0..3).map(|i| (i, rng.random_range(-0.5..0.5))).collect())
            .collect();
        let x = SparseDataMatrix::from_columns(3, cols).unwrap();
        let y = (0..n)
            .map(|c| (2.0 * x.get(0, c)).sin() + x.get(1, c) * x.get(2, c) + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn parses_kernels() {
        assert_eq!("poly:q=3".parse::<KernelChoice>().unwrap(), KernelChoice::Poly { q: 3 });
        assert_eq!(
            "gaussian:r=1.0".parse::<KernelChoice>().unwrap(),
            KernelChoice::Gaussian { r: 1.0, q: None }
        );
        assert_eq!(
            "gaussian:r=0.5,q=9".parse::<KernelChoice>().unwrap(),
            KernelChoice::Gaussian { r: 0.5, q: Some(9) }
        );
        assert_eq!(
            "taylor:a=1/0.5".parse::<KernelChoice>().unwrap(),
            KernelChoice::Taylor {
                coefficients: vec![1.0, 0.5]
            }
        );
        for bad in [
            "poly",
            "poly:q=x",
            "gaussian:q=3",
            "laplace:r=1",
            "poly:z=1",
            "taylor:a=1/x",
        ] {
            assert!(bad.parse::<KernelChoice>().is_err(), "{bad}");
        }
        assert_eq!("RowNorm".parse::<Method>().unwrap(), Method::Rownorm);
        assert!("fast".parse::<Method>().is_err());
        let spec = KernelChoice::Gaussian { r: 1.0, q: None }.resolve(100).unwrap();
        assert_eq!(spec.degree(), 14);
    }

    #[test]
    fn runs_are_reproducible() {
        let data = synthetic(60, 1).split(0.25, RandomSeed(2)).unwrap();
        let config = RunConfig::new(
            Method::Adaptive,
            KernelChoice::Gaussian { r: 1.0, q: Some(4) },
            1.0 / 3.0,
            0.05,
            Budget::Samples(40),
            7,
        );
        let a = run_benchmark(&data, &config).unwrap();
        let b = run_benchmark(&data, &config).unwrap();
        assert_eq!(a.without_timings(), b.without_timings());
        assert_eq!(a.s, 40);
        assert!(a.train_rmse >= 0.0 && a.test_rmse.unwrap() >= 0.0);
        assert!(a.spectral.is_some());
    }

    #[test]
    fn exact_method_and_rownorm() {
        let data = synthetic(50, 3).split(0.2, RandomSeed(4)).unwrap();
        let mut config = RunConfig::new(
            Method::Exact,
            KernelChoice::Poly { q: 2 },
            1.0 / 3.0,
            0.01,
            Budget::Samples(30),
            1,
        );
        let exact = run_benchmark(&data, &config).unwrap();
        assert_eq!(exact.s, 40);
        config.method = Method::Rownorm;
        let rownorm = run_benchmark(&data, &config).unwrap();
        assert_eq!(rownorm.rounds, 1);
        assert_eq!(rownorm.s, 30);
    }

    #[test]
    fn radius_violation_is_reported() {
        let data = synthetic(10, 5);
        let config = RunConfig::new(
            Method::Adaptive,
            KernelChoice::Gaussian { r: 0.01, q: Some(3) },
            0.3,
            0.1,
            Budget::Samples(5),
            1,
        );
        assert!(matches!(run_benchmark(&data, &config), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn estimated_dimension_is_exact_on_full_sample() {
        let data = synthetic(30, 6);
        let kernel = KernelSpec::polynomial(2).unwrap();
        let est = estimate_statistical_dimension(&data.features, &kernel, 0.1, 30, RandomSeed(1)).unwrap();
        let eigs = symmetric_eigenvalues(&kernel.kernel_matrix(&data.features));
        let exact = statistical_dimension(&eigs.iter().map(|e| e.max(0.0)).collect::<Vec<_>>(), 0.1).unwrap();
        assert!((est - exact).abs() < 1e-12);
    }

    #[test]
    fn centering_removes_a_constant_shift() {
        let base = synthetic(40, 3);
        let shifted = Dataset::new(base.features.clone(), base.targets.iter().map(|t| t + 100.0).collect()).unwrap();
        for method in [Method::Exact, Method::Adaptive] {
            let config = RunConfig::new(
                method,
                KernelChoice::Poly { q: 2 },
                1.0 / 3.0,
                0.05,
                Budget::Samples(30),
                4,
            );
            let a = run_benchmark(&base, &config).unwrap();
            let b = run_benchmark(&shifted, &config).unwrap();
            assert!((b.target_offset - a.target_offset - 100.0).abs() < 1e-9);
            assert!((a.train_rmse - b.train_rmse).abs() < 1e-8);
            let raw = RunConfig {
                center_targets: false,
                ..config.clone()
            };
            let c = run_benchmark(&shifted, &raw).unwrap();
            assert_eq!(c.target_offset, 0.0);
            assert!(c.train_rmse > b.train_rmse);
        }
    }
}
