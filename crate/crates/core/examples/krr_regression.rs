//! Kernel ridge regression with a sampled Gaussian embedding against the
//! exact solver.

use ksembed::bench::verify::random_data;
use ksembed::kernel::KernelSpec;
use ksembed::krr::{empirical_risk, exact_krr_risk, fit_approx, fit_exact, rmse};
use ksembed::rng::RandomSeed;
use ksembed::sampler::{recursive_leverage_sampling, RowSampler, SamplerConfig};
use ksembed::taylor::{TaylorKernelSpec, TaylorSampler};

fn main() -> ksembed::Result<()> {
    let (n, lambda, eps) = (120, 0.05, 1.0 / 3.0);
    let x = random_data(3, n, Some(1.0), RandomSeed(21));
    let y: Vec<f64> = (0..n).map(|c| (3.0 * x.get(0, c)).sin() + 0.5 * x.get(1, c)).collect();
    let spec = TaylorKernelSpec::gaussian_for(1.0, n, 1.0)?;
    let k = KernelSpec::Taylor(spec.clone()).kernel_matrix(&x);

    let exact = fit_exact(&k, &y, lambda)?;
    let exact_fit = exact.fitted_values(&k)?;

    let config = SamplerConfig::with_seed(22);
    let sampler = TaylorSampler::new(&x, spec.clone(), config.clone())?;
    let pi = recursive_leverage_sampling(&sampler, lambda, eps, 6.0, &config)?;
    let z = sampler.embed(&pi)?;
    let approx = fit_approx(&z, &y, lambda, &pi)?;
    let approx_fit = approx.fitted_values(&z)?;

    println!("exact:   train rmse {:.4}", rmse(&exact_fit, &y)?);
    println!("sampled: train rmse {:.4} with s={}", rmse(&approx_fit, &y)?, pi.len());
    println!(
        "mean squared gap between the two fits {:.2e}",
        empirical_risk(&approx_fit, &exact_fit)?
    );
    println!(
        "exact risk at noise variance 0.1: {:.4}",
        exact_krr_risk(&k, &y, 0.1, lambda)?
    );

    let test = random_data(3, 5, Some(1.0), RandomSeed(23));
    let kernel = KernelSpec::Taylor(spec);
    let a = exact.predict(&kernel, &x, &test)?;
    let b = approx.predict(&kernel, &x, &test)?;
    for (u, v) in a.iter().zip(&b) {
        println!("test prediction exact {u:+.4} sampled {v:+.4}");
    }
    Ok(())
}
