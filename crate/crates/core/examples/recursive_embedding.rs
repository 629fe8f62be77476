//! Build a spectral embedding of a polynomial kernel with the recursive
//! driver and check it against the exact kernel matrix.

use ksembed::bench::verify::random_data;
use ksembed::kernel::KernelSpec;
use ksembed::linalg::{spectral_approx_check, statistical_dimension, symmetric_eigenvalues};
use ksembed::poly::{poly_embed_out_of_sample, PolynomialSampler};
use ksembed::rng::RandomSeed;
use ksembed::sampler::{recursive_leverage_sampling, RowSampler, SamplerConfig};

fn main() -> ksembed::Result<()> {
    let (n, d, q, eps) = (64, 6, 2, 1.0 / 3.0);
    let x = random_data(d, n, None, RandomSeed(11));
    let k = KernelSpec::polynomial(q)?.kernel_matrix(&x);
    let eigs: Vec<f64> = symmetric_eigenvalues(&k).into_iter().map(|e| e.max(0.0)).collect();
    let lambda = eigs.iter().sum::<f64>() / 20.0;
    let mu = statistical_dimension(&eigs, lambda)?;

    let config = SamplerConfig::with_seed(12);
    let sampler = PolynomialSampler::new(&x, q, config.clone())?;
    let pi = recursive_leverage_sampling(&sampler, lambda, eps, mu, &config)?;
    let z = sampler.embed(&pi)?;
    let check = spectral_approx_check(&k, &z, lambda, eps)?;
    println!(
        "s_lambda={mu:.2} lambda={lambda:.3} s={} rounds={}",
        pi.len(),
        pi.rounds
    );
    println!(
        "generalized eigenvalues in [{:.3}, {:.3}], passed={}",
        check.min_ratio, check.max_ratio, check.passed
    );

    // Features of a new point line up with the training embedding.
    let z0 = poly_embed_out_of_sample(&x.column_vector(0), &pi)?;
    let gap = z0
        .iter()
        .zip(z.column(0).iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("out-of-sample features of point 0 differ from column 0 by {gap:.2e}");
    Ok(())
}
