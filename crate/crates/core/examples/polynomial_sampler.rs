//! Draw rows of the degree-q tensor power in proportion to their whitened
//! squared norms, then compare against the brute-force distribution.

use ksembed::bench::verify::random_data;
use ksembed::linalg::gaussian_matrix;
use ksembed::oracles::{exact_row_norm_distribution, tensor_power_matrix};
use ksembed::poly::poly_row_sampler;
use ksembed::rng::RandomSeed;
use ksembed::sampler::{empirical_frequencies, verify_row_norm_sampler, SamplerConfig};

fn main() -> ksembed::Result<()> {
    let (d, n, q, lambda, draws) = (3, 5, 3, 0.1, 50_000);
    let x = random_data(d, n, None, RandomSeed(7));
    let b = gaussian_matrix(2, n, RandomSeed(8))?;

    let pi = poly_row_sampler(&x, q, &b, lambda, draws, &SamplerConfig::with_seed(9))?;
    let exact = exact_row_norm_distribution(&tensor_power_matrix(&x, q)?, &b, lambda)?.keyed_by_tensor(d, q);
    let freq = empirical_frequencies(pi.samples.iter().map(|s| &s.index));

    let mut top: Vec<_> = exact.iter().collect();
    top.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("{:>12}  {:>9}  {:>9}", "index", "exact", "observed");
    for (idx, p) in top.iter().take(8) {
        let seen = freq.get(*idx).copied().unwrap_or(0.0);
        println!("{:>12}  {:>9.5}  {:>9.5}", format!("{:?}", idx.indices), p, seen);
    }

    let verdict = verify_row_norm_sampler(&freq, &exact, 0.25, draws)?;
    println!(
        "passed={} worst ratio {:.3} over {} indices",
        verdict.passed, verdict.worst_ratio, verdict.tested
    );
    Ok(())
}
