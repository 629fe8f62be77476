//! Row norm sampling for the truncated Taylor lifting of the Gaussian kernel.

use ksembed::bench::verify::random_data;
use ksembed::linalg::gaussian_matrix;
use ksembed::oracles::dense_lifting_distribution;
use ksembed::rng::RandomSeed;
use ksembed::sampler::{empirical_frequencies, verify_row_norm_sampler, SamplerConfig};
use ksembed::taylor::{taylor_row_sampler, LiftedFeatureLayout, TaylorKernelSpec};

fn main() -> ksembed::Result<()> {
    let (d, n, q, lambda, draws) = (3, 4, 3, 0.1, 50_000);
    let x = random_data(d, n, Some(1.0), RandomSeed(1));
    let spec = TaylorKernelSpec::gaussian(q, 1.0)?;
    let b = gaussian_matrix(2, n, RandomSeed(2))?;

    let pi = taylor_row_sampler(&x, &spec, &b, lambda, draws, &SamplerConfig::with_seed(3))?;
    let exact = dense_lifting_distribution(&x, &spec, &b, lambda)?.keyed_by_lifting(LiftedFeatureLayout::new(d, q));
    let freq = empirical_frequencies(pi.samples.iter().map(|s| &s.index));

    let mut per_degree = vec![(0.0, 0.0); q + 1];
    for (idx, p) in &exact {
        per_degree[idx.block_degree()].0 += p;
        per_degree[idx.block_degree()].1 += freq.get(idx).copied().unwrap_or(0.0);
    }
    for (w, (p, seen)) in per_degree.iter().enumerate() {
        println!("degree {w}: exact mass {p:.4}, observed {seen:.4}");
    }
    let verdict = verify_row_norm_sampler(&freq, &exact, 0.25, draws)?;
    println!("passed={} worst ratio {:.3}", verdict.passed, verdict.worst_ratio);
    Ok(())
}
