//! Exact ridge leverage score sampling on an explicit feature matrix.

use ksembed::linalg::{gaussian_matrix, ridge_leverage_scores, spectral_approx_check};
use ksembed::oracles::{embed_rows, leverage_score_sampling};
use ksembed::rng::RandomSeed;

fn main() -> ksembed::Result<()> {
    let phi = gaussian_matrix(32, 32, RandomSeed(31))?;
    let k = phi.transpose() * &phi;
    let lambda = 10.0;
    let scores = ridge_leverage_scores(&phi, lambda)?;
    let s_lambda: f64 = scores.iter().sum();
    println!(
        "s_lambda = {s_lambda:.3}, largest score {:.3}",
        scores.iter().copied().fold(0.0, f64::max)
    );

    let eps = 1.0 / 3.0;
    let s = (4.0 * 32f64.log2() * s_lambda / (0.25 * eps * eps)).ceil() as usize;
    let pi = leverage_score_sampling(&phi, lambda, s, RandomSeed(32))?;
    let check = spectral_approx_check(&k, &embed_rows(&phi, &pi)?, lambda, eps)?;
    println!(
        "s={s}: ratios [{:.3}, {:.3}], passed={}",
        check.min_ratio, check.max_ratio, check.passed
    );
    Ok(())
}
