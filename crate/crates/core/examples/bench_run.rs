//! Library equivalent of `ksembed run` on a synthetic dataset.

use ksembed::bench::report::reports_to_json;
use ksembed::bench::verify::random_data;
use ksembed::bench::{run_benchmark, Budget, Dataset, KernelChoice, Method, RunConfig};
use ksembed::rng::RandomSeed;

fn main() -> ksembed::Result<()> {
    let n = 300;
    let x = random_data(5, n, None, RandomSeed(41));
    let y: Vec<f64> = (0..n).map(|c| x.get(0, c) * x.get(1, c) - x.get(2, c)).collect();
    let data = Dataset::new(x, y)?.split(0.2, RandomSeed(42))?.normalize(1.0)?;

    let mut reports = Vec::new();
    for method in [Method::Exact, Method::Rownorm, Method::Adaptive] {
        let config = RunConfig::new(
            method,
            KernelChoice::Gaussian { r: 1.0, q: None },
            1.0 / 3.0,
            1e-2,
            Budget::Samples(150),
            43,
        );
        reports.push(run_benchmark(&data, &config)?);
    }
    println!("{}", reports_to_json(&reports)?);
    Ok(())
}
