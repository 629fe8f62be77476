use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ksembed::bench::verify::{run_suite, Suite};
use ksembed::bench::{
    configure_threads, emit_report, load_dataset, run_benchmark, Budget, DataFormat, KernelChoice, LoadOptions, Method,
    RunConfig,
};
use ksembed::rng::RandomSeed;

#[derive(Parser)]
#[command(
    name = "ksembed",
    version,
    about = "Sampled spectral embeddings and kernel ridge regression for polynomial and Gaussian kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit kernel ridge regression on a dataset and write a JSON report.
    Run(RunArgs),
    /// Run one of the oracle test batteries.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: DataFormat,
    /// poly:q=3, gaussian:r=1.0[,q=N], invpoly:q=N or taylor:a=a0/a1/...
    #[arg(long)]
    kernel: KernelChoice,
    #[arg(long, default_value = "adaptive")]
    method: Method,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    eps: f64,
    #[arg(long)]
    lambda: f64,
    /// Statistical dimension used to size the sample. Estimated on a
    /// subsample when neither this nor --samples is given.
    #[arg(long, conflicts_with = "samples")]
    mu: Option<f64>,
    /// Draw exactly this many features.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// CSV: the first line is a header.
    #[arg(long)]
    header: bool,
    /// CSV: zero-based target column (default: last).
    #[arg(long)]
    target_column: Option<usize>,
    /// CSV: single-character field separator.
    #[arg(long)]
    delimiter: Option<char>,
    /// Standardize features and scale the largest squared column norm to this value.
    #[arg(long)]
    normalize: Option<f64>,
    /// Hold out this fraction of the points as a test split.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Cap on the projection and sketch dimensions used inside the sampler.
    #[arg(long)]
    max_dim: Option<usize>,
    /// Fit the raw targets instead of subtracting their training mean.
    #[arg(long)]
    no_center: bool,
}

fn run(args: RunArgs) -> ksembed::Result<()> {
    let delimiter = match args.delimiter {
        Some(c) if c.is_ascii() => Some(c as u8),
        Some(c) => return Err(ksembed::Error::InvalidArgument(format!("delimiter {c:?} is not ASCII"))),
        None => None,
    };
    let options = LoadOptions {
        has_header: args.header,
        target_column: args.target_column,
        delimiter,
        normalize_radius: None,
    };
    let mut data = load_dataset(&args.data, args.format, &options)?;
    if let Some(f) = args.test_fraction {
        data = data.split(f, RandomSeed(args.seed).derive("split", 0))?;
    }
    if let Some(r) = args.normalize {
        data = data.normalize(r)?;
    }
    let budget = match (args.mu, args.samples) {
        (Some(mu), _) => Budget::Mu(mu),
        (None, Some(s)) => Budget::Samples(s),
        (None, None) => Budget::Estimated,
    };
    let mut config = RunConfig::new(args.method, args.kernel, args.eps, args.lambda, budget, args.seed);
    config.sampler.dimension_cap = args.max_dim;
    config.center_targets = !args.no_center;
    config.sampler.validate()?;
    let report = run_benchmark(&data, &config)?;
    emit_report(std::slice::from_ref(&report), &args.out)?;
    eprintln!(
        "{:?}: n={} s={} rounds={} train_rmse={:.6}{} in {:.1} ms -> {}",
        report.method,
        report.n_train,
        report.s,
        report.rounds,
        report.train_rmse,
        report
            .test_rmse
            .map(|r| format!(" test_rmse={r:.6}"))
            .unwrap_or_default(),
        report.timings_ms.total(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Verify { suite, seed } => run_suite(suite, seed).map(|outcomes| {
            for o in &outcomes {
                println!("{o}");
            }
            outcomes.iter().all(|o| o.passed)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
