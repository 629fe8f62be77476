//! Run the built-in oracle batteries.

use ksembed::bench::verify::{run_suite, Suite};

fn main() -> ksembed::Result<()> {
    for suite in [Suite::Samplers, Suite::Krr] {
        for outcome in run_suite(suite, 42)? {
            println!("{outcome}");
        }
    }
    Ok(())
}
