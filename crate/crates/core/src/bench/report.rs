//! JSON run reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::run::Method;
use crate::error::Result;
use crate::kernel::KernelSpec;
use crate::linalg::SpectralCheck;

pub const SCHEMA_VERSION: u32 = 1;

/// Wall-clock milliseconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub sampling: f64,
    pub embedding: f64,
    pub solve: f64,
    pub predict: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.sampling + self.embedding + self.solve + self.predict
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub method: Method,
    pub kernel: KernelSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    /// Embedding dimension (number of sampled features, or `n` for exact).
    pub s: usize,
    pub rounds: usize,
    pub mu: Option<f64>,
    pub epsilon: f64,
    pub lambda: f64,
    pub seed: u64,
    pub timings_ms: PhaseTimings,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    pub spectral: Option<SpectralCheck>,
    pub solve_shift: f64,
    /// Subtracted from the training targets before fitting.
    #[serde(default)]
    pub target_offset: f64,
}

impl RunReport {
    /// The report with every timing zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings_ms: PhaseTimings::default(),
            ..self.clone()
        }
    }
}

pub fn reports_to_json(reports: &[RunReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

/// Writes `reports` as a JSON array.
pub fn emit_report(reports: &[RunReport], path: impl AsRef<Path>) -> Result<()> {
    let mut text = reports_to_json(reports)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
