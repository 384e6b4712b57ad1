//! Simulation driver for the PV curtailment controllers: configuration,
//! the closed-loop run, method comparison, sweeps and artifact export.

pub mod config;
pub mod output;
pub mod sim;
pub mod sweep;

use std::path::Path;

pub use config::{MethodEntry, RunConfig};
pub use sim::{MethodRun, Prepared};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Output(#[from] output::OutputError),
}

#[derive(Debug)]
pub struct RunResult {
    pub runs: Vec<MethodRun>,
    pub artifacts: output::RunArtifacts,
}

/// Runs all configured methods and writes their artifacts to `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunResult, RunError> {
    let (_, runs) = sim::run_all(cfg)?;
    let artifacts = output::write_run(out, cfg, &runs)?;
    Ok(RunResult { runs, artifacts })
}
