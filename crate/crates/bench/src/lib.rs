//! Benchmark driver: case setup, operator-splitting loops, diagnostics,
//! energy spectra and file export.

pub mod cases;
pub mod config;
pub mod diagnostics;
pub mod export;
pub mod poiseuille;
pub mod runner;
pub mod spectrum;

pub use config::{BenchmarkConfig, Case, ProjectionKind};
pub use diagnostics::{DiagnosticsReport, ReportRow};
pub use runner::{convergence_study, run_case, ConvergenceRow, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pmhdg_core::Error),
    #[error("step {step} (t = {time:.6}): {source}")]
    Step {
        step: usize,
        time: f64,
        source: pmhdg_core::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("spectrum: {0}")]
    Spectrum(String),
}
