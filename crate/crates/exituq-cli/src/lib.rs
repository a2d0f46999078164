//! Library half of the `exituq` command-line tool: run configuration,
//! command implementations, and the error-to-exit-code mapping. The binary
//! in `main.rs` is a thin argument-parsing wrapper over this.

pub mod commands;
pub mod config;

use exituq_core::baselines::BaselineError;
use exituq_core::distill::DistillError;
use exituq_core::evaluation::EvalError;
use exituq_core::gnn::GnnError;
use exituq_core::graphdata::DataError;
use exituq_core::uncertainty::UncertaintyError;

/// Failure classes with distinct exit codes: configuration/usage problems
/// exit 2, training divergence exits 3, everything else exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Diverged(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Diverged(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn classify_distill(err: DistillError) -> CliError {
    match err {
        DistillError::Diverged { .. } => CliError::Diverged(err.to_string()),
        DistillError::Config(_) => CliError::Usage(err.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

impl From<DistillError> for CliError {
    fn from(err: DistillError) -> Self {
        classify_distill(err)
    }
}

impl From<BaselineError> for CliError {
    fn from(err: BaselineError) -> Self {
        match err {
            BaselineError::Distill(d) => classify_distill(d),
            BaselineError::Config(_) => CliError::Usage(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        match err {
            EvalError::Distill(d) => classify_distill(d),
            EvalError::Baseline(b) => CliError::from(b),
            EvalError::InvalidInput(_) => CliError::Usage(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<GnnError> for CliError {
    fn from(err: GnnError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<UncertaintyError> for CliError {
    fn from(err: UncertaintyError) -> Self {
        CliError::Usage(err.to_string())
    }
}
