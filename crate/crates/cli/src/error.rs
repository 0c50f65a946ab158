//! Error-to-exit-code mapping.
//!
//! Exit 2 marks input and contract violations, exit 3 numerical or
//! degenerate failures (background covariance that will not factor,
//! targets with too few informative bands). The split is part of the
//! CLI's stable interface.

use plume_core::compare::CompareError;
use plume_core::cube::CubeError;
use plume_core::io::IoError;
use plume_core::lut::LutError;
use plume_core::quantify::QuantifyError;
use plume_core::retrieval::RetrievalError;
use plume_core::sensor::SensorError;
use plume_core::sim::SimError;
use plume_core::target::TargetError;

pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn contract(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONTRACT,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::contract(e.to_string())
    }
}

impl From<SensorError> for CliError {
    fn from(e: SensorError) -> Self {
        CliError::contract(e.to_string())
    }
}

impl From<LutError> for CliError {
    fn from(e: LutError) -> Self {
        CliError::contract(e.to_string())
    }
}

impl From<CubeError> for CliError {
    fn from(e: CubeError) -> Self {
        CliError::contract(e.to_string())
    }
}

impl From<TargetError> for CliError {
    fn from(e: TargetError) -> Self {
        match &e {
            TargetError::DegenerateTarget { .. } => CliError::numerical(e.to_string()),
            _ => CliError::contract(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match &e {
            RetrievalError::DegenerateBackground { .. }
            | RetrievalError::DegenerateTarget { .. } => CliError::numerical(e.to_string()),
            RetrievalError::Target(inner) => match inner {
                TargetError::DegenerateTarget { .. } => CliError::numerical(e.to_string()),
                _ => CliError::contract(e.to_string()),
            },
            _ => CliError::contract(e.to_string()),
        }
    }
}

impl From<QuantifyError> for CliError {
    fn from(e: QuantifyError) -> Self {
        CliError::contract(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Retrieval(inner) => inner.into(),
            SimError::Target(inner) => inner.into(),
            other => CliError::contract(other.to_string()),
        }
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        CliError::contract(e.to_string())
    }
}
