use mmncd_core::datagen::DataError;
use mmncd_core::evalkit::EvalError;
use mmncd_core::numkit::NumError;
use mmncd_core::stlclu::ClusterError;
use mmncd_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Internal(_) => 1,
            Self::Usage(_) => 2,
            Self::Numerical(_) => 3,
            Self::Incompatible(_) => 4,
            Self::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(io) => Self::Io(io.to_string()),
            other => Self::Usage(other.to_string()),
        }
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::NonFinite { .. } | NumError::Degenerate { .. } => Self::Numerical(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => Self::Io(io.to_string()),
            EvalError::Degenerate { .. } => Self::Numerical(e.to_string()),
            other => Self::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            return Self::Numerical(e.to_string());
        }
        match e {
            TrainError::Incompatible(_) => Self::Incompatible(e.to_string()),
            TrainError::Io(io) => Self::Io(io.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Eval(ev) => ev.into(),
            TrainError::Invariant(_) => Self::Internal(e.to_string()),
            other => Self::Usage(other.to_string()),
        }
    }
}
