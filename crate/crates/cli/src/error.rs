use powerdiv::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Library(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Io(_) => 7,
            CliError::Library(e) => match e {
                Error::UnknownBus(_) | Error::UnknownLine(..) | Error::EmptyLineSet => 2,
                Error::Parse { .. }
                | Error::InvalidCase(_)
                | Error::DuplicateLine(..)
                | Error::Disconnected(..)
                | Error::ZeroSeriesAdmittance(..)
                | Error::NoSlack
                | Error::MultipleSlack(_)
                | Error::UnsupportedBranch { .. }
                | Error::DimensionMismatch { .. } => 3,
                Error::NonConvergence { .. } | Error::SingularJacobian(_) => 4,
                Error::AllocationRefused(_) | Error::Precondition(_) => 5,
                Error::RankDeficient { .. } | Error::Singular(_) => 6,
            },
        }
    }
}
