use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gmmmap::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 1 usage, 2 input or parse, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        use gmmmap::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Invariant(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 1,
                E::DuplicateId(_)
                | E::UnknownId(_)
                | E::KindMismatch
                | E::ZeroWeight
                | E::DegenerateCovariance
                | E::DegenerateSegment => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
