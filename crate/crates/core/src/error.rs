use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("cannot merge occupied with free")]
    KindMismatch,
    #[error("merged weight must be positive")]
    ZeroWeight,
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("unknown id {0}")]
    UnknownId(u64),
    #[error("AUC needs both occupied and free samples")]
    SingleLabel,
    #[error("frame has no pose")]
    MissingPose,
    #[error("pgm parse error at byte {offset}: {kind}")]
    Pgm { offset: usize, kind: PgmError },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    MapFile(#[from] MapFileError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("bad magic (expected P5)")]
    BadMagic,
    #[error("malformed header field")]
    BadHeader,
    #[error("unsupported maxval {0} (expected 65535)")]
    BadMaxval(u32),
    #[error("dimension mismatch: file {file_w}x{file_h}, camera {cam_w}x{cam_h}")]
    DimensionMismatch { file_w: usize, file_h: usize, cam_w: usize, cam_h: usize },
    #[error("truncated payload: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapFileError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionMismatch(u16),
    #[error("truncated map file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid record {index}: {msg}")]
    BadRecord { index: u64, msg: String },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
