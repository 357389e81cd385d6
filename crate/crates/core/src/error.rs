use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("not a sequence file (bad magic)")]
    NotSequenceFile,

    #[error("not a checkpoint file (bad magic)")]
    NotCheckpointFile,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stitching gap: frames {start}..{end} not covered")]
    StitchGap { start: usize, end: usize },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("missing prerequisite {path}: {hint}")]
    Missing { path: PathBuf, hint: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Short machine-readable category, used by the CLI for error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::EmptyInput(_) | Error::Index(_) => "data",
            Error::Config(_) => "config",
            Error::Data(_) | Error::StitchGap { .. } => "data",
            Error::Parse { .. } | Error::NotSequenceFile | Error::NotCheckpointFile => "data",
            Error::Version { .. } | Error::Load(_) => "data",
            Error::MissingGradient(_) | Error::Numerical(_) => "numerical",
            Error::Layer { source, .. } => source.kind(),
            Error::Missing { .. } | Error::Io { .. } => "data",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" => 2,
            "numerical" => 4,
            _ => 3,
        }
    }
}
