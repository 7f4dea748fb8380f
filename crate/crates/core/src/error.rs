use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Every variant maps onto a short stable code (see [`Error::code`]) which the
/// command-line front end prints as `ERROR <code>: <message>`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("gradient check builder is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("invalid structure {id}: {msg}")]
    Structure { id: String, msg: String },

    #[error("invalid sequence: {0}")]
    Sequence(String),

    #[error("{0}")]
    Undefined(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{} row error(s) in {path}: {}", .errors.len(), .errors.join("; "))]
    Rows { path: String, errors: Vec<String> },

    #[error("no admissible preference pair in assays: {}", .0.join(", "))]
    NoPairs(Vec<String>),

    #[error("no admissible positions in the mutable pool")]
    EmptyPool,

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("refusing to train: {0}")]
    RefuseToTrain(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scorer {scorer}: {msg}")]
    Scorer { scorer: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code for this error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::TensorShape { .. } => "DIM001",
            Error::Domain { .. } => "DOM001",
            Error::NonFinite { .. } => "NUM001",
            Error::Usage(_) => "USE001",
            Error::NonDeterministic(_) => "GRD001",
            Error::Structure { .. } => "STR001",
            Error::Sequence(_) => "SEQ001",
            Error::Undefined(_) => "MET001",
            Error::Data(_) => "DAT001",
            Error::Rows { .. } => "DAT002",
            Error::NoPairs(_) => "PAI001",
            Error::EmptyPool => "GEN001",
            Error::Diverged { .. } => "TRN001",
            Error::RefuseToTrain(_) => "TRN002",
            Error::Checkpoint(_) => "CKP001",
            Error::Config(_) => "CFG002",
            Error::Scorer { .. } => "SCR001",
            Error::Io { .. } => "IO001",
            Error::Json(_) => "JSN001",
            Error::Csv(_) => "CSV001",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
