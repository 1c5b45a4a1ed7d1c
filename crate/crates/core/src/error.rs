use thiserror::Error;

pub type Result<T> = std::result::Result<T, CorfError>;

/// Convergence state of an iterative fit, carried by [`CorfError::Convergence`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective: f64,
}

#[derive(Debug, Error)]
pub enum CorfError {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("single-class response: both classes are required")]
    SingleClass,

    #[error("degenerate node: class counts are both zero")]
    DegenerateNode,

    #[error("degenerate continuous co-data: column '{0}' is constant")]
    DegenerateCoData(String),

    #[error("empty forest: no splits were recorded")]
    EmptyForest,

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(
        "co-data model did not converge after {} iterations (gradient norm {:.3e})",
        .0.iterations,
        .0.gradient_norm
    )]
    Convergence(Diagnostics),

    #[error("not a CoRF model")]
    NotCorfModel,

    #[error("truncated container")]
    TruncatedContainer,

    #[error("corrupt container: checksum mismatch")]
    CorruptContainer,

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorfError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CorfError::Contract(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CorfError::InvalidInput(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CorfError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            CorfError::Convergence(_) => 3,
            CorfError::Io { .. } => 4,
            _ => 2,
        }
    }
}
