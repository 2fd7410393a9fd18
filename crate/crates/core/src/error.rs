use std::path::PathBuf;

/// Errors produced anywhere in the simulator and its algorithms.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("upload infeasible: task {task_id} has {data_size} bits but zero bandwidth")]
    InfeasibleUpload { task_id: u64, data_size: f64 },

    #[error("constraint {constraint} violated: {detail}")]
    ConstraintViolation {
        constraint: &'static str,
        detail: String,
    },

    #[error(
        "slicing infeasible in region {region}: {resource} demand {demand:.6e} exceeds the largest option {capacity:.6e} (shortfall {shortfall:.6e})"
    )]
    InfeasibleSlice {
        region: usize,
        resource: &'static str,
        demand: f64,
        capacity: f64,
        shortfall: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config field `{field}`: {reason}")]
    ConfigField { field: String, reason: String },

    #[error("instance of size {size} exceeds the enumeration bound {bound}")]
    TooLarge { size: usize, bound: usize },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::ConfigField { .. } | Error::Unknown { .. } => 2,
            Error::InfeasibleSlice { .. } => 3,
            Error::Divergence(_) | Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}
