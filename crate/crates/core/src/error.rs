use thiserror::Error;

/// Things that can go wrong while building or running a stencil computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Coordinates outside the interior of a field
    #[error("index ({i}, {j}, {k}) out of range for shape {shape:?}")]
    Index {
        i: usize,
        j: usize,
        k: usize,
        shape: [usize; 3],
    },

    /// Invalid argument to an operation
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inconsistent configuration (halo too small, invalid plan, ...)
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite output detected in strict mode
    #[error("non-finite value in output field {field} at ({i}, {j}, {k})")]
    Numeric {
        field: usize,
        i: usize,
        j: usize,
        k: usize,
    },

    /// The autotuner search space was empty after pruning
    #[error("empty search space: {0}")]
    EmptySearchSpace(String),

    /// Every candidate plan was rejected
    #[error("no valid plan; rejections: {}", .0.join("; "))]
    NoValidPlan(Vec<String>),

    /// Problem-spec or expression syntax error
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A benchmark step failed
    #[error("step {iteration} failed: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// I/O or serialization failure
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Process exit status for a verification failure.
pub const EXIT_VERIFY: i32 = 1;

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::EmptySearchSpace(_)
            | Error::NoValidPlan(_) => 2,
            Error::Index { .. } | Error::Numeric { .. } | Error::Step { .. } | Error::Io(_) => 3,
        }
    }
}

/// Read a configuration file; failures are configuration errors.
pub(crate) fn read_config(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}
