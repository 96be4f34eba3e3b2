use std::path::PathBuf;

/// Errors surfaced by the engine.
///
/// The variants map onto the process exit codes used by the CLI: `Io`,
/// `Format`, `Data` and `Memory` are data errors (exit 3), `Numeric` is a
/// numeric error (exit 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (bad magic, truncated header, unparsable CSV).
    #[error("format error: {0}")]
    Format(String),

    /// Violated domain precondition (label out of range, dimension mismatch,
    /// non-finite entry, plan mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure inside a solver (eigensolver non-convergence,
    /// matrix not positive definite, eigenvalue below the clipping floor).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The exact solver would exceed the configured memory budget.
    #[error(
        "allocating the {n}x{n} Gram matrix needs {required} bytes but the budget is {budget} \
         bytes (set FABR_MEM_BUDGET_BYTES to raise it, or use the rank-capped solver via --nu)"
    )]
    Memory {
        n: usize,
        required: u64,
        budget: u64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
