use std::path::PathBuf;

/// Errors produced by the deblurring library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The fixed-point iteration blew up; carries the residual trace seen so far.
    #[error("fixed-point map is not contractive: residual grew from {first:.3e} to {last:.3e} over {} iterations", residuals.len())]
    NonContraction {
        residuals: Vec<f64>,
        first: f64,
        last: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("conjugate gradient did not converge in {iters} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iters: usize, residual: f64 },

    /// Direct inversion is impossible because the kernel spectrum vanishes.
    #[error("blur operator is ill-conditioned: {} frequencies with |K(f)| < 1e-12, first {:?}", frequencies.len(), frequencies.first())]
    IllConditioned { frequencies: Vec<(usize, usize)> },

    #[error("step size {step} would diverge (must be below {limit})")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
