use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad parameters supplied by a caller or a config file.
    #[error("configuration error: {0}")]
    Config(String),
    /// Inputs that are individually valid but incompatible with each other.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numerical self-check failed.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("simulation error (seed {seed:#018x}, t = {time}): {message}")]
    Simulation { seed: u64, time: f64, message: String },
    #[error("resource error: {0}")]
    Resource(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
