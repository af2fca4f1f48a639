use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Summary(String),
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: hermite_ito::Error,
    },
    #[error(transparent)]
    Core(#[from] hermite_ito::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration and usage problems, 3 for numeric and simulation failures.
    pub fn exit_code(&self) -> i32 {
        use hermite_ito::Error as E;
        let core = match self {
            CliError::Config(_) | CliError::Summary(_) => return 2,
            CliError::Run { source, .. } => source,
            CliError::Core(e) => e,
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => return 3,
        };
        match core {
            E::Config(_) | E::Usage(_) => 2,
            _ => 3,
        }
    }
}

/// Tags a core error with the run (experiment, level, path) it came from.
pub fn in_run(run: impl Into<String>) -> impl FnOnce(hermite_ito::Error) -> CliError {
    let run = run.into();
    move |source| CliError::Run { run, source }
}
