use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent inputs: dimensions, files, config blocks.
    #[error("config: {0}")]
    Config(String),

    /// A scalarization evaluated outside its domain.
    #[error("domain: {0}")]
    Domain(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric: {0}")]
    Numeric(String),

    /// The inner linear recursion produced a non-finite iterate.
    #[error("divergence at outer iteration {outer:?}, inner step {inner}")]
    Divergence { outer: Option<usize>, inner: usize },

    /// An exact enumeration would exceed its term budget.
    #[error("budget: enumeration needs {required} terms, budget is {budget}")]
    Budget { required: f64, budget: f64 },

    /// An oracle does not support the given MDP shape.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
            Error::Unsupported(_) => 2,
            Error::Domain(_) | Error::Numeric(_) | Error::Divergence { .. } => 3,
            Error::Budget { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
            Error::Divergence { .. } => "divergence",
            Error::Budget { .. } => "budget",
            Error::Unsupported(_) => "unsupported",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
