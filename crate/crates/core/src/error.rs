use thiserror::Error;

/// Errors raised by the estimation, detection and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate dispersion: sigma_z = {sigma_z}")]
    DegenerateDispersion { sigma_z: f64 },

    #[error("degenerate transport: dispersion factor is zero")]
    DegenerateTransport,

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("measurement incompatible with support (evidence is zero)")]
    IncompatibleMeasurement,

    #[error("observation impossible under all run-length hypotheses")]
    ObservationImpossible,

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("pass {pass}: {source}")]
    AtPass {
        pass: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{file}: line {line}: {message}")]
    Input {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{0}")]
    MissingInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn at_pass(self, pass: usize) -> Self {
        Error::AtPass {
            pass,
            source: Box::new(self),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for input/config problems, 1 for domain failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Input { .. }
            | Error::MissingInput(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
            Error::AtPass { source, .. } | Error::Context { source, .. } => source.exit_code(),
            _ => 1,
        }
    }

    /// Strips pass/context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPass { source, .. } | Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
