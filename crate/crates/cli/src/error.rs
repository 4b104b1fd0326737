use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Estimation(_) => "estimation",
            CliError::Io(_) => "io",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Report {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"kind\":\"{}\"}}", self.kind()))
    }
}

impl From<l2f_core::Error> for CliError {
    fn from(e: l2f_core::Error) -> Self {
        use l2f_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Domain(_) | E::Config(_) | E::Shape { .. } | E::Support { .. } => CliError::Validation(msg),
            E::NoPeak(_) | E::Estimation(_) | E::Numeric { .. } => CliError::Estimation(msg),
            E::Io(_) | E::Csv(_) | E::Json(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
