use std::fmt;

use mfmix::{Error, ParamError, SimError};
use serde::Serialize;

pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_SIMULATION: i32 = 4;
pub const EXIT_SWEEP: i32 = 5;

/// Failure reported on stderr as a single JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub code: i32,
    pub error: &'static str,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn validation(field: Option<String>, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            error: "validation",
            field,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            error: "io",
            field: None,
            message: message.into(),
        }
    }

    pub fn param(e: &ParamError) -> Self {
        let field = match e {
            ParamError::Group { group, source } => {
                let key = if *group == "cooperative" { "c" } else { "nc" };
                format!("{key}.{}", source.field())
            }
            other => other.field().to_string(),
        };
        Self::validation(Some(field), e.to_string())
    }

    /// Errors raised while solving.
    pub fn solve(e: Error) -> Self {
        match e {
            Error::Param(p) => Self::param(&p),
            Error::Riccati(r) => Self {
                code: EXIT_BLOWUP,
                error: "riccati_blow_up",
                field: None,
                message: r.to_string(),
            },
            other => Self::simulation(other),
        }
    }

    /// Errors raised while simulating; configuration problems stay code 2.
    pub fn simulation(e: Error) -> Self {
        match e {
            Error::Param(p) => Self::param(&p),
            Error::Sim(SimError::Config(m)) => Self::validation(Some("sim".into()), m),
            Error::Condition(c) => Self::validation(Some("candidates".into()), c.to_string()),
            other => Self {
                code: EXIT_SIMULATION,
                error: "simulation",
                field: None,
                message: other.to_string(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plain struct");
        v["exit_code"] = self.code.into();
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::io(e.to_string())
    }
}
