use serde::Serialize;
use serde_json::Value;
use stratx::{DesignError, EstimateError, SimError};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_MAX_DRAWS: i32 = 3;
pub const EXIT_DOF: i32 = 4;
pub const EXIT_SIMULATION: i32 = 5;

/// A failure reported to the user: one JSON line on stderr and an exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: &'a str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<&'a Value>,
}

impl CliError {
    pub fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into(), details: None }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(EXIT_INVALID, "invalid_input", message)
    }

    pub fn with_details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).ok();
        self
    }

    pub fn json_line(&self) -> String {
        let line = ErrorLine { error: self.kind, message: &self.message, exit_code: self.code, details: self.details.as_ref() };
        serde_json::to_string(&line).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind))
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::MaxDrawsExceeded { draws } => {
                CliError::new(EXIT_MAX_DRAWS, "max_draws_exceeded", e.to_string()).with_details(serde_json::json!({ "draws": draws }))
            }
            other => CliError::new(EXIT_INVALID, "design", other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::DegreesOfFreedomExhausted { units, selected } => CliError::new(EXIT_DOF, "degrees_of_freedom", e.to_string())
                .with_details(serde_json::json!({ "units": units, "selected": selected })),
            other => CliError::new(EXIT_INVALID, "estimate", other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::new(EXIT_INVALID, "simulation_config", e.to_string()),
            SimError::Io(_) | SimError::Csv(_) | SimError::Json(_) => CliError::new(EXIT_INVALID, "output", e.to_string()),
            other => CliError::new(EXIT_SIMULATION, "simulation_cell", other.to_string()),
        }
    }
}

impl From<stratx::IngestError> for CliError {
    fn from(e: stratx::IngestError) -> Self {
        CliError::new(EXIT_INVALID, "ingest", e.to_string())
    }
}

impl From<stratx::DataError> for CliError {
    fn from(e: stratx::DataError) -> Self {
        CliError::new(EXIT_INVALID, "data", e.to_string())
    }
}

impl From<stratx::CheckError> for CliError {
    fn from(e: stratx::CheckError) -> Self {
        CliError::new(EXIT_INVALID, "check", e.to_string())
    }
}

impl From<stratx::NumericsError> for CliError {
    fn from(e: stratx::NumericsError) -> Self {
        CliError::new(EXIT_INVALID, "numerics", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_INVALID, "io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(EXIT_INVALID, "json", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new(EXIT_INVALID, "csv", e.to_string())
    }
}
