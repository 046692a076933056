use std::fmt;

use serde::Serialize;
use swlate_core::Error as CoreError;

/// Failure classes with stable process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    /// Bad configuration, schema violation, or bad flag (exit 2).
    Config,
    /// Unreadable, malformed, or invalid input data (exit 3).
    Data,
    /// The estimator or a learner failed on valid input (exit 4).
    Estimation,
}

impl Category {
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Estimation => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { category: Category::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { category: Category::Data, message: message.into() }
    }

    pub fn estimation(message: impl Into<String>) -> Self {
        CliError { category: Category::Estimation, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        self.category.exit_code()
    }

    /// One-line JSON object for standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "category": self.category,
                "exit_code": self.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let category = match e {
            CoreError::Argument(_) => Category::Config,
            CoreError::Validation(_) => Category::Data,
            CoreError::Numerical(_) | CoreError::Estimation(_) => Category::Estimation,
        };
        CliError { category, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
