use std::fmt;

use hkg_core::error::ErrorCategory;
use hkg_core::HkgError;

/// Exit-code category of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Io,
    Internal,
    Usage,
    Config,
    Data,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Io | Category::Internal => 1,
            Category::Usage => 2,
            Category::Config => 3,
            Category::Data => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::Internal => "internal",
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Data => "data",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
    /// Extra lines printed after the error line (usage text).
    pub detail: Option<String>,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
            detail: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Category::Data, message)
    }

    /// Adds a path (or other context) in front of the message.
    pub fn context(mut self, ctx: impl fmt::Display) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // single line, so callers can split on the first `: `
        write!(f, "error[{}]: {}", self.category.name(), self.message.replace('\n', " "))
    }
}

impl From<HkgError> for CliError {
    fn from(e: HkgError) -> Self {
        let category = match e.category() {
            ErrorCategory::Config => Category::Config,
            ErrorCategory::Data => Category::Data,
            ErrorCategory::Io => Category::Io,
            ErrorCategory::Internal => Category::Internal,
        };
        CliError::new(category, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(Category::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(Category::Internal, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
