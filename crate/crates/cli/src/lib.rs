//! Command-line frontend and file formats for the part-embedding consensus
//! clustering pipeline.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod pet;
pub mod report;
pub mod selftest;
pub mod tables;

use std::fmt;

/// Top-level error, carrying the process exit code class: validation
/// failures exit 1, I/O and file-format failures exit 2.
#[derive(Debug)]
pub struct AppError {
    message: String,
    exit_code: i32,
}

impl AppError {
    pub fn validation(message: impl Into<String>) -> Self {
        AppError {
            message: message.into(),
            exit_code: 1,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        AppError {
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.exit_code
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

impl From<partcc_core::Error> for AppError {
    fn from(e: partcc_core::Error) -> Self {
        AppError::validation(e.to_string())
    }
}

impl From<pet::PetError> for AppError {
    fn from(e: pet::PetError) -> Self {
        AppError::io(e.to_string())
    }
}

impl From<tables::TableError> for AppError {
    fn from(e: tables::TableError) -> Self {
        match e {
            tables::TableError::Invalid(inner) => AppError::validation(inner.to_string()),
            other => AppError::io(other.to_string()),
        }
    }
}
