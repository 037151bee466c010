//! Internals of the `pfme` binary: layered configuration, document I/O,
//! and the five subcommands.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;

/// Error classes mapped to the exit-code contract: 2 usage/config,
/// 3 backend failure, 4 data problems.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Backend(String),
    Data(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Backend(_) => 3,
            AppError::Data(_) => 4,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Backend(m) => write!(f, "backend error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<pfme_core::pipeline::PipelineError> for AppError {
    fn from(e: pfme_core::pipeline::PipelineError) -> Self {
        use pfme_core::pipeline::PipelineError;
        use pfme_core::retrieval::RetrievalError;
        match &e {
            PipelineError::Retrieval(RetrievalError::Backend(_))
            | PipelineError::Retrieval(RetrievalError::Rank(_)) => {
                AppError::Backend(e.to_string())
            }
            _ => AppError::Data(e.to_string()),
        }
    }
}
