//! IO, file formats, and pipeline orchestration for the path
//! supervision toolkit: TSV graph loading, JSONL notes/paths/datasets,
//! the safetensors-compatible tensor container, a pipeline config with
//! flag overrides, and the command implementations behind the `kgpf`
//! binary.

pub mod config;
pub mod fsutil;
pub mod graph_io;
pub mod pipeline;
pub mod records;
pub mod tensorfile;

use std::fmt;

/// Command-level error taxonomy; the binary maps variants to exit
/// codes (usage/config = 1, data = 2, internal = 3).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<graph_io::GraphIoError> for CliError {
    fn from(err: graph_io::GraphIoError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<records::JsonlError> for CliError {
    fn from(err: records::JsonlError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<tensorfile::TensorFileError> for CliError {
    fn from(err: tensorfile::TensorFileError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<kgpf_core::merge::MergeError> for CliError {
    fn from(err: kgpf_core::merge::MergeError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<kgpf_core::objective::ObjectiveError> for CliError {
    fn from(err: kgpf_core::objective::ObjectiveError) -> Self {
        CliError::Internal(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}
