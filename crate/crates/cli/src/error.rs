use std::io;
use std::path::PathBuf;

use flowforge_core::dataflow::PipelineError;
use flowforge_core::mesh::MeshError;
use flowforge_core::perfmodel::ModelError;
use flowforge_core::streaming::StreamError;
use flowforge_core::AssemblyError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_STALL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Mesh { path: PathBuf, source: MeshError },
    #[error("{0}")]
    Assembly(#[from] AssemblyError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Stream(#[from] StreamError),
    #[error("{0}")]
    Model(#[from] ModelError),
}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::WatchdogStall { .. } => EXIT_STALL,
        PipelineError::Assembly(_) => EXIT_VERIFY,
        PipelineError::Config(_) | PipelineError::Graph(_) => EXIT_USAGE,
        _ => EXIT_VERIFY,
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Model(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Mesh { .. } => EXIT_IO,
            CliError::Assembly(_) => EXIT_VERIFY,
            CliError::Pipeline(e) => pipeline_code(e),
            CliError::Stream(StreamError::Config(_)) => EXIT_USAGE,
            CliError::Stream(e) => e.pipeline_error().map_or(EXIT_VERIFY, pipeline_code),
        }
    }
}
