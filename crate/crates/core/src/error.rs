use thiserror::Error;

use crate::graph::GraphError;
use crate::prompt::PromptError;
use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl PipelineError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Provider(_) => 3,
            PipelineError::Graph(crate::graph::GraphError::Remote { .. }) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
