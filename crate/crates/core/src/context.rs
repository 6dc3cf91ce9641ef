use crate::graph::MidPattern;
use crate::prompt::PromptSet;
use crate::provider::{Embedder, QuestionLlm};

/// Per-question services shared by the pipeline stages.
#[derive(Clone, Copy)]
pub struct QuestionContext<'a> {
    pub llm: &'a QuestionLlm<'a>,
    pub embedder: &'a dyn Embedder,
    pub prompts: &'a PromptSet,
    pub mid_pattern: &'a MidPattern,
}
