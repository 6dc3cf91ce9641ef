//! Privacy-preserving question answering over anonymized knowledge graphs.
//!
//! Entities reach the language model only as opaque identifiers annotated
//! with abstract concepts inferred from their relations. Questions are
//! turned into concept paths that drive embedding-based triplet retrieval,
//! and answers are mapped back to names on the caller's side.

pub mod config;
pub mod context;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod pipeline;
pub mod privacy;
pub mod prompt;
pub mod provider;
pub mod relation;
pub mod retrieval;
pub mod sim;
pub mod structure;

pub use config::Config;
pub use error::{PipelineError, Result};
pub use eval::{
    build_filtered_subset, convert_dataset, is_correct, report_costs, run_benchmark, BenchOptions,
    BenchmarkItem, DatasetFormat, EvalResult, GoldAnswer, MatchMode,
};
pub use generator::Flag;
pub use graph::{Direction, GraphHandle, Mid, MidPattern, Relation, Triplet};
pub use pipeline::{Ablation, Pipeline, QuestionResult, TopicEntity};
pub use privacy::{LeakPolicy, NamedAnswer, PrivacyGuard, PrivacyMap};
pub use provider::{CostReport, Embedder, LlmBackend, ModuleTag};
pub use retrieval::{EngineSettings, RetrievalOutcome, RetrievalParams};
