//! TOML run configuration.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::PipelineError;
use crate::eval::BenchOptions;
use crate::graph::{flatten_cvt, load_graph, GraphSource, MidPattern, SparqlEndpoint};
use crate::pipeline::{Ablation, Pipeline};
use crate::privacy::{build_privacy_map, LeakPolicy, PrivacyGuard, PrivacyMap};
use crate::prompt::PromptSet;
use crate::provider::{
    CachedEmbedder, Embedder, HashingEmbedder, LlmBackend, LlmClient, OpenAiChat, OpenAiEmbedder,
    PlaybackLlm,
};
use crate::retrieval::RetrievalParams;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub graph: GraphConfig,
    pub llm: LlmConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub bench: BenchOptions,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    /// Directory of `<template>.txt` overrides.
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Tab-separated triples file. Exactly one of `triples` and `endpoint`.
    pub triples: Option<PathBuf>,
    pub names: Option<PathBuf>,
    /// SPARQL endpoint URL.
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cvt_prefixes: Vec<String>,
    pub mid_pattern: Option<String>,
    /// Collapse CVT mediators of a file graph at load time.
    #[serde(default = "yes")]
    pub flatten_cvt: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    /// Replays a recorded JSONL fixture.
    Fixture { path: PathBuf },
    Openai {
        base_url: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Openai {
        base_url: String,
        model: String,
        dim: usize,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashing { dim: default_dim() }
    }
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub width: usize,
    pub depth: usize,
    pub top_k: usize,
    pub fused_generator: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let params = RetrievalParams::default();
        Self {
            width: params.width,
            depth: params.depth,
            top_k: 5,
            fused_generator: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub leak_policy: LeakPolicy,
    /// Saved `mid\tname` map, needed for audits against a remote graph.
    pub map: Option<PathBuf>,
    /// Where to write the audit log after a run.
    pub audit_log: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn api_key(var: &str) -> Result<String, PipelineError> {
    std::env::var(var).map_err(|_| config_error(format!("environment variable {var} is not set")))
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut config: Config =
            toml::from_str(text).map_err(|e| config_error(format!("invalid config: {e}")))?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.graph.triples.as_mut(),
            self.graph.names.as_mut(),
            self.prompts_dir.as_mut(),
            self.privacy.map.as_mut(),
            self.privacy.audit_log.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let LlmConfig::Fixture { path } = &mut self.llm {
            fix(path);
        }
    }

    pub fn mid_pattern(&self) -> Result<MidPattern, PipelineError> {
        match &self.graph.mid_pattern {
            Some(p) => MidPattern::new(p).map_err(PipelineError::from),
            None => Ok(MidPattern::default()),
        }
    }

    pub fn params(&self) -> RetrievalParams {
        RetrievalParams {
            width: self.retrieval.width,
            depth: self.retrieval.depth,
        }
    }

    pub fn prompts(&self) -> Result<PromptSet, PipelineError> {
        match &self.prompts_dir {
            Some(dir) => Ok(PromptSet::load_dir(dir)?),
            None => Ok(PromptSet::default()),
        }
    }

    fn backend(&self) -> Result<Arc<dyn LlmBackend>, PipelineError> {
        Ok(match &self.llm {
            LlmConfig::Fixture { path } => Arc::new(
                PlaybackLlm::from_file(path)
                    .map_err(|e| config_error(format!("fixture {}: {e}", path.display())))?,
            ),
            LlmConfig::Openai {
                base_url,
                model,
                api_key_env,
                timeout_secs,
            } => Arc::new(OpenAiChat {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key: api_key(api_key_env)?,
                timeout_secs: *timeout_secs,
            }),
        })
    }

    fn embedder(&self) -> Result<Arc<dyn Embedder>, PipelineError> {
        let inner: Arc<dyn Embedder> = match &self.embedder {
            EmbedderConfig::Hashing { dim } => {
                if *dim == 0 {
                    return Err(config_error("embedder dim must be positive"));
                }
                Arc::new(HashingEmbedder::new(*dim))
            }
            EmbedderConfig::Openai {
                base_url,
                model,
                dim,
                api_key_env,
                timeout_secs,
            } => Arc::new(OpenAiEmbedder {
                base_url: base_url.clone(),
                model: model.clone(),
                dim: *dim,
                api_key: api_key(api_key_env)?,
                timeout_secs: *timeout_secs,
            }),
        };
        Ok(Arc::new(CachedEmbedder::new(inner)))
    }

    /// Loads the graph and wires every component. `ablation` overrides the
    /// configured switches.
    pub fn build_pipeline(&self, ablation: Option<Ablation>) -> Result<Pipeline, PipelineError> {
        let ablation = ablation.unwrap_or(self.ablation);
        if self.retrieval.width == 0 || self.retrieval.depth == 0 {
            return Err(config_error("width and depth must be positive"));
        }
        let settings = ablation.engine_settings(
            self.params(),
            self.retrieval.top_k,
            self.retrieval.fused_generator,
        )?;
        let mid_pattern = self.mid_pattern()?;
        let source = match (&self.graph.triples, &self.graph.endpoint) {
            (Some(triples), None) => GraphSource::File {
                triples: triples.clone(),
                names: self.graph.names.clone(),
                cvt_prefixes: self.graph.cvt_prefixes.clone(),
                mid_pattern: mid_pattern.clone(),
            },
            (None, Some(url)) => GraphSource::Remote {
                endpoint: SparqlEndpoint::new(url.clone()),
                cvt_prefixes: self.graph.cvt_prefixes.clone(),
            },
            _ => {
                return Err(config_error(
                    "graph needs exactly one of `triples` and `endpoint`",
                ))
            }
        };
        let mut graph = load_graph(source)?;
        if self.graph.flatten_cvt && !graph.is_remote() && !self.graph.cvt_prefixes.is_empty() {
            graph = flatten_cvt(&graph);
        }
        let map = match &self.privacy.map {
            Some(path) => PrivacyMap::load(path)
                .map_err(|e| config_error(format!("privacy map {}: {e}", path.display())))?,
            None => build_privacy_map(&graph),
        };
        let prompts = self.prompts()?;
        let guard =
            PrivacyGuard::new(map, self.privacy.leak_policy).with_public_templates(&prompts);
        Ok(Pipeline {
            graph,
            client: LlmClient::new(self.backend()?, guard),
            embedder: self.embedder()?,
            prompts,
            mid_pattern,
            settings,
        })
    }
}
