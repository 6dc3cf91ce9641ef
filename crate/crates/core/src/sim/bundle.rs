use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::SimWorld;
use crate::error::PipelineError;
use crate::eval::write_items;
use crate::provider::{FixtureRecord, LlmBackend, RecordingLlm};
use crate::retrieval::EngineSettings;

/// Files that let the command-line tool replay a world without a model.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: PathBuf,
    pub triples: PathBuf,
    pub items: PathBuf,
    pub fixture: PathBuf,
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Config(format!("writing {}: {e}", path.display()))
}

/// Runs every question of `world` (pipeline and chain-of-thought) through a
/// recorder and writes the graph, items, fixture and a config into `dir`.
pub fn write_bundle(
    world: &SimWorld,
    dir: &Path,
    settings: EngineSettings,
) -> Result<Bundle, PipelineError> {
    let recorder = Arc::new(RecordingLlm::new(world.llm()));
    let backend: Arc<dyn LlmBackend> = recorder.clone();
    let pipeline = world.pipeline_with(backend, settings);
    let items = world.items();
    for item in &items {
        pipeline.answer_question(&item.question, &item.topic_entities)?;
        pipeline.chain_of_thought(&item.question, &item.topic_entities)?;
    }

    let bundle = Bundle {
        config: dir.join("config.toml"),
        triples: dir.join("graph.tsv"),
        items: dir.join("items.jsonl"),
        fixture: dir.join("fixture.jsonl"),
    };
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    fs::write(&bundle.triples, world.to_tsv()).map_err(|e| io_error(&bundle.triples, e))?;
    write_items(&items, &bundle.items).map_err(|e| io_error(&bundle.items, e))?;
    FixtureRecord::write_jsonl(&recorder.records(), &bundle.fixture)
        .map_err(|e| io_error(&bundle.fixture, e))?;

    let prefixes: Vec<String> = super::cvt_prefixes()
        .iter()
        .map(|p| format!("\"{p}\""))
        .collect();
    let config = format!(
        "[graph]\ntriples = \"graph.tsv\"\ncvt_prefixes = [{}]\n\n\
         [llm]\nprovider = \"fixture\"\npath = \"fixture.jsonl\"\n\n\
         [retrieval]\nwidth = {}\ndepth = {}\ntop_k = {}\nfused_generator = {}\n\n\
         [ablation]\nstructure_abstraction = {}\nrelation_filter = {}\nentity_abstraction = {}\n",
        prefixes.join(", "),
        settings.params.width,
        settings.params.depth,
        settings.abstraction.top_k,
        settings.fused_generator,
        settings.structure_abstraction,
        settings.abstraction.filter,
        settings.abstraction.abstraction,
    );
    fs::write(&bundle.config, config).map_err(|e| io_error(&bundle.config, e))?;
    Ok(bundle)
}
