use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgabs_core::eval::{costs_from_log, read_items, run_benchmark_with_log, write_items};
use kgabs_core::{
    build_filtered_subset, convert_dataset, report_costs, Ablation, Config, DatasetFormat,
    MatchMode, Mid, Pipeline, PipelineError, TopicEntity,
};
use log::{info, warn};

#[derive(Parser)]
#[command(
    name = "kgabs",
    version,
    about = "Question answering over anonymized knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question.
    Ask(AskArgs),
    /// Run a benchmark file and report Hits@1.
    Bench(BenchArgs),
    /// Keep the items a question-only baseline gets wrong.
    Filter(FilterArgs),
    /// Per-question cost table from a run log.
    Costs(CostsArgs),
    /// Convert a WebQSP, CWQ or GrailQA dump into benchmark items.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Score candidates against the question instead of a concept path.
    #[arg(long)]
    no_sa: bool,
    /// Skip the embedding filter before entity abstraction.
    #[arg(long)]
    no_ra_filter: bool,
    /// Show bare identifiers instead of abstracted concepts.
    #[arg(long)]
    no_ra_abstraction: bool,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<(Config, Pipeline)> {
        let mut config = Config::load(&self.config)?;
        if let Some(w) = self.width {
            config.retrieval.width = w;
        }
        if let Some(d) = self.depth {
            config.retrieval.depth = d;
        }
        let ablation = Ablation {
            structure_abstraction: config.ablation.structure_abstraction && !self.no_sa,
            relation_filter: config.ablation.relation_filter && !self.no_ra_filter,
            entity_abstraction: config.ablation.entity_abstraction && !self.no_ra_abstraction,
            ..config.ablation
        };
        let pipeline = config.build_pipeline(Some(ablation))?;
        Ok((config, pipeline))
    }
}

#[derive(Args)]
struct AskArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, short)]
    question: String,
    /// Topic entity as `NAME=MID`; repeatable.
    #[arg(long = "topic", short, required = true)]
    topics: Vec<String>,
    /// Write the run log (JSON lines) here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print the full result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Benchmark items, one JSON object per line.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Require exact name equality instead of containment.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the evaluation result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct CostsArgs {
    /// Run log written by `ask` or `bench`.
    #[arg(long)]
    log: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Webqsp,
    Cwq,
    Grailqa,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Webqsp => DatasetFormat::Webqsp,
            Format::Cwq => DatasetFormat::Cwq,
            Format::Grailqa => DatasetFormat::Grailqa,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long)]
    input: PathBuf,
    /// Optional file of record ids to keep, one per line.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_topic(raw: &str) -> anyhow::Result<TopicEntity> {
    let (name, mid) = raw
        .rsplit_once('=')
        .ok_or_else(|| PipelineError::Config(format!("topic `{raw}` is not NAME=MID")))?;
    let mid = Mid::new(mid.trim()).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(TopicEntity {
        name: name.trim().to_string(),
        mid,
    })
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_audit(config: &Config, pipeline: &Pipeline) -> anyhow::Result<()> {
    if let Some(path) = &config.privacy.audit_log {
        pipeline
            .client
            .guard()
            .log()
            .write_jsonl(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn ask(args: AskArgs) -> anyhow::Result<()> {
    let topics = args
        .topics
        .iter()
        .map(|t| parse_topic(t))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (config, pipeline) = args.run.load()?;
    let result = pipeline.answer_question(&args.question, &topics);
    write_audit(&config, &pipeline)?;
    let result = result?;
    if let Some(path) = &args.log {
        write_lines(path, &result.run_log())?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        for answer in &result.answers {
            println!("{}", answer.text);
        }
        info!(
            "{} iteration(s), forced={}, {} call(s)",
            result.outcome.iterations, result.outcome.forced, result.outcome.cost.llm_calls
        );
    }
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let (config, pipeline) = args.run.load()?;
    let items = read_items(&args.items)?;
    let mut options = config.bench;
    if let Some(r) = args.repeats {
        options.repeats = r;
    }
    if let Some(w) = args.workers {
        options.workers = w;
    }
    if args.strict {
        options.match_mode = MatchMode::Strict;
    }
    let (result, log) = run_benchmark_with_log(&pipeline, &items, &options)?;
    write_audit(&config, &pipeline)?;
    if let Some(path) = &args.log {
        write_lines(path, &log)?;
    }
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&result)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "hits@1={:.4} correct={} total={} repeats={}",
        result.hits_at_1, result.correct, result.total, result.repeats
    );
    print!("{}", report_costs(&result.cost));
    if failed > 0 {
        warn!("{failed} run(s) failed and were scored incorrect");
    }
    if failed == result.records.len() {
        if let Some(reason) = result.records.iter().find_map(|r| r.error.clone()) {
            return Err(anyhow!(AllRunsFailed(reason)));
        }
    }
    Ok(())
}

fn filter(args: FilterArgs) -> anyhow::Result<()> {
    let (config, pipeline) = args.run.load()?;
    let items = read_items(&args.items)?;
    let mut options = config.bench;
    if args.strict {
        options.match_mode = MatchMode::Strict;
    }
    let subset = build_filtered_subset(&pipeline, &items, &options)?;
    write_items(&subset, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("kept {} of {} item(s)", subset.len(), items.len());
    Ok(())
}

fn costs(args: CostsArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.log)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", args.log.display())))?;
    let report = costs_from_log(text.lines())?;
    print!("{}", report_costs(&report));
    Ok(())
}

fn convert(args: ConvertArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", args.input.display())))?;
    let ids: Option<BTreeSet<String>> = match &args.ids {
        Some(path) => Some(
            fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        ),
        None => None,
    };
    let items = convert_dataset(&text, args.format.into(), ids.as_ref())?;
    if items.is_empty() {
        bail!(PipelineError::Config(
            "no usable records in the dataset".into()
        ));
    }
    write_items(&items, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} item(s)", items.len());
    Ok(())
}

#[derive(Debug)]
struct AllRunsFailed(String);

impl std::fmt::Display for AllRunsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "every run failed, last error: {}", self.0)
    }
}

impl std::error::Error for AllRunsFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<AllRunsFailed>().is_some() {
        return 3;
    }
    err.chain()
        .find_map(|e| e.downcast_ref::<PipelineError>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ask(a) => ask(a),
        Command::Bench(a) => bench(a),
        Command::Filter(a) => filter(a),
        Command::Costs(a) => costs(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
