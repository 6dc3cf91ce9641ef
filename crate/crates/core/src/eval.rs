//! Benchmark evaluation, chain-of-thought filtering, cost reporting and
//! dataset conversion.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::PipelineError;
use crate::graph::Mid;
use crate::pipeline::{Pipeline, TopicEntity};
use crate::privacy::{deanonymize_answers, NamedAnswer};
use crate::provider::{CostReport, ModuleTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid: Option<Mid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub topic_entities: Vec<TopicEntity>,
    pub answers: Vec<GoldAnswer>,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.topic_entities.is_empty() {
            return Err(PipelineError::Config(format!(
                "item {:?} has no topic entities",
                self.question
            )));
        }
        if self.answers.is_empty()
            || self
                .answers
                .iter()
                .any(|a| a.name.is_none() && a.mid.is_none())
        {
            return Err(PipelineError::Config(format!(
                "item {:?} has an empty gold answer",
                self.question
            )));
        }
        Ok(())
    }
}

pub fn read_items(path: &Path) -> Result<Vec<BenchmarkItem>, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem = serde_json::from_str(line)
            .map_err(|e| PipelineError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_items(items: &[BenchmarkItem], path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("items serialize"));
        out.push('\n');
    }
    fs::write(path, out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Gold name contained in the answer (case-insensitive), or equal MIDs.
    #[default]
    Contains,
    /// Answer equal to the gold name once a trailing `(...)` is removed.
    Strict,
}

fn strip_annotation(text: &str) -> &str {
    let t = text.trim();
    match t
        .strip_suffix(')')
        .and_then(|s| s.rfind('(').map(|i| s[..i].trim_end()))
    {
        Some(base) if !base.is_empty() => base,
        _ => t,
    }
}

/// Whether any produced answer matches any gold answer.
pub fn is_correct(answers: &[NamedAnswer], gold: &[GoldAnswer], mode: MatchMode) -> bool {
    answers.iter().any(|answer| {
        gold.iter().any(|g| {
            if let Some(mid) = &g.mid {
                if answer.mids.contains(mid) {
                    return true;
                }
            }
            let Some(name) = &g.name else { return false };
            let name = name.trim().to_lowercase();
            if name.is_empty() {
                return false;
            }
            match mode {
                MatchMode::Contains => answer.text.to_lowercase().contains(&name),
                MatchMode::Strict => strip_annotation(&answer.text).to_lowercase() == name,
            }
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub repeats: usize,
    pub workers: usize,
    pub match_mode: MatchMode,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 1,
            workers: 4,
            match_mode: MatchMode::Contains,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: usize,
    pub repeat: usize,
    pub question: String,
    pub answers: Vec<String>,
    pub raw_answers: Vec<String>,
    pub correct: bool,
    pub iterations: usize,
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub hits_at_1: f64,
    pub correct: usize,
    pub total: usize,
    pub repeats: usize,
    pub records: Vec<ItemRecord>,
    pub cost: CostReport,
}

struct Evaluated {
    record: ItemRecord,
    log: Vec<String>,
}

fn evaluate(
    pipeline: &Pipeline,
    item: &BenchmarkItem,
    index: usize,
    repeat: usize,
    mode: MatchMode,
) -> Evaluated {
    match pipeline.answer_question(&item.question, &item.topic_entities) {
        Ok(result) => {
            let mut cost = result.outcome.cost.clone();
            cost.questions = 1;
            Evaluated {
                record: ItemRecord {
                    index,
                    repeat,
                    question: item.question.clone(),
                    answers: result.answers.iter().map(|a| a.text.clone()).collect(),
                    raw_answers: result.outcome.answers.clone(),
                    correct: is_correct(&result.answers, &item.answers, mode),
                    iterations: result.outcome.iterations,
                    forced: result.outcome.forced,
                    error: None,
                    cost,
                },
                log: result.run_log(),
            }
        }
        Err(e) => {
            log::warn!("item {index}: {e}");
            Evaluated {
                record: ItemRecord {
                    index,
                    repeat,
                    question: item.question.clone(),
                    answers: Vec::new(),
                    raw_answers: Vec::new(),
                    correct: false,
                    iterations: 0,
                    forced: false,
                    error: Some(e.to_string()),
                    cost: CostReport::default(),
                },
                log: Vec::new(),
            }
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))
}

/// Evaluates every item `repeats` times. Failures count as misses. Returns
/// the result and the concatenated run log, both in input order.
pub fn run_benchmark_with_log(
    pipeline: &Pipeline,
    items: &[BenchmarkItem],
    options: &BenchOptions,
) -> Result<(EvalResult, Vec<String>), PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::Config("benchmark has no items".into()));
    }
    let repeats = options.repeats.max(1);
    let jobs: Vec<(usize, usize)> = (0..repeats)
        .flat_map(|r| (0..items.len()).map(move |i| (r, i)))
        .collect();
    let evaluated: Vec<Evaluated> = pool(options.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(r, i)| evaluate(pipeline, &items[i], i, r, options.match_mode))
            .collect()
    });
    let mut cost = CostReport::default();
    let mut records = Vec::with_capacity(evaluated.len());
    let mut log = Vec::new();
    for e in evaluated {
        cost.merge(&e.record.cost);
        log.extend(e.log);
        records.push(e.record);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    let total = records.len();
    Ok((
        EvalResult {
            hits_at_1: correct as f64 / total as f64,
            correct,
            total,
            repeats,
            records,
            cost,
        },
        log,
    ))
}

pub fn run_benchmark(
    pipeline: &Pipeline,
    items: &[BenchmarkItem],
    options: &BenchOptions,
) -> Result<EvalResult, PipelineError> {
    run_benchmark_with_log(pipeline, items, options).map(|(r, _)| r)
}

/// Items the chain-of-thought baseline gets wrong. Baseline failures count
/// as wrong answers.
pub fn build_filtered_subset(
    pipeline: &Pipeline,
    items: &[BenchmarkItem],
    options: &BenchOptions,
) -> Result<Vec<BenchmarkItem>, PipelineError> {
    let verdicts: Vec<bool> = pool(options.workers)?.install(|| {
        items
            .par_iter()
            .map(
                |item| match pipeline.chain_of_thought(&item.question, &item.topic_entities) {
                    Ok(answers) => {
                        let named = deanonymize_answers(
                            &answers,
                            pipeline.client.guard().map(),
                            &pipeline.mid_pattern,
                        );
                        is_correct(&named, &item.answers, options.match_mode)
                    }
                    Err(e) => {
                        log::warn!(
                            "chain-of-thought baseline failed on {:?}: {e}",
                            item.question
                        );
                        false
                    }
                },
            )
            .collect()
    });
    Ok(items
        .iter()
        .zip(verdicts)
        .filter(|(_, ok)| !ok)
        .map(|(item, _)| item.clone())
        .collect())
}

/// Per-question averages as an aligned table followed by `key=value` lines.
pub fn report_costs(report: &CostReport) -> String {
    let n = report.questions;
    let avg = |v: u64| if n == 0 { 0.0 } else { v as f64 / n as f64 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>9} {:>11} {:>11} {:>11}",
        "module", "#call", "#input", "#output", "#total"
    );
    let mut rows: Vec<(String, u64, u64, u64, u64)> = ModuleTag::ALL
        .iter()
        .filter_map(|m| {
            report.per_module.get(m).map(|u| {
                (
                    m.to_string(),
                    u.calls,
                    u.input_tokens,
                    u.output_tokens,
                    u.total_tokens,
                )
            })
        })
        .collect();
    rows.push((
        "all".into(),
        report.llm_calls,
        report.input_tokens,
        report.output_tokens,
        report.total_tokens,
    ));
    for (name, calls, input, output, total) in &rows {
        let _ = writeln!(
            out,
            "{name:<22} {:>9.2} {:>11.2} {:>11.2} {:>11.2}",
            avg(*calls),
            avg(*input),
            avg(*output),
            avg(*total)
        );
    }
    let _ = writeln!(out, "questions={n}");
    for (name, calls, input, output, total) in &rows {
        let _ = writeln!(
            out,
            "{name}.calls={:.4} {name}.input={:.4} {name}.output={:.4} {name}.total={:.4}",
            avg(*calls),
            avg(*input),
            avg(*output),
            avg(*total)
        );
    }
    out
}

/// Recomputes a session cost report from run-log lines.
pub fn costs_from_log(
    lines: impl IntoIterator<Item = impl AsRef<str>>,
) -> Result<CostReport, PipelineError> {
    let mut report = CostReport::default();
    for line in lines {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| PipelineError::Config(format!("bad run log line: {e}")))?;
        if value.get("kind").and_then(Value::as_str) != Some("final") {
            continue;
        }
        let mut cost: CostReport = serde_json::from_value(value["cost"].clone())
            .map_err(|e| PipelineError::Config(format!("bad cost record: {e}")))?;
        cost.questions = 1;
        report.merge(&cost);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Webqsp,
    Cwq,
    Grailqa,
}

impl DatasetFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "webqsp" => Some(Self::Webqsp),
            "cwq" => Some(Self::Cwq),
            "grailqa" => Some(Self::Grailqa),
            _ => None,
        }
    }
}

fn str_field<'v>(v: &'v Value, keys: &[&str]) -> Option<&'v str> {
    keys.iter().find_map(|k| v.get(*k).and_then(Value::as_str))
}

fn gold(name: Option<&str>, mid: Option<&str>) -> Option<GoldAnswer> {
    let name = name
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(str::to_string);
    let mid = mid.and_then(|m| Mid::new(m.trim()).ok());
    (name.is_some() || mid.is_some()).then_some(GoldAnswer { name, mid })
}

fn topic(name: Option<&str>, mid: Option<&str>) -> Option<TopicEntity> {
    Some(TopicEntity {
        name: name?.trim().to_string(),
        mid: Mid::new(mid?.trim()).ok()?,
    })
}

/// A `topic_entity` map when present, else the raw WebQSP parse fields or
/// the GrailQA entity nodes.
fn topic_entities(v: &Value) -> Vec<TopicEntity> {
    if let Some(map) = v.get("topic_entity").and_then(Value::as_object) {
        return map
            .iter()
            .filter_map(|(mid, name)| topic(name.as_str(), Some(mid)))
            .collect();
    }
    let mut out: Vec<TopicEntity> = Vec::new();
    let parses = v
        .get("Parses")
        .and_then(Value::as_array)
        .into_iter()
        .flatten();
    for p in parses {
        out.extend(topic(
            str_field(p, &["TopicEntityName"]),
            str_field(p, &["TopicEntityMid"]),
        ));
    }
    let nodes = v
        .pointer("/graph_query/nodes")
        .and_then(Value::as_array)
        .into_iter()
        .flatten();
    for n in nodes.filter(|n| str_field(n, &["node_type"]) == Some("entity")) {
        out.extend(topic(
            str_field(n, &["friendly_name"]),
            str_field(n, &["id"]),
        ));
    }
    let mut seen = BTreeSet::new();
    out.retain(|t| seen.insert(t.mid.clone()));
    out
}

fn convert_record(v: &Value, format: DatasetFormat) -> Option<BenchmarkItem> {
    let question = str_field(v, &["question", "ProcessedQuestion", "RawQuestion"])?.to_string();
    let id = str_field(v, &["QuestionId", "ID", "qid", "id"])
        .map(str::to_string)
        .or_else(|| v.get("qid").and_then(Value::as_u64).map(|n| n.to_string()));
    let topic_entities = topic_entities(v);
    let mut answers = Vec::new();
    match format {
        DatasetFormat::Webqsp => {
            for parse in v
                .get("Parses")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                for a in parse
                    .get("Answers")
                    .and_then(Value::as_array)
                    .into_iter()
                    .flatten()
                {
                    answers.extend(gold(
                        str_field(a, &["EntityName"]),
                        str_field(a, &["AnswerArgument"]),
                    ));
                }
            }
        }
        DatasetFormat::Cwq => match v.get("answer") {
            Some(Value::String(s)) => answers.extend(gold(Some(s), None)),
            Some(Value::Array(list)) => {
                for a in list {
                    match a {
                        Value::String(s) => answers.extend(gold(Some(s), None)),
                        other => answers.extend(gold(
                            str_field(other, &["answer", "name"]),
                            str_field(other, &["answer_id", "mid"]),
                        )),
                    }
                }
            }
            _ => {}
        },
        DatasetFormat::Grailqa => {
            for a in v
                .get("answer")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                let arg = str_field(a, &["answer_argument"]);
                let is_entity = str_field(a, &["answer_type"]).is_none_or(|t| t == "Entity");
                if is_entity {
                    answers.extend(gold(str_field(a, &["entity_name"]), arg));
                } else {
                    answers.extend(gold(arg, None));
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    answers.retain(|a: &GoldAnswer| seen.insert((a.name.clone(), a.mid.clone())));
    let item = BenchmarkItem {
        id,
        question,
        topic_entities,
        answers,
    };
    item.validate().ok().map(|_| item)
}

/// Normalizes a dataset dump (a JSON array, or an object with a
/// `Questions` array) into benchmark items. Records without topic entities
/// or gold answers are skipped. With `ids`, only the listed records are
/// kept, in the order they appear in the dump.
pub fn convert_dataset(
    text: &str,
    format: DatasetFormat,
    ids: Option<&BTreeSet<String>>,
) -> Result<Vec<BenchmarkItem>, PipelineError> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| PipelineError::Config(format!("dataset is not JSON: {e}")))?;
    let records = match &root {
        Value::Array(list) => list.as_slice(),
        Value::Object(map) => map
            .get("Questions")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .ok_or_else(|| PipelineError::Config("dataset object has no Questions array".into()))?,
        _ => return Err(PipelineError::Config("dataset must be a JSON array".into())),
    };
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for record in records {
        match convert_record(record, format) {
            Some(item) => {
                if ids.is_none_or(|set| item.id.as_ref().is_some_and(|id| set.contains(id))) {
                    out.push(item);
                }
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("converter skipped {skipped} records without topic entities or answers");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(text: &str, mids: &[&str]) -> NamedAnswer {
        NamedAnswer {
            text: text.into(),
            mids: mids.iter().map(|m| Mid::new(*m).unwrap()).collect(),
            unnamed: vec![],
        }
    }

    fn by_name(n: &str) -> GoldAnswer {
        GoldAnswer {
            name: Some(n.into()),
            mid: None,
        }
    }

    #[test]
    fn matching_rules() {
        let a = [named(
            "Political Science (academic discipline)",
            &["m.062z7"],
        )];
        assert!(is_correct(
            &a,
            &[by_name("political science")],
            MatchMode::Contains
        ));
        assert!(is_correct(
            &a,
            &[by_name("Political Science")],
            MatchMode::Strict
        ));
        assert!(!is_correct(&a, &[by_name("Science")], MatchMode::Strict));
        assert!(is_correct(&a, &[by_name("Science")], MatchMode::Contains));
        let by_mid = GoldAnswer {
            name: None,
            mid: Some(Mid::new("m.062z7").unwrap()),
        };
        assert!(is_correct(&a, &[by_mid], MatchMode::Strict));
        assert!(!is_correct(&[], &[by_name("x")], MatchMode::Contains));
    }

    #[test]
    fn empty_cost_report_is_zero() {
        let text = report_costs(&CostReport::default());
        assert!(text.contains("questions=0"));
        assert!(text.contains("all.calls=0.0000"));
    }

    #[test]
    fn converts_webqsp_cwq_grailqa() {
        let webqsp = r#"{"Questions":[{"QuestionId":"WebQTest-1","ProcessedQuestion":"what language is spoken","topic_entity":{"m.03_r3":"Jamaica"},"Parses":[{"Answers":[{"AnswerArgument":"m.01428y","EntityName":"Jamaican English"}]}]}]}"#;
        let items = convert_dataset(webqsp, DatasetFormat::Webqsp, None).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(
            items[0].answers[0].name.as_deref(),
            Some("Jamaican English")
        );
        assert_eq!(items[0].topic_entities[0].mid.as_str(), "m.03_r3");

        let cwq = r#"[{"ID":"a","question":"q?","answer":"Paris","topic_entity":{"m.1":"France"}},{"ID":"b","question":"q2?","answer":"x","topic_entity":{}}]"#;
        let items = convert_dataset(cwq, DatasetFormat::Cwq, None).unwrap();
        assert_eq!(items.len(), 1);
        let ids = BTreeSet::from(["zzz".to_string()]);
        assert!(convert_dataset(cwq, DatasetFormat::Cwq, Some(&ids))
            .unwrap()
            .is_empty());

        let grail = r#"[{"qid":7,"question":"q?","answer":[{"answer_type":"Entity","answer_argument":"m.2","entity_name":"Two"},{"answer_type":"Value","answer_argument":"1999"}],"topic_entity":{"m.1":"One"}}]"#;
        let items = convert_dataset(grail, DatasetFormat::Grailqa, None).unwrap();
        assert_eq!(items[0].id.as_deref(), Some("7"));
        assert_eq!(items[0].answers.len(), 2);
        assert_eq!(items[0].answers[1].name.as_deref(), Some("1999"));
    }
}
