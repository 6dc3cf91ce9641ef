use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kgabs_core::pipeline::Ablation;
use kgabs_core::retrieval::{EngineSettings, RetrievalParams};
use kgabs_core::sim::{toy_world, worked_example_world, write_bundle, Bundle};

fn kgabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgabs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn settings(ablation: Ablation) -> EngineSettings {
    ablation
        .engine_settings(RetrievalParams::default(), 5, false)
        .unwrap()
}

fn bundle(dir: &Path) -> Bundle {
    write_bundle(&worked_example_world(), dir, settings(Ablation::default())).unwrap()
}

const QUESTION: &str =
    "What does the artist that was nominated for 'The Audacity of Hope' have a degree in?";
const TOPIC: &str = "The Audacity of Hope=m.05q5zs";

#[test]
fn ask_replays_and_costs_reads_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let log = dir.path().join("run.jsonl");
    let out = kgabs(&[
        "ask",
        "--config",
        b.config.to_str().unwrap(),
        "--question",
        QUESTION,
        "--topic",
        TOPIC,
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        stdout(&out).trim(),
        "Political Science (academic discipline)"
    );

    let costs = kgabs(&["costs", "--log", log.to_str().unwrap()]);
    assert_eq!(costs.status.code(), Some(0));
    let text = stdout(&costs);
    assert!(text.contains("questions=1"), "{text}");
    assert!(text.lines().next().unwrap().starts_with("module"));
}

#[test]
fn unknown_topic_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let out = kgabs(&[
        "ask",
        "-c",
        b.config.to_str().unwrap(),
        "-q",
        QUESTION,
        "-t",
        "Nobody=m.0zzzzz",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unrecorded_prompt_is_a_provider_failure() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let out = kgabs(&[
        "ask",
        "-c",
        b.config.to_str().unwrap(),
        "-q",
        "Who wrote 'The Audacity of Hope'?",
        "-t",
        TOPIC,
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_config_and_bad_flags_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    fs::write(&b.config, "[graph\n").unwrap();
    let out = kgabs(&[
        "ask",
        "-c",
        b.config.to_str().unwrap(),
        "-q",
        QUESTION,
        "-t",
        TOPIC,
    ]);
    assert_eq!(out.status.code(), Some(2));

    let b = bundle(dir.path());
    let out = kgabs(&[
        "ask",
        "-c",
        b.config.to_str().unwrap(),
        "-q",
        QUESTION,
        "-t",
        TOPIC,
        "--width",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_flags_reach_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let no_sa = Ablation {
        structure_abstraction: false,
        ..Ablation::default()
    };
    let b = write_bundle(&worked_example_world(), dir.path(), settings(no_sa)).unwrap();
    let text = fs::read_to_string(&b.config).unwrap().replace(
        "structure_abstraction = false",
        "structure_abstraction = true",
    );
    fs::write(&b.config, text).unwrap();
    let cfg = b.config.to_str().unwrap();
    let with_flag = kgabs(&["ask", "-c", cfg, "-q", QUESTION, "-t", TOPIC, "--no-sa"]);
    assert_eq!(with_flag.status.code(), Some(0));
    let without = kgabs(&["ask", "-c", cfg, "-q", QUESTION, "-t", TOPIC]);
    assert_eq!(without.status.code(), Some(3));
}

#[test]
fn bench_and_filter_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let world = toy_world(11);
    let b = write_bundle(&world, dir.path(), settings(Ablation::default())).unwrap();
    let cfg = b.config.to_str().unwrap();
    let items = b.items.to_str().unwrap();

    let pipeline = world.pipeline(settings(Ablation::default()));
    let expected = kgabs_core::run_benchmark(
        &pipeline,
        &world.items(),
        &kgabs_core::BenchOptions::default(),
    )
    .unwrap();
    let result = dir.path().join("result.json");
    let out = kgabs(&[
        "bench",
        "-c",
        cfg,
        "--items",
        items,
        "--out",
        result.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = stdout(&out).lines().next().unwrap().to_string();
    assert_eq!(
        first,
        format!(
            "hits@1={:.4} correct={} total={} repeats=1",
            expected.hits_at_1, expected.correct, expected.total
        )
    );
    let written: kgabs_core::EvalResult =
        serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(written.correct, expected.correct);

    let filtered = dir.path().join("filtered.jsonl");
    let out = kgabs(&[
        "filter",
        "-c",
        cfg,
        "--items",
        items,
        "--out",
        filtered.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let subset =
        kgabs_core::build_filtered_subset(&pipeline, &world.items(), &Default::default()).unwrap();
    let lines = fs::read_to_string(&filtered).unwrap();
    assert_eq!(lines.lines().count(), subset.len());
    assert!(!subset.is_empty() && subset.len() < world.items().len());
}

#[test]
fn convert_keeps_listed_ids() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("webqsp.json");
    fs::write(
        &input,
        r#"{"Questions": [
          {"QuestionId": "q1", "ProcessedQuestion": "who wrote it", "RawQuestion": "Who wrote it?",
           "Parses": [{"TopicEntityMid": "m.05q5zs", "TopicEntityName": "The Audacity of Hope",
                       "Answers": [{"AnswerType": "Entity", "AnswerArgument": "m.02mjmr", "EntityName": "Barack Obama"}]}]},
          {"QuestionId": "q2", "RawQuestion": "Skipped?",
           "Parses": [{"TopicEntityMid": "m.0x", "TopicEntityName": "X",
                       "Answers": [{"AnswerType": "Entity", "AnswerArgument": "m.0y", "EntityName": "Y"}]}]}
        ]}"#,
    )
    .unwrap();
    let ids = dir.path().join("ids.txt");
    fs::write(&ids, "q1\n").unwrap();
    let out_path = dir.path().join("items.jsonl");
    let out = kgabs(&[
        "convert",
        "--format",
        "webqsp",
        "--input",
        input.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("m.02mjmr"));

    let bad = kgabs(&[
        "convert",
        "--format",
        "cwq",
        "--input",
        "/nonexistent",
        "--out",
        "x",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
