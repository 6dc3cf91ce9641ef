//! Path-guided iterative retrieval.
//!
//! Each iteration explores the one-hop neighbourhood of the current topic
//! entities, abstracts the candidates and keeps the W that best match the
//! concept path. The generator then decides whether to stop.

use std::collections::BTreeSet;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::context::QuestionContext;
use crate::error::PipelineError;
use crate::generator::{force_answer, generate, Flag};
use crate::graph::{Direction, GraphHandle, Mid, Relation, Triplet};
use crate::provider::{cosine, CostReport, Embedder, ProviderError, Vector};
use crate::relation::{
    abstract_triplets, retrieve_relations, AbstractedTriplet, AbstractionSettings, ClusterKey,
    ConceptCache, ConceptRegistry,
};
use crate::structure::{abstract_question, ConceptPath, PathTriplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub width: usize,
    pub depth: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { width: 3, depth: 3 }
    }
}

/// Everything that shapes one question's run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub params: RetrievalParams,
    pub abstraction: AbstractionSettings,
    /// Generate a concept path; when off, candidates are scored against the
    /// question text.
    pub structure_abstraction: bool,
    /// One generator prompt instead of sufficiency then extraction.
    pub fused_generator: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            params: RetrievalParams::default(),
            abstraction: AbstractionSettings::default(),
            structure_abstraction: true,
            fused_generator: false,
        }
    }
}

pub fn serialize_triplet(t: &AbstractedTriplet) -> String {
    t.to_string()
}

pub fn serialize_path_triplet(t: &PathTriplet) -> String {
    t.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub triplet: AbstractedTriplet,
    pub score: f64,
}

/// Texts candidates are scored against: the path triplets, or the question
/// itself when there is no usable path.
pub fn reference_texts(path: &ConceptPath, question: &str) -> Vec<String> {
    if path.is_empty() {
        vec![question.to_string()]
    } else {
        path.triplets.iter().map(serialize_path_triplet).collect()
    }
}

pub fn embed_references(
    embedder: &dyn Embedder,
    texts: &[String],
) -> Result<Vec<Vector>, ProviderError> {
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    embedder.embed(&refs)
}

/// The `w` candidates with the highest summed similarity to the references,
/// best first, ties broken by serialized form. Per-candidate scores are
/// independent, so this is also the best subset of size at most `w`.
pub fn select_triplets(
    embedder: &dyn Embedder,
    candidates: &[AbstractedTriplet],
    references: &[Vector],
    w: usize,
) -> Result<Vec<ScoredTriplet>, ProviderError> {
    if candidates.is_empty() || w == 0 {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = candidates.iter().map(serialize_triplet).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vectors = embedder.embed(&refs)?;
    let mut scored: Vec<(String, ScoredTriplet)> = candidates
        .iter()
        .zip(vectors.iter())
        .zip(texts)
        .map(|((t, v), text)| {
            let score = references.iter().map(|r| cosine(v, r)).sum();
            (
                text,
                ScoredTriplet {
                    triplet: t.clone(),
                    score,
                },
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then_with(|| a.0.cmp(&b.0)));
    scored.dedup_by(|a, b| a.0 == b.0);
    scored.truncate(w);
    Ok(scored.into_iter().map(|(_, s)| s).collect())
}

/// Per-question retrieval state.
#[derive(Debug, Clone)]
pub struct RetrievalState {
    pub topic_entities: Vec<Mid>,
    pub iteration: usize,
    pub evidence: Vec<AbstractedTriplet>,
    pub registry: ConceptRegistry,
    used_topics: BTreeSet<Mid>,
    seen: BTreeSet<Triplet>,
}

impl RetrievalState {
    /// Starts from the named topic entities.
    pub fn new(topics: &[(Mid, String)]) -> Self {
        let mut registry = ConceptRegistry::new();
        for (mid, name) in topics {
            registry.set_surface(mid.clone(), name.clone());
        }
        let topic_entities: Vec<Mid> = topics.iter().map(|(m, _)| m.clone()).collect();
        Self {
            used_topics: topic_entities.iter().cloned().collect(),
            topic_entities,
            iteration: 0,
            evidence: Vec::new(),
            registry,
            seen: BTreeSet::new(),
        }
    }
}

/// One line of the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub topic_entities: Vec<String>,
    pub selected: Vec<ScoredTriplet>,
    pub flag: Option<Flag>,
}

/// Shared inputs of a question's steps.
pub struct StepInputs<'a> {
    pub graph: &'a GraphHandle,
    pub ctx: QuestionContext<'a>,
    pub question: &'a str,
    pub references: &'a [Vector],
    pub settings: &'a EngineSettings,
    pub cache: &'a ConceptCache,
}

/// Runs one retrieval iteration and returns the triplets it selected.
pub fn step(
    state: &mut RetrievalState,
    inputs: &StepInputs<'_>,
) -> Result<Vec<ScoredTriplet>, PipelineError> {
    let width = inputs.settings.params.width;
    let mut pairs: Vec<ClusterKey> = Vec::new();
    for topic in &state.topic_entities {
        let subject_side = inputs
            .graph
            .adjacent_relations(topic, Direction::AsSubject)?;
        let object_side = inputs
            .graph
            .adjacent_relations(topic, Direction::AsObject)?;
        let mut candidates: Vec<Relation> =
            subject_side.iter().chain(&object_side).cloned().collect();
        candidates.sort();
        candidates.dedup();
        let label = state.registry.entity(topic).to_string();
        for relation in
            retrieve_relations(&inputs.ctx, inputs.question, &label, &candidates, width)?
        {
            for (side, direction) in [
                (&subject_side, Direction::AsSubject),
                (&object_side, Direction::AsObject),
            ] {
                if side.contains(&relation) {
                    let key = ClusterKey {
                        entity: topic.clone(),
                        relation: relation.clone(),
                        direction,
                    };
                    if !pairs.contains(&key) {
                        pairs.push(key);
                    }
                }
            }
        }
    }

    let candidates = abstract_triplets(
        inputs.graph,
        &inputs.ctx,
        &pairs,
        inputs.question,
        &inputs.settings.abstraction,
        inputs.cache,
        &mut state.registry,
    )?;
    let fresh: Vec<AbstractedTriplet> = candidates
        .into_iter()
        .filter(|t| !state.seen.contains(&t.raw()))
        .collect();
    let selected = select_triplets(inputs.ctx.embedder, &fresh, inputs.references, width)?;
    debug!(
        "iteration {}: {} pairs, {} fresh candidates, {} selected",
        state.iteration + 1,
        pairs.len(),
        fresh.len(),
        selected.len()
    );

    state.iteration += 1;
    if selected.is_empty() {
        return Ok(selected);
    }
    let mut next: Vec<Mid> = Vec::new();
    for s in &selected {
        state.seen.insert(s.triplet.raw());
        state.evidence.push(s.triplet.clone());
        for mid in [&s.triplet.head.mid, &s.triplet.tail.mid] {
            if next.len() < width && !state.used_topics.contains(mid) && !next.contains(mid) {
                next.push(mid.clone());
            }
        }
    }
    state.used_topics.extend(next.iter().cloned());
    state.topic_entities = next;
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    /// Raw, identifier-bearing answers.
    pub answers: Vec<String>,
    /// Answered only after the depth budget ran out.
    pub forced: bool,
    pub iterations: usize,
    pub evidence: Vec<AbstractedTriplet>,
    pub path: ConceptPath,
    pub trace: Vec<IterationRecord>,
    pub cost: CostReport,
}

/// Answers one question: concept path once, then retrieve and judge until
/// the evidence suffices or the depth is spent.
pub fn run(
    graph: &GraphHandle,
    ctx: QuestionContext<'_>,
    question: &str,
    topics: &[(Mid, String)],
    settings: &EngineSettings,
) -> Result<RetrievalOutcome, PipelineError> {
    if topics.is_empty() {
        return Err(PipelineError::Config(
            "question has no topic entities".into(),
        ));
    }
    if settings.params.width == 0 || settings.params.depth == 0 {
        return Err(PipelineError::Config(
            "width and depth must be positive".into(),
        ));
    }
    let path = if settings.structure_abstraction {
        abstract_question(&ctx, question)?
    } else {
        ConceptPath::default()
    };
    let references = embed_references(ctx.embedder, &reference_texts(&path, question))?;
    let cache = ConceptCache::new();
    let inputs = StepInputs {
        graph,
        ctx,
        question,
        references: &references,
        settings,
        cache: &cache,
    };

    let mut state = RetrievalState::new(topics);
    let mut trace = Vec::new();
    let mut answers = None;
    while state.iteration < settings.params.depth {
        let labels: Vec<String> = state
            .topic_entities
            .iter()
            .map(|m| state.registry.entity(m).to_string())
            .collect();
        let selected = step(&mut state, &inputs)?;
        let verdict = generate(&ctx, question, &state.evidence, settings.fused_generator)?;
        trace.push(IterationRecord {
            iteration: state.iteration,
            topic_entities: labels,
            selected,
            flag: Some(verdict.flag),
        });
        if verdict.is_sufficient() {
            answers = Some(verdict.answers);
            break;
        }
    }
    let forced = answers.is_none();
    let answers = match answers {
        Some(a) => a,
        None => force_answer(&ctx, question, &state.evidence)?,
    };
    Ok(RetrievalOutcome {
        answers,
        forced,
        iterations: state.iteration,
        evidence: state.evidence,
        path,
        trace,
        cost: ctx.llm.usage(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::HashingEmbedder;
    use crate::relation::AbstractedEntity;

    fn t(h: &str, r: &str, tail: &str) -> AbstractedTriplet {
        AbstractedTriplet {
            head: AbstractedEntity::bare(Mid::new(h).unwrap()),
            relation: Relation::new(r).unwrap(),
            tail: AbstractedEntity::bare(Mid::new(tail).unwrap()),
        }
    }

    #[test]
    fn worked_example_serialization() {
        let triplet = AbstractedTriplet {
            head: AbstractedEntity {
                mid: Mid::new("m.0abc").unwrap(),
                surface: Some("The Audacity of Hope".into()),
                concepts: vec![],
            },
            relation: Relation::new("book.written_work.author").unwrap(),
            tail: AbstractedEntity {
                mid: Mid::new("m.02mjmr").unwrap(),
                surface: None,
                concepts: vec!["person".into()],
            },
        };
        assert_eq!(
            serialize_triplet(&triplet),
            "The Audacity of Hope, book.written_work.author, m.02mjmr (person)"
        );
    }

    #[test]
    fn selection_edge_cases() {
        let e = HashingEmbedder::default();
        let refs = embed_references(&e, &["x".to_string()]).unwrap();
        assert!(select_triplets(&e, &[], &refs, 3).unwrap().is_empty());
        let one = vec![t("m.a", "r.s.t", "m.b")];
        assert_eq!(select_triplets(&e, &one, &refs, 3).unwrap().len(), 1);
        let many = vec![
            t("m.a", "music.artist.genre", "m.b"),
            t("m.a", "people.person.places_lived", "m.c"),
        ];
        let refs = embed_references(&e, &["person lived place".to_string()]).unwrap();
        let out = select_triplets(&e, &many, &refs, 5).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[0].triplet.relation.as_str(),
            "people.person.places_lived"
        );
    }

    #[test]
    fn empty_path_falls_back_to_question() {
        assert_eq!(reference_texts(&ConceptPath::default(), "who?"), ["who?"]);
    }
}
