//! Relation-centric abstraction.
//!
//! Three steps turn anonymous neighbours of the topic entities into
//! concept-annotated candidate triplets:
//!
//! 1. the model picks the most question-relevant relations of each topic
//!    entity;
//! 2. for a representative member of each resulting entity cluster, its own
//!    relations are ranked by embedding similarity to the question and the
//!    top-K kept;
//! 3. the model infers a concept for the representative from those
//!    relations, used as subject/object verbs. All cluster members share it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::context::QuestionContext;
use crate::error::PipelineError;
use crate::graph::{Direction, GraphHandle, Mid, Relation, Triplet};
use crate::prompt::{PromptError, PromptSet};
use crate::provider::{cosine, DecodingParams, Embedder, ModuleTag, ProviderError};

/// Rendered in place of an empty verb list.
pub const NO_VERBS: &str = "(none)";

const RELATION_LIST_REMINDER: &str =
    "\nReply with the chosen relations only, as a list like ['relation.one','relation.two'].";
const CONCEPT_REMINDER: &str =
    "\nReply with a single JSON object with the keys \"type\" and \"description\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractConcept {
    pub type_label: String,
    pub description: String,
}

impl AbstractConcept {
    /// Used when the model never returns a usable concept.
    pub fn fallback() -> Self {
        Self {
            type_label: "entity".into(),
            description: String::new(),
        }
    }
}

/// An entity as the model sees it: identifier (or, for topic entities, the
/// public surface name) plus accumulated concept labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AbstractedEntity {
    pub mid: Mid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concepts: Vec<String>,
}

impl AbstractedEntity {
    pub fn bare(mid: Mid) -> Self {
        Self {
            mid,
            surface: None,
            concepts: Vec::new(),
        }
    }
}

impl fmt::Display for AbstractedEntity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.surface {
            Some(name) => f.write_str(name)?,
            None => write!(f, "{}", self.mid)?,
        }
        if !self.concepts.is_empty() {
            write!(f, " ({})", self.concepts.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AbstractedTriplet {
    pub head: AbstractedEntity,
    pub relation: Relation,
    pub tail: AbstractedEntity,
}

impl AbstractedTriplet {
    /// The underlying identifier triple, annotations stripped.
    pub fn raw(&self) -> Triplet {
        Triplet::new(
            self.head.mid.clone(),
            self.relation.clone(),
            self.tail.mid.clone(),
        )
    }
}

impl fmt::Display for AbstractedTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.head, self.relation, self.tail)
    }
}

/// An entity-relation pair with direction; also the key of the entity
/// cluster it induces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterKey {
    pub entity: Mid,
    pub relation: Relation,
    pub direction: Direction,
}

/// One concept per cluster key, computed at most once.
#[derive(Debug, Default)]
pub struct ConceptCache {
    inner: Mutex<BTreeMap<ClusterKey, AbstractConcept>>,
}

impl ConceptCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("concept cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &ClusterKey) -> Option<AbstractConcept> {
        self.inner
            .lock()
            .expect("concept cache poisoned")
            .get(key)
            .cloned()
    }

    /// Returns the cached concept or computes it while holding the lock, so
    /// concurrent callers never compute the same key twice.
    pub fn get_or_try_insert<E>(
        &self,
        key: &ClusterKey,
        compute: impl FnOnce() -> Result<AbstractConcept, E>,
    ) -> Result<AbstractConcept, E> {
        let mut map = self.inner.lock().expect("concept cache poisoned");
        if let Some(found) = map.get(key) {
            return Ok(found.clone());
        }
        let concept = compute()?;
        map.insert(key.clone(), concept.clone());
        Ok(concept)
    }
}

/// Concept labels and public names accumulated for one question.
#[derive(Debug, Clone, Default)]
pub struct ConceptRegistry {
    labels: BTreeMap<Mid, Vec<String>>,
    surfaces: BTreeMap<Mid, String>,
}

impl ConceptRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the public name of a topic entity.
    pub fn set_surface(&mut self, mid: Mid, name: impl Into<String>) {
        self.surfaces.insert(mid, name.into());
    }

    /// Appends one iteration's labels: lexicographic within the batch,
    /// case-insensitive duplicates skipped.
    pub fn add_batch(&mut self, batch: BTreeMap<Mid, BTreeSet<String>>) {
        for (mid, labels) in batch {
            let existing = self.labels.entry(mid).or_default();
            for label in labels {
                if !existing.iter().any(|l| {
                    l.eq_ignore_ascii_case(&label) || l.to_lowercase() == label.to_lowercase()
                }) {
                    existing.push(label);
                }
            }
        }
    }

    pub fn concepts(&self, mid: &Mid) -> &[String] {
        self.labels.get(mid).map_or(&[], Vec::as_slice)
    }

    pub fn entity(&self, mid: &Mid) -> AbstractedEntity {
        AbstractedEntity {
            mid: mid.clone(),
            surface: self.surfaces.get(mid).cloned(),
            concepts: self.concepts(mid).to_vec(),
        }
    }

    pub fn triplet(&self, raw: &Triplet) -> AbstractedTriplet {
        AbstractedTriplet {
            head: self.entity(&raw.head),
            relation: raw.relation.clone(),
            tail: self.entity(&raw.tail),
        }
    }
}

pub fn render_relation_prompt(
    prompts: &PromptSet,
    question: &str,
    topic: &str,
    candidates: &[Relation],
    width: usize,
) -> Result<String, PromptError> {
    let relations = candidates
        .iter()
        .map(Relation::as_str)
        .collect::<Vec<_>>()
        .join("; ");
    prompts.relation_retrieval.render(&[
        ("width", &width.to_string()),
        ("question", question),
        ("topic", topic),
        ("relations", &relations),
    ])
}

/// Items of the first bracketed list in `reply`, quotes stripped. `None`
/// when there is no bracketed list at all.
pub fn parse_relation_list(reply: &str) -> Option<Vec<String>> {
    let open = reply.find('[')?;
    let close = open + reply[open..].find(']')?;
    Some(
        reply[open + 1..close]
            .split([',', ';', '\n'])
            .map(|item| {
                item.trim()
                    .trim_matches(|c| matches!(c, '\'' | '"' | '`'))
                    .trim()
            })
            .filter(|item| !item.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

fn completion_text(
    result: Result<crate::provider::Completion, ProviderError>,
) -> Result<Option<String>, ProviderError> {
    match result {
        Ok(c) => Ok(Some(c.text)),
        Err(ProviderError::EmptyCompletion) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Asks the model for the `width` candidates most relevant to the question.
/// Items outside `candidates` are dropped; an unparseable reply is retried
/// once with a format reminder and then yields an empty list.
pub fn retrieve_relations(
    ctx: &QuestionContext<'_>,
    question: &str,
    topic: &str,
    candidates: &[Relation],
    width: usize,
) -> Result<Vec<Relation>, PipelineError> {
    if candidates.is_empty() || width == 0 {
        return Ok(Vec::new());
    }
    let prompt = render_relation_prompt(ctx.prompts, question, topic, candidates, width)?;
    let params = DecodingParams::exploratory();
    let mut parsed = completion_text(ctx.llm.complete(
        ModuleTag::RelationRetrieval,
        &prompt,
        params,
    ))?
    .and_then(|t| parse_relation_list(&t));
    if parsed.is_none() {
        let retry = format!("{prompt}{RELATION_LIST_REMINDER}");
        parsed = completion_text(
            ctx.llm
                .complete(ModuleTag::RelationRetrieval, &retry, params),
        )?
        .and_then(|t| parse_relation_list(&t));
    }
    let Some(items) = parsed else {
        warn!("relation retrieval for {topic:?}: unparseable reply, continuing without relations");
        return Ok(Vec::new());
    };
    let mut out: Vec<Relation> = Vec::new();
    for item in items {
        match candidates.iter().find(|c| c.as_str() == item) {
            Some(rel) if !out.contains(rel) => out.push(rel.clone()),
            Some(_) => {}
            None => warn!("relation retrieval for {topic:?}: dropping unknown relation {item:?}"),
        }
    }
    out.truncate(width);
    Ok(out)
}

/// The `k` relations most similar to the question, highest first, ties
/// broken lexicographically. Since the objective is a sum of independent
/// per-relation similarities, the best subset of size at most `k` is the
/// top `k`.
pub fn filter_relations(
    embedder: &dyn Embedder,
    question: &str,
    relations: &[Relation],
    k: usize,
) -> Result<Vec<(Relation, f64)>, ProviderError> {
    if relations.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let mut texts: Vec<&str> = vec![question];
    texts.extend(relations.iter().map(Relation::as_str));
    let vectors = embedder.embed(&texts)?;
    let (q, rest) = vectors.split_first().expect("question vector present");
    let mut scored: Vec<(Relation, f64)> = relations
        .iter()
        .cloned()
        .zip(rest.iter().map(|v| cosine(q, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.dedup_by(|a, b| a.0 == b.0);
    scored.truncate(k);
    Ok(scored)
}

fn verb_list(relations: &[Relation]) -> String {
    let mut verbs: Vec<String> = Vec::new();
    for r in relations {
        let v = r.humanized();
        if !verbs.contains(&v) {
            verbs.push(v);
        }
    }
    if verbs.is_empty() {
        NO_VERBS.to_string()
    } else {
        verbs.join("; ")
    }
}

pub fn render_abstraction_prompt(
    prompts: &PromptSet,
    subject_verbs: &[Relation],
    object_verbs: &[Relation],
) -> Result<String, PromptError> {
    prompts.entity_abstraction.render(&[
        ("object_verbs", &verb_list(object_verbs)),
        ("subject_verbs", &verb_list(subject_verbs)),
    ])
}

#[derive(Deserialize)]
struct ConceptJson {
    #[serde(rename = "type")]
    type_label: String,
    #[serde(default)]
    description: String,
}

/// First balanced `{...}` group of `text`, braces included.
pub(crate) fn first_brace_group(text: &str) -> Option<(usize, usize)> {
    let open = text.find('{')?;
    let mut depth = 0usize;
    for (i, c) in text[open..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((open, open + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses the single JSON object reply of the abstraction prompt.
pub fn parse_concept(reply: &str) -> Option<AbstractConcept> {
    let (start, end) = first_brace_group(reply)?;
    let parsed: ConceptJson = serde_json::from_str(&reply[start..end]).ok()?;
    let label = parsed.type_label.trim();
    if label.is_empty() {
        return None;
    }
    Some(AbstractConcept {
        type_label: label.to_string(),
        description: parsed.description.trim().to_string(),
    })
}

/// Infers a concept from the verbs an entity takes part in.
pub fn abstract_entity(
    ctx: &QuestionContext<'_>,
    subject_verbs: &[Relation],
    object_verbs: &[Relation],
) -> Result<AbstractConcept, PipelineError> {
    let prompt = render_abstraction_prompt(ctx.prompts, subject_verbs, object_verbs)?;
    let params = DecodingParams::exploratory();
    let mut concept = completion_text(ctx.llm.complete(
        ModuleTag::EntityAbstraction,
        &prompt,
        params,
    ))?
    .and_then(|t| parse_concept(&t));
    if concept.is_none() {
        let retry = format!("{prompt}{CONCEPT_REMINDER}");
        concept = completion_text(
            ctx.llm
                .complete(ModuleTag::EntityAbstraction, &retry, params),
        )?
        .and_then(|t| parse_concept(&t));
    }
    Ok(concept.unwrap_or_else(|| {
        warn!("entity abstraction: malformed reply, using fallback concept");
        AbstractConcept::fallback()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionSettings {
    /// Relations kept by the embedding filter.
    pub top_k: usize,
    /// Rank the representative's relations before abstraction; when off,
    /// all of them are used.
    pub filter: bool,
    /// Infer concepts at all; when off, triplets carry bare identifiers.
    pub abstraction: bool,
}

impl Default for AbstractionSettings {
    fn default() -> Self {
        Self {
            top_k: 5,
            filter: true,
            abstraction: true,
        }
    }
}

/// Materializes each pair's entity cluster, abstracts one representative
/// per cluster (smallest identifier), annotates every member with the
/// shared concept and returns the candidate triplets rendered with all
/// labels known so far.
pub fn abstract_triplets(
    graph: &GraphHandle,
    ctx: &QuestionContext<'_>,
    pairs: &[ClusterKey],
    question: &str,
    settings: &AbstractionSettings,
    cache: &ConceptCache,
    registry: &mut ConceptRegistry,
) -> Result<Vec<AbstractedTriplet>, PipelineError> {
    let mut raw: Vec<Triplet> = Vec::new();
    let mut seen: BTreeSet<Triplet> = BTreeSet::new();
    let mut batch: BTreeMap<Mid, BTreeSet<String>> = BTreeMap::new();

    for pair in pairs {
        let cluster = graph.entity_cluster(&pair.entity, &pair.relation, pair.direction)?;
        let Some(representative) = cluster.iter().min() else {
            continue;
        };
        if settings.abstraction {
            let concept = cache.get_or_try_insert(pair, || -> Result<_, PipelineError> {
                let subject_side =
                    graph.adjacent_relations(representative, Direction::AsSubject)?;
                let object_side = graph.adjacent_relations(representative, Direction::AsObject)?;
                let mut pool: Vec<Relation> =
                    subject_side.iter().chain(&object_side).cloned().collect();
                pool.sort();
                pool.dedup();
                let kept: Vec<Relation> = if settings.filter {
                    filter_relations(ctx.embedder, question, &pool, settings.top_k)?
                        .into_iter()
                        .map(|(r, _)| r)
                        .collect()
                } else {
                    pool
                };
                let subject_verbs: Vec<Relation> = kept
                    .iter()
                    .filter(|r| subject_side.contains(r))
                    .cloned()
                    .collect();
                let object_verbs: Vec<Relation> = kept
                    .iter()
                    .filter(|r| object_side.contains(r))
                    .cloned()
                    .collect();
                abstract_entity(ctx, &subject_verbs, &object_verbs)
            })?;
            for member in &cluster {
                batch
                    .entry(member.clone())
                    .or_default()
                    .insert(concept.type_label.clone());
            }
        }
        for member in cluster {
            let triplet = match pair.direction {
                Direction::AsSubject => {
                    Triplet::new(pair.entity.clone(), pair.relation.clone(), member)
                }
                Direction::AsObject => {
                    Triplet::new(member, pair.relation.clone(), pair.entity.clone())
                }
            };
            if seen.insert(triplet.clone()) {
                raw.push(triplet);
            }
        }
    }
    registry.add_batch(batch);
    Ok(raw.iter().map(|t| registry.triplet(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(s: &str) -> Relation {
        Relation::new(s).unwrap()
    }

    fn mid(s: &str) -> Mid {
        Mid::new(s).unwrap()
    }

    #[test]
    fn relation_list_parsing() {
        let reply = "The output is: \n['language.human_language.main_country','language.human_language.countries_spoken_in','base.rosetta.languoid.parent']";
        assert_eq!(
            parse_relation_list(reply).unwrap(),
            vec![
                "language.human_language.main_country",
                "language.human_language.countries_spoken_in",
                "base.rosetta.languoid.parent"
            ]
        );
        assert_eq!(parse_relation_list("[]").unwrap(), Vec::<String>::new());
        assert!(parse_relation_list("no list here").is_none());
        assert!(parse_relation_list("[unterminated").is_none());
    }

    #[test]
    fn concept_parsing() {
        let reply =
            r#"The output is: {"type": "geographic location", "description": "a place."} trailing"#;
        let c = parse_concept(reply).unwrap();
        assert_eq!(c.type_label, "geographic location");
        assert_eq!(c.description, "a place.");
        assert!(parse_concept("{\"type\": \"\"}").is_none());
        assert!(parse_concept("{not json}").is_none());
        assert!(parse_concept("nothing").is_none());
    }

    #[test]
    fn rendering_of_entities() {
        let mut e = AbstractedEntity::bare(mid("m.x"));
        assert_eq!(e.to_string(), "m.x");
        e.concepts = vec!["person".into(), "author".into()];
        assert_eq!(e.to_string(), "m.x (person, author)");
        e.surface = Some("The Audacity of Hope".into());
        e.concepts.clear();
        assert_eq!(e.to_string(), "The Audacity of Hope");
    }

    #[test]
    fn registry_orders_by_iteration_then_lexicographically() {
        let mut reg = ConceptRegistry::new();
        reg.add_batch(BTreeMap::from([(
            mid("m.x"),
            BTreeSet::from(["person".to_string()]),
        )]));
        reg.add_batch(BTreeMap::from([(
            mid("m.x"),
            BTreeSet::from(["author".to_string(), "Person".to_string()]),
        )]));
        assert_eq!(reg.entity(&mid("m.x")).to_string(), "m.x (person, author)");
        reg.add_batch(BTreeMap::from([(
            mid("m.y"),
            BTreeSet::from(["writer".to_string(), "author".to_string()]),
        )]));
        assert_eq!(reg.concepts(&mid("m.y")), ["author", "writer"]);
    }

    #[test]
    fn abstraction_prompt_marks_empty_side() {
        let prompts = PromptSet::default();
        let p = render_abstraction_prompt(&prompts, &[rel("location.location.containedby")], &[])
            .unwrap();
        assert!(p.contains("'ENTITY' is the object of verbs: (none)\n'ENTITY' is the subject of verbs: containedby\n"));
    }

    #[test]
    fn filter_example() {
        let e = crate::provider::HashingEmbedder::default();
        let out = filter_relations(
            &e,
            "where does the person live",
            &[rel("people.person.places_lived"), rel("music.artist.genre")],
            1,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, rel("people.person.places_lived"));
    }

    #[test]
    fn filter_subset_case_returns_all_sorted() {
        let e = crate::provider::HashingEmbedder::default();
        let out = filter_relations(
            &e,
            "music genre",
            &[rel("people.person.places_lived"), rel("music.artist.genre")],
            5,
        )
        .unwrap();
        assert_eq!(
            out.iter().map(|(r, _)| r.as_str()).collect::<Vec<_>>(),
            ["music.artist.genre", "people.person.places_lived"]
        );
        assert!(out[0].1 >= out[1].1);
    }
}
