//! Synthetic worlds and a scripted model for end-to-end runs without a
//! live provider.
//!
//! A world is a small Freebase-shaped graph (with CVT mediators and entity
//! names) plus one script per question. Gold answers are computed from the
//! graph, never from the pipeline.

mod bundle;
mod llm;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bundle::{write_bundle, Bundle};
pub use llm::SimLlm;
pub use world::{
    concept_ablation_world, structure_ablation_world, toy_world, walk, worked_example_world,
    SimWorld,
};

use crate::eval::{BenchmarkItem, GoldAnswer};
use crate::graph::{Direction, MidPattern, Relation};
use crate::pipeline::{Pipeline, TopicEntity};
use crate::privacy::{build_privacy_map, LeakPolicy, PrivacyGuard};
use crate::prompt::PromptSet;
use crate::provider::{tokenize, CachedEmbedder, HashingEmbedder, LlmBackend, LlmClient};
use crate::retrieval::EngineSettings;

/// One schema relation as seen after CVT flattening.
#[derive(Debug, Clone, Copy)]
pub struct RelationSpec {
    pub relation: &'static str,
    pub subject: &'static str,
    pub object: &'static str,
    /// Whether the relation name says anything about its endpoints.
    pub descriptive: bool,
}

const fn spec(relation: &'static str, subject: &'static str, object: &'static str) -> RelationSpec {
    RelationSpec {
        relation,
        subject,
        object,
        descriptive: true,
    }
}

pub const PERSON: &str = "person";
pub const CITY: &str = "city";
pub const COUNTRY: &str = "country";
pub const LANGUAGE: &str = "language";
pub const UNIVERSITY: &str = "university";
pub const DISCIPLINE: &str = "academic discipline";
pub const FILM: &str = "film";
pub const BOOK: &str = "written work";
pub const COMPANY: &str = "organization";
pub const TEAM: &str = "sports team";
pub const AWARD: &str = "award";

pub const EDUCATION: &str = "people.person.education";
pub const PLACES_LIVED: &str = "people.person.places_lived";
pub const NOMINATIONS: &str = "award.award_nominee.award_nominations";

pub const BIRTHPLACE: &str = "people.person.place_of_birth";
pub const NATIONALITY: &str = "people.person.nationality";
pub const LANGUAGES: &str = "people.person.languages";
pub const SPOUSE: &str = "people.person.spouse_s";
pub const INSTITUTION: &str = "people.person.education|education.education.institution";
pub const MAJOR: &str = "people.person.education|education.education.major_field_of_study";
pub const LIVED: &str = "people.person.places_lived|people.place_lived.location";
pub const NOMINATED: &str = "award.award_nominee.award_nominations|award.award_nomination.award";
pub const CONTAINED_BY: &str = "location.location.containedby";
pub const CAPITAL: &str = "location.country.capital";
pub const OFFICIAL_LANGUAGE: &str = "location.country.official_language";
pub const SPOKEN_IN: &str = "language.human_language.countries_spoken_in";
pub const DIRECTED_BY: &str = "film.film.directed_by";
pub const FILM_COUNTRY: &str = "film.film.country";
pub const AUTHOR: &str = "book.written_work.author";
pub const FOUNDERS: &str = "organization.organization.founders";
pub const HEADQUARTERS: &str = "organization.organization.headquarters";
pub const TEAM_LOCATION: &str = "sports.sports_team.location";
pub const LINK_A: &str = "base.kgx.affiliation.link_a";
pub const LINK_B: &str = "base.kgx.affiliation.link_b";

/// The flattened schema of every synthetic world.
pub const SCHEMA: &[RelationSpec] = &[
    spec(BIRTHPLACE, PERSON, CITY),
    spec(NATIONALITY, PERSON, COUNTRY),
    spec(LANGUAGES, PERSON, LANGUAGE),
    spec(SPOUSE, PERSON, PERSON),
    spec(INSTITUTION, PERSON, UNIVERSITY),
    spec(MAJOR, PERSON, DISCIPLINE),
    spec(LIVED, PERSON, CITY),
    spec(NOMINATED, PERSON, AWARD),
    spec(CONTAINED_BY, CITY, COUNTRY),
    spec(CONTAINED_BY, UNIVERSITY, CITY),
    spec(CAPITAL, COUNTRY, CITY),
    spec(OFFICIAL_LANGUAGE, COUNTRY, LANGUAGE),
    spec(SPOKEN_IN, LANGUAGE, COUNTRY),
    spec(DIRECTED_BY, FILM, PERSON),
    spec(FILM_COUNTRY, FILM, COUNTRY),
    spec(AUTHOR, BOOK, PERSON),
    spec(FOUNDERS, COMPANY, PERSON),
    spec(HEADQUARTERS, COMPANY, CITY),
    spec(TEAM_LOCATION, TEAM, CITY),
    RelationSpec {
        relation: LINK_A,
        subject: PERSON,
        object: UNIVERSITY,
        descriptive: false,
    },
    RelationSpec {
        relation: LINK_B,
        subject: PERSON,
        object: CITY,
        descriptive: false,
    },
];

pub fn schema_spec(relation: &str) -> Option<&'static RelationSpec> {
    SCHEMA.iter().find(|s| s.relation == relation)
}

/// CVT-mediating relation prefixes of the synthetic worlds.
pub fn cvt_prefixes() -> Vec<String> {
    vec![EDUCATION.into(), PLACES_LIVED.into(), NOMINATIONS.into()]
}

/// Verb-to-type knowledge of the simulated model.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    subject: BTreeMap<String, BTreeSet<String>>,
    object: BTreeMap<String, BTreeSet<String>>,
    by_relation: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn from_schema(schema: &[RelationSpec]) -> Self {
        let mut lex = Lexicon::default();
        for s in schema.iter().filter(|s| s.descriptive) {
            let rel = Relation::new(s.relation).expect("schema relation");
            let verb = rel.humanized();
            lex.subject
                .entry(verb.clone())
                .or_default()
                .insert(s.subject.into());
            lex.object.entry(verb).or_default().insert(s.object.into());
            lex.by_relation
                .entry(s.relation.into())
                .or_insert_with(|| vec![s.subject.to_string(), s.object.to_string()]);
        }
        lex
    }

    /// Endpoint types of a known relation.
    pub fn types_of(&self, relation: &str) -> &[String] {
        self.by_relation.get(relation).map_or(&[], Vec::as_slice)
    }

    /// Majority type over the verbs, ties to the lexicographically smallest;
    /// "entity" when no verb is known.
    pub fn vote(&self, subject_verbs: &[String], object_verbs: &[String]) -> String {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (verbs, table) in [(subject_verbs, &self.subject), (object_verbs, &self.object)] {
            for verb in verbs {
                for t in table.get(verb).into_iter().flatten() {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let best = counts.values().copied().max().unwrap_or(0);
        counts
            .into_iter()
            .find(|(_, c)| *c == best && best > 0)
            .map_or_else(|| "entity".to_string(), |(t, _)| t.to_string())
    }
}

/// One step of a question's relation chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub relation: Relation,
    pub direction: Direction,
    /// Type of the entity the hop starts from.
    pub source: String,
    /// Type of the entity the hop reaches.
    pub target: String,
}

impl Hop {
    pub fn forward(relation: &str) -> Self {
        let s = schema_spec(relation).expect("schema relation");
        Hop {
            relation: Relation::new(relation).expect("valid relation"),
            direction: Direction::AsSubject,
            source: s.subject.into(),
            target: s.object.into(),
        }
    }

    pub fn backward(relation: &str) -> Self {
        let s = schema_spec(relation).expect("schema relation");
        Hop {
            relation: Relation::new(relation).expect("valid relation"),
            direction: Direction::AsObject,
            source: s.object.into(),
            target: s.subject.into(),
        }
    }

    /// Short relation phrase as a model would write it in a reasoning path.
    pub fn phrase(&self) -> String {
        self.relation
            .as_str()
            .rsplit(['.', '|'])
            .next()
            .unwrap_or_default()
            .replace('_', " ")
    }
}

/// Everything the simulated model knows about one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionScript {
    pub question: String,
    pub topic: TopicEntity,
    pub topic_type: String,
    /// Hops the model follows by relation name.
    pub bridges: Vec<Hop>,
    /// Alternative last hops; their endpoints are the answer candidates.
    pub finals: Vec<Hop>,
    /// When set, candidates are told apart by concept label only.
    pub target_concept: Option<String>,
    pub sa_reply: String,
    pub cot_reply: String,
    pub gold: Vec<GoldAnswer>,
}

impl QuestionScript {
    pub fn item(&self) -> BenchmarkItem {
        BenchmarkItem {
            id: None,
            question: self.question.clone(),
            topic_entities: vec![self.topic.clone()],
            answers: self.gold.clone(),
        }
    }

    pub fn hops(&self) -> usize {
        self.bridges.len() + 1
    }
}

/// The reasoning-path reply for a chain starting at the topic entity.
pub fn structure_reply(topic: &str, topic_type: &str, hops: &[Hop], answer_type: &str) -> String {
    let mut segments = Vec::new();
    let mut node = format!("{topic} ({topic_type})");
    for hop in hops {
        let next = format!("({})", hop.target);
        segments.push(match hop.direction {
            Direction::AsSubject => format!("{{{node} -> {} -> {next}}}", hop.phrase()),
            Direction::AsObject => format!("{{{next} -> {} -> {node}}}", hop.phrase()),
        });
        node = next;
    }
    format!(
        "Thought: Start from {topic} and follow {} relation(s) to the answer.\nReasoning Path: {}\nAnswer: ({answer_type})",
        hops.len(),
        segments.join("; ")
    )
}

/// Whether `name` could occur in a prompt without being leaked: true when
/// every token of it is ordinary prompt vocabulary.
pub(crate) fn collides_with_vocabulary(name: &str, vocabulary: &BTreeSet<String>) -> bool {
    tokenize(name).all(|t| vocabulary.contains(&t))
}

impl SimWorld {
    pub fn llm(&self) -> Arc<SimLlm> {
        Arc::new(SimLlm::new(
            self.scripts.clone(),
            Lexicon::from_schema(SCHEMA),
        ))
    }

    pub fn items(&self) -> Vec<BenchmarkItem> {
        self.scripts.iter().map(QuestionScript::item).collect()
    }

    /// A pipeline over the flattened graph answered by the sim model.
    pub fn pipeline(&self, settings: EngineSettings) -> Pipeline {
        self.pipeline_with(self.llm(), settings)
    }

    /// Same as [`SimWorld::pipeline`] with another backend, e.g. a recorder.
    pub fn pipeline_with(
        &self,
        backend: Arc<dyn LlmBackend>,
        settings: EngineSettings,
    ) -> Pipeline {
        let graph = self.graph();
        let prompts = PromptSet::default();
        let guard = PrivacyGuard::new(build_privacy_map(&graph), LeakPolicy::Block)
            .with_public_templates(&prompts);
        Pipeline {
            graph,
            client: LlmClient::new(backend, guard),
            embedder: Arc::new(CachedEmbedder::new(Arc::new(HashingEmbedder::default()))),
            prompts,
            mid_pattern: MidPattern::default(),
            settings,
        }
    }
}
