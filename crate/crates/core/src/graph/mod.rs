//! Knowledge graph access.
//!
//! A [`GraphHandle`] answers the three neighbour queries the pipeline needs
//! (adjacent relations, entity clusters, entity names) either from an
//! in-memory triple index or from a remote SPARQL endpoint. Entities are
//! only ever addressed by their opaque [`Mid`].

mod cvt;
mod load;
mod memory;
pub mod sparql;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cvt::flatten_cvt;
pub use load::{load_graph, GraphSource};
pub use memory::TripleIndex;
pub use sparql::SparqlEndpoint;

/// Separator joining the two hops of a flattened CVT relation.
pub const RELATION_SEPARATOR: char = '|';

/// Relation carrying English surface names in Freebase-style graphs.
pub const NAME_RELATION: &str = "type.object.name";

/// Default pattern for anonymized identifiers (`m.02mjmr`, `g.11b6p3`).
pub const DEFAULT_MID_PATTERN: &str = r"^[a-z]\.[0-9a-z_]+$";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("empty graph")]
    Empty,
    #[error("invalid identifier {0:?}")]
    InvalidMid(String),
    #[error("invalid relation {0:?}")]
    InvalidRelation(String),
    #[error("invalid MID pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("SPARQL endpoint {endpoint}: {reason}")]
    Remote { endpoint: String, reason: String },
}

/// Opaque anonymized entity identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Mid(String);

impl Mid {
    /// Builds an identifier without checking it against a [`MidPattern`];
    /// only emptiness and whitespace are rejected.
    pub fn new(value: impl Into<String>) -> Result<Self, GraphError> {
        let value = value.into();
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(GraphError::InvalidMid(value));
        }
        Ok(Mid(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Mid {
    type Error = GraphError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Mid::new(value)
    }
}

impl From<Mid> for String {
    fn from(mid: Mid) -> Self {
        mid.0
    }
}

impl fmt::Display for Mid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The configured shape of identifiers, used both to validate graph files
/// and to find identifiers inside free text.
#[derive(Debug, Clone)]
pub struct MidPattern {
    whole: Regex,
    embedded: Regex,
}

impl MidPattern {
    pub fn new(pattern: &str) -> Result<Self, GraphError> {
        let whole = Regex::new(pattern)?;
        let body = pattern.trim_start_matches('^').trim_end_matches('$');
        let embedded = Regex::new(&format!(r"(?:^|[^A-Za-z0-9_.])({body})(?:$|[^A-Za-z0-9_])"))?;
        Ok(Self { whole, embedded })
    }

    pub fn matches(&self, candidate: &str) -> bool {
        self.whole.is_match(candidate)
    }

    pub fn parse(&self, candidate: &str) -> Result<Mid, GraphError> {
        if self.matches(candidate) {
            Mid::new(candidate)
        } else {
            Err(GraphError::InvalidMid(candidate.to_string()))
        }
    }

    /// All identifier occurrences in `text` as `(byte offset, mid)`.
    pub fn find_all<'t>(&self, text: &'t str) -> Vec<(usize, &'t str)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start <= text.len() {
            let Some(caps) = self.embedded.captures_at(text, start) else {
                break;
            };
            let m = caps.get(1).expect("group 1 always participates");
            out.push((m.start(), m.as_str()));
            start = m.end();
        }
        out
    }
}

impl Default for MidPattern {
    fn default() -> Self {
        MidPattern::new(DEFAULT_MID_PATTERN).expect("default pattern compiles")
    }
}

/// A dotted relation path, or two of them joined by [`RELATION_SEPARATOR`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Relation(String);

impl Relation {
    pub fn new(value: impl Into<String>) -> Result<Self, GraphError> {
        let value = value.into();
        let separators = value.matches(RELATION_SEPARATOR).count();
        let bad_hop = value.split(RELATION_SEPARATOR).any(str::is_empty);
        if value.is_empty() || value.chars().any(char::is_whitespace) || separators > 1 || bad_hop {
            return Err(GraphError::InvalidRelation(value));
        }
        Ok(Relation(value))
    }

    /// Joins two single-hop relations into a flattened two-hop relation.
    pub fn compose(first: &Relation, second: &Relation) -> Result<Self, GraphError> {
        Relation::new(format!("{}{}{}", first.0, RELATION_SEPARATOR, second.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_flattened(&self) -> bool {
        self.0.contains(RELATION_SEPARATOR)
    }

    /// The one or two hops making up this relation.
    pub fn hops(&self) -> (Relation, Option<Relation>) {
        match self.0.split_once(RELATION_SEPARATOR) {
            Some((a, b)) => (Relation(a.to_string()), Some(Relation(b.to_string()))),
            None => (self.clone(), None),
        }
    }

    /// Verb-phrase rendering: last dotted segment of each hop, underscores
    /// as spaces (`people.person.places_lived` becomes `places lived`).
    pub fn humanized(&self) -> String {
        self.0
            .split(RELATION_SEPARATOR)
            .map(|hop| hop.rsplit('.').next().unwrap_or(hop).replace('_', " "))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<String> for Relation {
    type Error = GraphError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Relation::new(value)
    }
}

impl From<Relation> for String {
    fn from(relation: Relation) -> Self {
        relation.0
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: Mid,
    pub relation: Relation,
    pub tail: Mid,
}

impl Triplet {
    pub fn new(head: Mid, relation: Relation, tail: Mid) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Which side of a triple the queried entity occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The entity is the head: `(e, r, ?x)`.
    AsSubject,
    /// The entity is the tail: `(?x, r, e)`.
    AsObject,
}

#[derive(Debug, Clone)]
enum Backend {
    InMemory(Arc<TripleIndex>),
    Remote(SparqlEndpoint),
}

/// Immutable, cheaply clonable access to a loaded graph.
#[derive(Debug, Clone)]
pub struct GraphHandle {
    backend: Backend,
    cvt_prefixes: Arc<Vec<String>>,
}

impl GraphHandle {
    pub fn in_memory(index: TripleIndex, cvt_prefixes: Vec<String>) -> Self {
        Self {
            backend: Backend::InMemory(Arc::new(index)),
            cvt_prefixes: Arc::new(cvt_prefixes),
        }
    }

    pub fn remote(endpoint: SparqlEndpoint, cvt_prefixes: Vec<String>) -> Self {
        Self {
            backend: Backend::Remote(endpoint),
            cvt_prefixes: Arc::new(cvt_prefixes),
        }
    }

    pub fn cvt_prefixes(&self) -> &[String] {
        &self.cvt_prefixes
    }

    /// Whether a single-hop relation mediates a CVT node.
    pub fn is_cvt_relation(&self, relation: &Relation) -> bool {
        !relation.is_flattened()
            && self
                .cvt_prefixes
                .iter()
                .any(|prefix| relation.as_str().starts_with(prefix.as_str()))
    }

    /// The in-memory index, when this handle is not remote.
    pub fn index(&self) -> Option<&TripleIndex> {
        match &self.backend {
            Backend::InMemory(index) => Some(index),
            Backend::Remote(_) => None,
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self.backend, Backend::Remote(_))
    }

    pub fn contains_entity(&self, mid: &Mid) -> Result<bool, GraphError> {
        match &self.backend {
            Backend::InMemory(index) => Ok(index.contains_entity(mid)),
            Backend::Remote(_) => {
                let out = self.adjacent_relations(mid, Direction::AsSubject)?;
                if !out.is_empty() {
                    return Ok(true);
                }
                Ok(!self
                    .adjacent_relations(mid, Direction::AsObject)?
                    .is_empty())
            }
        }
    }

    /// Relations incident to `entity` on the given side, lexicographically
    /// ordered and deduplicated.
    pub fn adjacent_relations(
        &self,
        entity: &Mid,
        direction: Direction,
    ) -> Result<Vec<Relation>, GraphError> {
        match &self.backend {
            Backend::InMemory(index) => Ok(index.adjacent_relations(entity, direction)),
            Backend::Remote(endpoint) => self.remote_relations(endpoint, entity, direction),
        }
    }

    /// Entities reached from `entity` through `relation`. Flattened relations
    /// traverse the intermediate node, which never appears in the result.
    pub fn entity_cluster(
        &self,
        entity: &Mid,
        relation: &Relation,
        direction: Direction,
    ) -> Result<Vec<Mid>, GraphError> {
        match &self.backend {
            Backend::InMemory(index) => Ok(index.entity_cluster(entity, relation, direction)),
            Backend::Remote(endpoint) => self.remote_cluster(endpoint, entity, relation, direction),
        }
    }

    /// Whether `node` is the tail of a CVT-mediating relation.
    fn is_mediator(&self, endpoint: &SparqlEndpoint, node: &Mid) -> Result<bool, GraphError> {
        Ok(endpoint
            .relations(node, Direction::AsObject)?
            .iter()
            .any(|r| self.is_cvt_relation(r)))
    }

    /// Remote graphs flatten at query time, with the same result sets as
    /// [`flatten_cvt`] on the equivalent local graph.
    fn remote_relations(
        &self,
        endpoint: &SparqlEndpoint,
        entity: &Mid,
        direction: Direction,
    ) -> Result<Vec<Relation>, GraphError> {
        let raw = endpoint.relations(entity, direction)?;
        if self.cvt_prefixes.is_empty() {
            return Ok(raw);
        }
        if self.is_mediator(endpoint, entity)? {
            return Ok(Vec::new());
        }
        let mut candidates: BTreeSet<Relation> = BTreeSet::new();
        for relation in raw {
            match (self.is_cvt_relation(&relation), direction) {
                (true, Direction::AsSubject) => {
                    for mediator in endpoint.cluster(entity, &relation, direction)? {
                        for second in endpoint.relations(&mediator, Direction::AsSubject)? {
                            if !second.is_flattened() {
                                candidates.insert(Relation::compose(&relation, &second)?);
                            }
                        }
                    }
                }
                (true, Direction::AsObject) => {}
                (false, Direction::AsSubject) => {
                    candidates.insert(relation);
                }
                (false, Direction::AsObject) => {
                    for head in endpoint.cluster(entity, &relation, direction)? {
                        for first in endpoint.relations(&head, Direction::AsObject)? {
                            if self.is_cvt_relation(&first) {
                                candidates.insert(Relation::compose(&first, &relation)?);
                            }
                        }
                    }
                    candidates.insert(relation);
                }
            }
        }
        let mut out = Vec::new();
        for relation in candidates {
            if !self
                .remote_cluster(endpoint, entity, &relation, direction)?
                .is_empty()
            {
                out.push(relation);
            }
        }
        Ok(out)
    }

    fn remote_cluster(
        &self,
        endpoint: &SparqlEndpoint,
        entity: &Mid,
        relation: &Relation,
        direction: Direction,
    ) -> Result<Vec<Mid>, GraphError> {
        let members = endpoint.cluster(entity, relation, direction)?;
        if self.cvt_prefixes.is_empty() {
            return Ok(members);
        }
        if self.is_mediator(endpoint, entity)? {
            return Ok(Vec::new());
        }
        let (first, second) = relation.hops();
        let well_formed = match second {
            Some(_) => self.is_cvt_relation(&first),
            None => !self.is_cvt_relation(relation),
        };
        if !well_formed {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for member in members {
            let loops_back = relation.is_flattened() && &member == entity;
            if !loops_back && !self.is_mediator(endpoint, &member)? {
                out.push(member);
            }
        }
        Ok(out)
    }

    /// Surface name lookup. Kept crate-private: only the privacy layer may
    /// resolve names.
    pub(crate) fn entity_name(&self, entity: &Mid) -> Result<Option<String>, GraphError> {
        match &self.backend {
            Backend::InMemory(index) => Ok(index.name(entity).map(str::to_string)),
            Backend::Remote(endpoint) => endpoint.name(entity),
        }
    }

    /// All `(mid, name)` pairs known locally; empty for remote graphs.
    pub(crate) fn all_names(&self) -> Vec<(Mid, String)> {
        match &self.backend {
            Backend::InMemory(index) => index
                .names()
                .map(|(m, n)| (m.clone(), n.to_string()))
                .collect(),
            Backend::Remote(_) => Vec::new(),
        }
    }
}
