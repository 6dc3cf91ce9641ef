//! Fixed SPARQL query templates and the remote endpoint client.
//!
//! Only the handful of templates below are ever issued; each is filled by
//! plain slot substitution. The in-memory index answers the same questions
//! and must return identical result sets.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Direction, GraphError, Mid, Relation};

pub const NS_PREFIX: &str = "http://rdf.freebase.com/ns/";

const PREAMBLE: &str = "PREFIX ns: <http://rdf.freebase.com/ns/>\n";

pub fn relations_query(entity: &Mid, direction: Direction) -> String {
    let pattern = match direction {
        Direction::AsSubject => format!("ns:{entity} ?relation ?x ."),
        Direction::AsObject => format!("?x ?relation ns:{entity} ."),
    };
    format!("{PREAMBLE}SELECT ?relation\nWHERE {{\n{pattern}\n}}")
}

pub fn cluster_query(entity: &Mid, relation: &Relation, direction: Direction) -> String {
    let body = match (relation.hops(), direction) {
        ((single, None), Direction::AsSubject) => format!("ns:{entity} ns:{single} ?tailEntity ."),
        ((single, None), Direction::AsObject) => format!("?tailEntity ns:{single} ns:{entity} ."),
        ((first, Some(second)), Direction::AsSubject) => {
            format!("ns:{entity} ns:{first} ?mid_entity .\n?mid_entity ns:{second} ?tailEntity .")
        }
        ((first, Some(second)), Direction::AsObject) => {
            format!("?tailEntity ns:{first} ?mid_entity .\n?mid_entity ns:{second} ns:{entity} .")
        }
    };
    format!("{PREAMBLE}SELECT ?tailEntity\nWHERE {{\n{body}\n}}")
}

pub fn name_query(entity: &Mid) -> String {
    format!(
        "{PREAMBLE}SELECT DISTINCT ?tailEntity\nWHERE {{\n\
         FILTER (!isLiteral(?tailEntity) OR lang(?tailEntity) = '' OR langMatches(lang(?tailEntity), 'en')) \n\
         {{\n?entity ns:type.object.name ?tailEntity . FILTER(?entity = ns:{entity})\n}}\n}}"
    )
}

/// HTTP SPARQL protocol endpoint. Queries are POSTed as
/// `application/sparql-query` and results read as SPARQL JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparqlEndpoint {
    pub url: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Deserialize)]
struct SparqlResults {
    results: SparqlBindings,
}

#[derive(Deserialize)]
struct SparqlBindings {
    bindings: Vec<serde_json::Map<String, serde_json::Value>>,
}

impl SparqlEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout_secs(),
        }
    }

    fn error(&self, reason: impl ToString) -> GraphError {
        GraphError::Remote {
            endpoint: self.url.clone(),
            reason: reason.to_string(),
        }
    }

    /// Runs `query` and returns the values bound to `var`, in result order.
    pub fn select(&self, query: &str, var: &str) -> Result<Vec<String>, GraphError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.timeout_secs)))
            .build()
            .into();
        let mut response = agent
            .post(&self.url)
            .header("Content-Type", "application/sparql-query")
            .header("Accept", "application/sparql-results+json")
            .send(query)
            .map_err(|e| self.error(e))?;
        let parsed: SparqlResults = response.body_mut().read_json().map_err(|e| self.error(e))?;
        Ok(parsed
            .results
            .bindings
            .iter()
            .filter_map(|row| row.get(var)?.get("value")?.as_str().map(str::to_string))
            .collect())
    }

    pub fn relations(
        &self,
        entity: &Mid,
        direction: Direction,
    ) -> Result<Vec<Relation>, GraphError> {
        let values = self.select(&relations_query(entity, direction), "relation")?;
        let set: BTreeSet<Relation> = values
            .iter()
            .filter_map(|v| v.strip_prefix(NS_PREFIX))
            .filter(|v| *v != super::NAME_RELATION)
            .filter_map(|v| Relation::new(v).ok())
            .collect();
        Ok(set.into_iter().collect())
    }

    pub fn cluster(
        &self,
        entity: &Mid,
        relation: &Relation,
        direction: Direction,
    ) -> Result<Vec<Mid>, GraphError> {
        let values = self.select(&cluster_query(entity, relation, direction), "tailEntity")?;
        let set: BTreeSet<Mid> = values
            .iter()
            .filter_map(|v| v.strip_prefix(NS_PREFIX))
            .filter_map(|v| Mid::new(v).ok())
            .collect();
        Ok(set.into_iter().collect())
    }

    pub fn name(&self, entity: &Mid) -> Result<Option<String>, GraphError> {
        Ok(self
            .select(&name_query(entity), "tailEntity")?
            .into_iter()
            .next())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_fill_slots() {
        let m = Mid::new("m.02mjmr").unwrap();
        assert_eq!(
            relations_query(&m, Direction::AsSubject),
            "PREFIX ns: <http://rdf.freebase.com/ns/>\nSELECT ?relation\nWHERE {\nns:m.02mjmr ?relation ?x .\n}"
        );
        assert_eq!(
            relations_query(&m, Direction::AsObject),
            "PREFIX ns: <http://rdf.freebase.com/ns/>\nSELECT ?relation\nWHERE {\n?x ?relation ns:m.02mjmr .\n}"
        );
        let r = Relation::new("people.person.education|education.education.major_field_of_study")
            .unwrap();
        assert_eq!(
            cluster_query(&m, &r, Direction::AsSubject),
            "PREFIX ns: <http://rdf.freebase.com/ns/>\nSELECT ?tailEntity\nWHERE {\n\
             ns:m.02mjmr ns:people.person.education ?mid_entity .\n\
             ?mid_entity ns:education.education.major_field_of_study ?tailEntity .\n}"
        );
        assert!(name_query(&m).contains("FILTER(?entity = ns:m.02mjmr)"));
        assert!(name_query(&m)
            .starts_with("PREFIX ns: <http://rdf.freebase.com/ns/>\nSELECT DISTINCT ?tailEntity"));
    }
}
