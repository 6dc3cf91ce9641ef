//! Prompt templates with named `{{slot}}` placeholders.
//!
//! Defaults are compiled in from `assets/`; a directory containing files of
//! the same names overrides them one by one.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: slot {slot:?} not provided")]
    MissingSlot { template: String, slot: String },
    #[error("template {template}: unknown slot {slot:?}")]
    UnknownSlot { template: String, slot: String },
    #[error("template {template}: unterminated slot")]
    Unterminated { template: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let mut pieces = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| PromptError::Unterminated {
                template: name.into(),
            })?;
            pieces.push(Piece::Slot(after[..close].trim().to_string()));
            rest = &after[close + 2..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            pieces,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slots(&self) -> BTreeSet<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// The fixed text of the template, slots removed.
    pub fn static_text(&self) -> String {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Text(t) => Some(t.as_str()),
                Piece::Slot(_) => None,
            })
            .collect()
    }

    /// The fixed text pieces in order.
    pub fn text_pieces(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Text(t) => Some(t.as_str()),
            Piece::Slot(_) => None,
        })
    }

    /// Fills every slot. Values are inserted verbatim and never re-scanned.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let slots = self.slots();
        if let Some((unknown, _)) = values.iter().find(|(k, _)| !slots.contains(k)) {
            return Err(PromptError::UnknownSlot {
                template: self.name.clone(),
                slot: unknown.to_string(),
            });
        }
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(slot) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == slot)
                        .ok_or_else(|| PromptError::MissingSlot {
                            template: self.name.clone(),
                            slot: slot.clone(),
                        })?
                        .1;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Every template the pipeline renders.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub relation_retrieval: PromptTemplate,
    pub entity_abstraction: PromptTemplate,
    pub structure_abstraction: PromptTemplate,
    pub sufficiency: PromptTemplate,
    pub answer_extraction: PromptTemplate,
    pub fused_generator: PromptTemplate,
    pub chain_of_thought: PromptTemplate,
}

const DEFAULTS: [(&str, &str); 7] = [
    (
        "relation_retrieval",
        include_str!("../assets/relation_retrieval.txt"),
    ),
    (
        "entity_abstraction",
        include_str!("../assets/entity_abstraction.txt"),
    ),
    (
        "structure_abstraction",
        include_str!("../assets/structure_abstraction.txt"),
    ),
    ("sufficiency", include_str!("../assets/sufficiency.txt")),
    (
        "answer_extraction",
        include_str!("../assets/answer_extraction.txt"),
    ),
    (
        "fused_generator",
        include_str!("../assets/fused_generator.txt"),
    ),
    (
        "chain_of_thought",
        include_str!("../assets/chain_of_thought.txt"),
    ),
];

impl PromptSet {
    fn from_texts(
        lookup: impl Fn(&str, &str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let get = |name: &str| -> Result<PromptTemplate, PromptError> {
            let default = DEFAULTS
                .iter()
                .find(|(n, _)| *n == name)
                .expect("known template")
                .1;
            PromptTemplate::parse(name, &lookup(name, default)?)
        };
        Ok(Self {
            relation_retrieval: get("relation_retrieval")?,
            entity_abstraction: get("entity_abstraction")?,
            structure_abstraction: get("structure_abstraction")?,
            sufficiency: get("sufficiency")?,
            answer_extraction: get("answer_extraction")?,
            fused_generator: get("fused_generator")?,
            chain_of_thought: get("chain_of_thought")?,
        })
    }

    pub fn templates(&self) -> [&PromptTemplate; 7] {
        [
            &self.relation_retrieval,
            &self.entity_abstraction,
            &self.structure_abstraction,
            &self.sufficiency,
            &self.answer_extraction,
            &self.fused_generator,
            &self.chain_of_thought,
        ]
    }

    /// Overrides defaults with `<name>.txt` files found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::from_texts(|name, default| {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })
            } else {
                Ok(default.to_string())
            }
        })
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_texts(|_, default| Ok(default.to_string())).expect("bundled templates parse")
    }
}
