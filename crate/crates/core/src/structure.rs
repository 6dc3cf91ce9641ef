//! Structure-oriented abstraction: question to rationale plus concept path.
//!
//! Path grammar, whitespace-tolerant:
//!
//! ```text
//! path    ::= segment (';' segment)*
//! segment ::= '{'? node '->' phrase '->' node '}'?
//! node    ::= surface ('(' concept ')')?
//! ```

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::context::QuestionContext;
use crate::error::PipelineError;
use crate::provider::{DecodingParams, ModuleTag, ProviderError};

const PATH_REMINDER: &str =
    "\nFollow the example format exactly, with the lines Thought:, Reasoning Path: and Answer:.";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathTriplet {
    pub head_surface: String,
    pub head_concept: String,
    pub relation_phrase: String,
    pub tail_surface: String,
    pub tail_concept: String,
}

fn node(f: &mut fmt::Formatter<'_>, surface: &str, concept: &str) -> fmt::Result {
    match (surface.is_empty(), concept.is_empty()) {
        // A surface that itself ends in a parenthetical needs an explicit
        // empty concept to survive re-parsing.
        (_, true) if parse_node(surface).0 != surface => write!(f, "{surface} ()"),
        (_, true) => f.write_str(surface),
        (true, false) => write!(f, "({concept})"),
        (false, false) => write!(f, "{surface} ({concept})"),
    }
}

impl PathTriplet {
    /// Canonical `{head (c) -> phrase -> tail (c)}` form.
    pub fn canonical(&self) -> String {
        struct Canon<'a>(&'a PathTriplet);
        impl fmt::Display for Canon<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let t = self.0;
                f.write_str("{")?;
                node(f, &t.head_surface, &t.head_concept)?;
                write!(f, " -> {} -> ", t.relation_phrase)?;
                node(f, &t.tail_surface, &t.tail_concept)?;
                f.write_str("}")
            }
        }
        Canon(self).to_string()
    }
}

/// Comma form used for embedding: `head (c), phrase, tail (c)`.
impl fmt::Display for PathTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        node(f, &self.head_surface, &self.head_concept)?;
        write!(f, ", {}, ", self.relation_phrase)?;
        node(f, &self.tail_surface, &self.tail_concept)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPath {
    pub triplets: Vec<PathTriplet>,
    pub rationale: String,
    /// The model's own guess. Stored for the run log only; it is never shown
    /// to the generator.
    pub predicted_answer: Option<String>,
}

impl ConceptPath {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Segments joined by `; `.
    pub fn canonical(&self) -> String {
        render_path(&self.triplets)
    }
}

pub fn render_path(triplets: &[PathTriplet]) -> String {
    triplets
        .iter()
        .map(PathTriplet::canonical)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Splits a trailing balanced `( ... )` off a node.
fn parse_node(text: &str) -> (String, String) {
    let text = text.trim();
    if text.ends_with(')') {
        let mut depth = 0usize;
        for (i, c) in text.char_indices().rev() {
            match c {
                ')' => depth += 1,
                '(' => {
                    depth -= 1;
                    if depth == 0 {
                        let concept = text[i + 1..text.len() - 1].trim();
                        return (text[..i].trim().to_string(), concept.to_string());
                    }
                }
                _ => {}
            }
        }
    }
    (text.to_string(), String::new())
}

fn parse_segment(segment: &str) -> Option<PathTriplet> {
    let mut s = segment.trim();
    s = s.strip_prefix('{').unwrap_or(s);
    s = s.strip_suffix('}').unwrap_or(s);
    let parts: Vec<&str> = s.split("->").collect();
    let [head, phrase, tail] = parts[..] else {
        return None;
    };
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return None;
    }
    let (head_surface, head_concept) = parse_node(head);
    let (tail_surface, tail_concept) = parse_node(tail);
    Some(PathTriplet {
        head_surface,
        head_concept,
        relation_phrase: phrase.to_string(),
        tail_surface,
        tail_concept,
    })
}

/// Parses every well-formed segment; malformed ones are skipped and exact
/// duplicates dropped. Never fails.
pub fn parse_concept_path(text: &str) -> Vec<PathTriplet> {
    let mut out: Vec<PathTriplet> = Vec::new();
    for segment in text.split(';') {
        if let Some(t) = parse_segment(segment) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

fn section<'t>(text: &'t str, label: &str, terminators: &[&str]) -> Option<&'t str> {
    let start = text.find(label)? + label.len();
    let rest = &text[start..];
    let end = terminators
        .iter()
        .filter_map(|t| rest.find(t))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Splits a `Thought:` / `Reasoning Path:` / `Answer:` reply. `None` when
/// the path section is missing or holds no well-formed segment.
pub fn parse_structure_reply(reply: &str) -> Option<ConceptPath> {
    let path_text = section(
        reply,
        "Reasoning Path:",
        &["\nAnswer:", "\nQuestion:", "\n\n"],
    )?;
    let triplets = parse_concept_path(path_text);
    if triplets.is_empty() {
        return None;
    }
    let rationale = section(reply, "Thought:", &["Reasoning Path:"])
        .unwrap_or_default()
        .to_string();
    let predicted_answer = section(reply, "Answer:", &["\n"])
        .filter(|a| !a.is_empty())
        .map(str::to_string);
    Some(ConceptPath {
        triplets,
        rationale,
        predicted_answer,
    })
}

/// Generates the concept path for a question. Falls back to an empty path
/// after one reprompt.
pub fn abstract_question(
    ctx: &QuestionContext<'_>,
    question: &str,
) -> Result<ConceptPath, PipelineError> {
    let prompt = ctx
        .prompts
        .structure_abstraction
        .render(&[("question", question)])?;
    let params = DecodingParams::deterministic();
    for attempt in [prompt.clone(), format!("{prompt}{PATH_REMINDER}")] {
        match ctx
            .llm
            .complete(ModuleTag::StructureAbstraction, &attempt, params)
        {
            Ok(c) => {
                if let Some(path) = parse_structure_reply(&c.text) {
                    return Ok(path);
                }
            }
            Err(ProviderError::EmptyCompletion) => {}
            Err(e) => return Err(e.into()),
        }
    }
    warn!("structure abstraction: no usable reasoning path, scoring against the question instead");
    Ok(ConceptPath::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(hs: &str, hc: &str, r: &str, ts: &str, tc: &str) -> PathTriplet {
        PathTriplet {
            head_surface: hs.into(),
            head_concept: hc.into(),
            relation_phrase: r.into(),
            tail_surface: ts.into(),
            tail_concept: tc.into(),
        }
    }

    #[test]
    fn braces_and_concepts() {
        assert_eq!(
            parse_concept_path("{A (x) -> r -> B (y)}"),
            vec![pt("A", "x", "r", "B", "y")]
        );
        assert_eq!(
            parse_concept_path("A -> r -> B"),
            vec![pt("A", "", "r", "B", "")]
        );
    }

    #[test]
    fn malformed_segments_are_skipped() {
        let parsed = parse_concept_path("{A -> r}; {C (c) -> s -> D}; garbage; {E -> -> F}");
        assert_eq!(parsed, vec![pt("C", "c", "s", "D", "")]);
        assert!(parse_concept_path("").is_empty());
    }

    #[test]
    fn duplicates_are_removed() {
        assert_eq!(parse_concept_path("A -> r -> B; {A -> r -> B}").len(), 1);
    }

    #[test]
    fn sa_exemplar_decomposes() {
        let text = "{George Washington University (education institution) -> represented in sports by -> George Washington Colonials men's basketball (sport team)}; {George Washington University (education institution) -> located in -> Washington D.C. (state)}";
        assert_eq!(
            parse_concept_path(text),
            vec![
                pt(
                    "George Washington University",
                    "education institution",
                    "represented in sports by",
                    "George Washington Colonials men's basketball",
                    "sport team"
                ),
                pt(
                    "George Washington University",
                    "education institution",
                    "located in",
                    "Washington D.C.",
                    "state"
                ),
            ]
        );
    }

    #[test]
    fn reply_sections() {
        let reply = "Thought: First think.\nReasoning Path: {A (x) -> r -> B (y)}\nAnswer: B (y)";
        let path = parse_structure_reply(reply).unwrap();
        assert_eq!(path.rationale, "First think.");
        assert_eq!(path.predicted_answer.as_deref(), Some("B (y)"));
        assert_eq!(path.triplets.len(), 1);
        assert!(parse_structure_reply("Thought: nothing\nAnswer: x").is_none());
    }

    #[test]
    fn comma_serialization() {
        assert_eq!(pt("A", "", "r", "B", "").to_string(), "A, r, B");
        assert_eq!(
            pt("Common", "artist", "nominated for", "X", "work").to_string(),
            "Common (artist), nominated for, X (work)"
        );
    }
}
