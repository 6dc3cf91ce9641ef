//! A deterministic stand-in for the language model.
//!
//! It reads only the prompt it is given plus a per-question script, so every
//! answer it produces is derivable from what the pipeline showed it.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{Direction, MidPattern};
use crate::provider::{
    tokenize, whitespace_tokens, Completion, CompletionRequest, LlmBackend, ModuleTag,
    ProviderError, TokenUsage,
};

use super::{Hop, Lexicon, QuestionScript};

/// Text after the last occurrence of `label` up to the end of that line.
fn last_line_after<'t>(text: &'t str, label: &str) -> Option<&'t str> {
    let start = text.rfind(label)? + label.len();
    Some(text[start..].lines().next().unwrap_or("").trim())
}

/// The evidence block of a generator prompt.
fn evidence_block(prompt: &str) -> Vec<&str> {
    let Some(start) = prompt.rfind("Knowledge Triplets: ") else {
        return Vec::new();
    };
    let rest = &prompt[start + "Knowledge Triplets: ".len()..];
    let end = rest.rfind("\nA:").unwrap_or(rest.len());
    rest[..end]
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    key: String,
    concepts: Vec<String>,
    text: String,
}

fn parse_node(text: &str) -> Node {
    let text = text.trim();
    if let Some(body) = text.strip_suffix(')') {
        if let Some(open) = body.rfind(" (") {
            return Node {
                key: body[..open].trim().to_string(),
                concepts: body[open + 2..]
                    .split(", ")
                    .map(|c| c.trim().to_string())
                    .collect(),
                text: text.to_string(),
            };
        }
    }
    Node {
        key: text.to_string(),
        concepts: Vec::new(),
        text: text.to_string(),
    }
}

fn parse_evidence_line(line: &str, pattern: &MidPattern) -> Option<(Node, String, Node)> {
    let parts: Vec<&str> = line.split(", ").collect();
    let is_relation = |p: &str| {
        p.contains('.')
            && !p.contains(char::is_whitespace)
            && !pattern.matches(p)
            && !p.ends_with(')')
    };
    let i = (1..parts.len().saturating_sub(1)).find(|&i| is_relation(parts[i]))?;
    Some((
        parse_node(&parts[..i].join(", ")),
        parts[i].to_string(),
        parse_node(&parts[i + 1..].join(", ")),
    ))
}

/// Entities reached from `from` through `hop` in the evidence.
fn follow<'e>(
    evidence: &'e [(Node, String, Node)],
    from: &BTreeSet<String>,
    hop: &Hop,
) -> Vec<&'e Node> {
    let mut out: Vec<&Node> = Vec::new();
    for (head, relation, tail) in evidence {
        if relation != hop.relation.as_str() {
            continue;
        }
        let (src, dst) = match hop.direction {
            Direction::AsSubject => (head, tail),
            Direction::AsObject => (tail, head),
        };
        if from.contains(&src.key) && !out.iter().any(|n| n.key == dst.key) {
            out.push(dst);
        }
    }
    out
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).collect()
}

/// Scripted model over the toy world.
#[derive(Debug, Clone)]
pub struct SimLlm {
    scripts: BTreeMap<String, QuestionScript>,
    lexicon: Lexicon,
    pattern: MidPattern,
}

impl SimLlm {
    pub fn new(scripts: impl IntoIterator<Item = QuestionScript>, lexicon: Lexicon) -> Self {
        Self {
            scripts: scripts
                .into_iter()
                .map(|s| (s.question.clone(), s))
                .collect(),
            lexicon,
            pattern: MidPattern::default(),
        }
    }

    fn script_for(&self, prompt: &str, label: &str) -> Option<&QuestionScript> {
        self.scripts.get(last_line_after(prompt, label)?)
    }

    /// The relations the model would pick for one topic entity. Exposed so
    /// tests can predict call counts without running the pipeline.
    pub fn choose_relations(
        &self,
        question: &str,
        topic_label: &str,
        candidates: &[String],
        width: usize,
    ) -> Vec<String> {
        let script = self.scripts.get(question);
        let topic = parse_node(topic_label);
        let topic_types: Option<Vec<String>> = match script {
            Some(s) if topic.key == s.topic.name => Some(vec![s.topic_type.clone()]),
            _ if topic.concepts.is_empty() => None,
            _ => Some(topic.concepts.clone()),
        };
        let mut chosen: Vec<String> = Vec::new();
        if let Some(script) = script {
            for hop in script.bridges.iter().chain(&script.finals) {
                let fits = topic_types
                    .as_ref()
                    .is_none_or(|types| types.contains(&hop.source));
                let name = hop.relation.as_str();
                if fits && candidates.iter().any(|c| c == name) && !chosen.iter().any(|c| c == name)
                {
                    chosen.push(name.to_string());
                }
            }
        }
        // Short tokens are function words ("of", "the") and carry no signal.
        let q: BTreeSet<String> = token_set(question)
            .into_iter()
            .filter(|t| t.len() > 3)
            .collect();
        let mut rest: Vec<(usize, &String)> = candidates
            .iter()
            .filter(|c| !chosen.contains(c))
            .map(|c| {
                let mut words = token_set(c);
                for t in self.lexicon.types_of(c) {
                    words.extend(token_set(t));
                }
                (words.intersection(&q).count(), c)
            })
            .filter(|(overlap, _)| *overlap > 0)
            .collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        chosen.extend(rest.into_iter().map(|(_, c)| c.clone()));
        chosen.truncate(width);
        chosen
    }

    fn relation_reply(&self, prompt: &str) -> String {
        let question = last_line_after(prompt, "\nQ: ").unwrap_or("");
        let topic = last_line_after(prompt, "\nTopic Entity: ").unwrap_or("");
        let candidates: Vec<String> = last_line_after(prompt, "\nRelations: ")
            .unwrap_or("")
            .split("; ")
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let width = prompt
            .split_whitespace()
            .skip_while(|w| *w != "retrieve")
            .nth(1)
            .and_then(|w| w.parse().ok())
            .unwrap_or(3);
        let chosen = self.choose_relations(question, topic, &candidates, width);
        let quoted: Vec<String> = chosen.iter().map(|c| format!("'{c}'")).collect();
        format!("The output is: \n[{}]", quoted.join(","))
    }

    fn abstraction_reply(&self, prompt: &str) -> String {
        let verbs = |label: &str| -> Vec<String> {
            last_line_after(prompt, label)
                .unwrap_or("")
                .split("; ")
                .filter(|v| !v.is_empty() && *v != "(none)")
                .map(str::to_string)
                .collect()
        };
        let subject = verbs("'ENTITY' is the subject of verbs: ");
        let object = verbs("'ENTITY' is the object of verbs: ");
        let label = self.lexicon.vote(&subject, &object);
        format!("{{\"type\": \"{label}\", \"description\": \"an entity of type {label}, judged from its relations.\"}}")
    }

    fn structure_reply(&self, prompt: &str) -> String {
        match self.script_for(prompt, "\nQuestion: ") {
            Some(script) => script.sa_reply.clone(),
            None => "Thought: I cannot decompose this question.\nAnswer: unknown".to_string(),
        }
    }

    /// Chain-following over the evidence: the answer candidates, or `None`
    /// when the evidence does not reach the last hop.
    fn resolve(&self, prompt: &str) -> Option<Vec<String>> {
        let script = self.script_for(prompt, "\nQ: ")?;
        let evidence: Vec<(Node, String, Node)> = evidence_block(prompt)
            .into_iter()
            .filter_map(|l| parse_evidence_line(l, &self.pattern))
            .collect();
        let mut reached: BTreeSet<String> = BTreeSet::from([script.topic.name.clone()]);
        for hop in &script.bridges {
            reached = follow(&evidence, &reached, hop)
                .into_iter()
                .map(|n| n.key.clone())
                .collect();
            if reached.is_empty() {
                return None;
            }
        }
        let mut candidates: Vec<&Node> = Vec::new();
        for hop in &script.finals {
            for node in follow(&evidence, &reached, hop) {
                if !candidates.iter().any(|c| c.key == node.key) {
                    candidates.push(node);
                }
            }
        }
        if candidates.is_empty() {
            return None;
        }
        let answers: Vec<String> = match &script.target_concept {
            None => candidates.iter().map(|n| n.text.clone()).collect(),
            Some(target) => {
                let typed: Vec<String> = candidates
                    .iter()
                    .filter(|n| n.concepts.iter().any(|c| c.eq_ignore_ascii_case(target)))
                    .map(|n| n.text.clone())
                    .collect();
                if typed.is_empty() {
                    // Nothing tells the candidates apart: guess.
                    let mut all: Vec<String> = candidates.iter().map(|n| n.text.clone()).collect();
                    all.sort();
                    all.truncate(1);
                    all
                } else {
                    typed
                }
            }
        };
        Some(answers)
    }

    fn sufficiency_reply(&self, prompt: &str) -> String {
        match self.resolve(prompt) {
            Some(_) => {
                "{Yes}. The triplets connect the topic entity to the requested entity.".into()
            }
            None => {
                "{No}. The triplets do not yet connect the topic entity to the requested entity."
                    .into()
            }
        }
    }

    fn answer_reply(&self, prompt: &str) -> String {
        match self.resolve(prompt) {
            Some(answers) => format!(
                "{{{}}}. Following the triplets leads to these entities.",
                answers.join("; ")
            ),
            None => "{No}. The triplets are insufficient.".into(),
        }
    }

    fn cot_reply(&self, prompt: &str) -> String {
        match self.script_for(prompt, "\nQ: ") {
            Some(script) => script.cot_reply.clone(),
            None => "I do not know. So the answer is {unknown}.".into(),
        }
    }
}

impl LlmBackend for SimLlm {
    fn name(&self) -> &str {
        "sim"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let prompt = request.prompt;
        let text = match request.module {
            ModuleTag::RelationRetrieval => self.relation_reply(prompt),
            ModuleTag::EntityAbstraction => self.abstraction_reply(prompt),
            ModuleTag::StructureAbstraction => self.structure_reply(prompt),
            ModuleTag::Sufficiency => self.sufficiency_reply(prompt),
            ModuleTag::AnswerExtraction => self.answer_reply(prompt),
            ModuleTag::ChainOfThought => self.cot_reply(prompt),
        };
        let usage = TokenUsage::new(whitespace_tokens(prompt), whitespace_tokens(&text));
        Ok(Completion { text, usage })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evidence_lines_split_around_the_relation() {
        let p = MidPattern::default();
        let (h, r, t) = parse_evidence_line(
            "m.02mjmr (person, author), people.person.education|education.education.major_field_of_study, m.062z7 (academic discipline)",
            &p,
        )
        .unwrap();
        assert_eq!(h.key, "m.02mjmr");
        assert_eq!(h.concepts, ["person", "author"]);
        assert_eq!(
            r,
            "people.person.education|education.education.major_field_of_study"
        );
        assert_eq!(t.key, "m.062z7");
        let (h, _, t) = parse_evidence_line(
            "The Audacity of Hope, book.written_work.author, m.02mjmr",
            &p,
        )
        .unwrap();
        assert_eq!(h.key, "The Audacity of Hope");
        assert!(t.concepts.is_empty());
    }
}
