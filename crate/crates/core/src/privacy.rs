//! User-side privacy map, payload auditing and de-anonymization.
//!
//! This is the only module that resolves entity names. Everything facing the
//! language model works on identifiers and concepts; every outbound prompt is
//! scanned here for protected names before it leaves the process.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, GraphHandle, Mid, MidPattern};
use crate::prompt::PromptSet;

/// Names shorter than this (in chars) only match with exact case.
const CASE_FOLD_MIN_LEN: usize = 3;

/// Bidirectional identifier/name table. Never serialized into a prompt.
#[derive(Debug, Clone, Default)]
pub struct PrivacyMap {
    mid_to_name: BTreeMap<Mid, String>,
    name_to_mid: BTreeMap<String, BTreeSet<Mid>>,
    index: NameIndex,
}

impl PrivacyMap {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Mid, String)>) -> Self {
        let mut map = PrivacyMap::default();
        for (mid, name) in pairs {
            map.insert(mid, name);
        }
        map
    }

    fn insert(&mut self, mid: Mid, name: String) {
        if let Some(old) = self.mid_to_name.insert(mid.clone(), name.clone()) {
            if let Some(set) = self.name_to_mid.get_mut(&fold(&old)) {
                set.remove(&mid);
            }
        }
        self.name_to_mid
            .entry(fold(&name))
            .or_default()
            .insert(mid.clone());
        self.index.add(&name, mid);
    }

    pub fn len(&self) -> usize {
        self.mid_to_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mid_to_name.is_empty()
    }

    pub fn name_of(&self, mid: &Mid) -> Option<&str> {
        self.mid_to_name.get(mid).map(String::as_str)
    }

    /// Every identifier carrying `name` (case-insensitive). More than one
    /// means the name is ambiguous.
    pub fn mids_for(&self, name: &str) -> Vec<Mid> {
        self.name_to_mid
            .get(&fold(name))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn is_ambiguous(&self, name: &str) -> bool {
        self.name_to_mid
            .get(&fold(name))
            .is_some_and(|s| s.len() > 1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Mid, &str)> {
        self.mid_to_name.iter().map(|(m, n)| (m, n.as_str()))
    }

    /// Writes `mid\tname` lines.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for (mid, name) in &self.mid_to_name {
            let _ = writeln!(out, "{mid}\t{name}");
        }
        fs::write(path, out)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let pairs = text.lines().filter_map(|line| {
            let (mid, name) = line.split_once('\t')?;
            Some((Mid::new(mid).ok()?, name.to_string()))
        });
        Ok(Self::from_pairs(pairs))
    }

    /// Resolves names for `mids` not yet in the map by querying the graph.
    /// Used with remote graphs, whose name table cannot be enumerated.
    pub fn resolve_missing<'a>(
        &mut self,
        graph: &GraphHandle,
        mids: impl IntoIterator<Item = &'a Mid>,
    ) -> Result<(), GraphError> {
        for mid in mids {
            if self.mid_to_name.contains_key(mid) {
                continue;
            }
            if let Some(name) = graph.entity_name(mid)? {
                self.insert(mid.clone(), name);
            }
        }
        Ok(())
    }
}

/// Builds the privacy map from every named entity of the graph.
pub fn build_privacy_map(graph: &GraphHandle) -> PrivacyMap {
    PrivacyMap::from_pairs(graph.all_names())
}

/// Resolves the surface name of a single entity.
pub fn entity_name(graph: &GraphHandle, mid: &Mid) -> Result<Option<String>, GraphError> {
    graph.entity_name(mid)
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Names that may appear in payloads for one question: the topic entities'.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowList {
    names: BTreeSet<String>,
}

impl AllowList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>) {
        self.names.insert(name.into());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    fn allows(&self, name: &str) -> bool {
        self.names
            .iter()
            .any(|n| n.eq_ignore_ascii_case(name) || fold(n) == fold(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Byte offset of the match in the payload.
    pub offset: usize,
    pub name: String,
    pub mid: Mid,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakReport {
    pub violations: Vec<Violation>,
}

impl LeakReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lookup of names by their first alphanumeric token.
#[derive(Debug, Clone, Default)]
struct NameIndex {
    by_first_token: HashMap<String, Vec<IndexedName>>,
}

#[derive(Debug, Clone)]
struct IndexedName {
    name: String,
    mid: Mid,
    /// Byte offset of the first alphanumeric token inside `name`.
    token_offset: usize,
}

impl NameIndex {
    fn add(&mut self, name: &str, mid: Mid) {
        let Some((start, end)) = first_token(name) else {
            return;
        };
        let entry = self
            .by_first_token
            .entry(fold(&name[start..end]))
            .or_default();
        if entry.iter().any(|n| n.name == name) {
            return;
        }
        entry.push(IndexedName {
            name: name.to_string(),
            mid,
            token_offset: start,
        });
    }
}

fn first_token(s: &str) -> Option<(usize, usize)> {
    let start = s.char_indices().find(|(_, c)| c.is_alphanumeric())?.0;
    let end = s[start..]
        .char_indices()
        .find(|(_, c)| !c.is_alphanumeric())
        .map_or(s.len(), |(i, _)| start + i);
    Some((start, end))
}

/// Byte length consumed from `hay` when it starts with `needle`.
fn prefix_len(hay: &str, needle: &str, fold_case: bool) -> Option<usize> {
    if !fold_case {
        return hay.starts_with(needle).then_some(needle.len());
    }
    let mut hay_chars = hay.char_indices();
    for n in needle.chars() {
        let (_, h) = hay_chars.next()?;
        if h != n && !h.to_lowercase().eq(n.to_lowercase()) {
            return None;
        }
    }
    Some(hay_chars.next().map_or(hay.len(), |(i, _)| i))
}

fn is_boundary_before(text: &str, at: usize) -> bool {
    text[..at]
        .chars()
        .next_back()
        .is_none_or(|c| !c.is_alphanumeric())
}

fn is_boundary_after(text: &str, at: usize) -> bool {
    text[at..]
        .chars()
        .next()
        .is_none_or(|c| !c.is_alphanumeric())
}

/// Starts of alphanumeric runs.
fn token_starts(text: &str) -> impl Iterator<Item = usize> + '_ {
    let mut prev_alnum = false;
    text.char_indices().filter_map(move |(i, c)| {
        let alnum = c.is_alphanumeric();
        let start = alnum && !prev_alnum;
        prev_alnum = alnum;
        start.then_some(i)
    })
}

fn relation_pattern() -> &'static Regex {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[a-z0-9_]+(?:\.[a-z0-9_]+){2,}(?:\|[a-z0-9_]+(?:\.[a-z0-9_]+){2,})?")
            .expect("valid")
    })
}

fn blank(text: &mut String, start: usize, end: usize) {
    let spaces = " ".repeat(end - start);
    text.replace_range(start..end, &spaces);
}

/// Every whole-token occurrence of `name` in `text`.
fn occurrences(text: &str, name: &str, token_offset: usize, first: &str) -> Vec<(usize, usize)> {
    let fold_case = name.chars().count() >= CASE_FOLD_MIN_LEN;
    let mut out = Vec::new();
    for token_start in token_starts(text) {
        let Some(start) = token_start.checked_sub(token_offset) else {
            continue;
        };
        if !text.is_char_boundary(start) || !is_boundary_before(text, start) {
            continue;
        }
        // Cheap first-token filter before the full comparison.
        if prefix_len(&text[token_start..], first, true).is_none() {
            continue;
        }
        if let Some(len) = prefix_len(&text[start..], name, fold_case) {
            if is_boundary_after(text, start + len) {
                out.push((start, start + len));
            }
        }
    }
    out
}

/// Reports every protected name in `payload` that is not allow-listed.
///
/// Dotted relation paths are exempt: they describe schema, not entities.
/// Occurrences of allowed names are masked first so that a protected name
/// nested inside an allowed one does not count.
pub fn audit_payload(payload: &str, map: &PrivacyMap, allow: &AllowList) -> LeakReport {
    audit_with_public_text(payload, map, allow, &[])
}

/// Like [`audit_payload`], with verbatim occurrences of `public` fragments
/// (fixed template text) masked before scanning.
pub fn audit_with_public_text(
    payload: &str,
    map: &PrivacyMap,
    allow: &AllowList,
    public: &[String],
) -> LeakReport {
    let mut text = payload.to_string();
    for fragment in public {
        let spans: Vec<_> = payload
            .match_indices(fragment.as_str())
            .map(|(s, f)| (s, s + f.len()))
            .collect();
        for (s, e) in spans {
            blank(&mut text, s, e);
        }
    }
    let spans: Vec<_> = relation_pattern()
        .find_iter(payload)
        .map(|m| (m.start(), m.end()))
        .collect();
    for (s, e) in spans {
        blank(&mut text, s, e);
    }
    for allowed in allow.names() {
        let Some((ts, te)) = first_token(allowed) else {
            continue;
        };
        for (s, e) in occurrences(&text.clone(), allowed, ts, &allowed[ts..te]) {
            blank(&mut text, s, e);
        }
    }

    let mut violations = Vec::new();
    let mut seen_tokens: BTreeSet<String> = BTreeSet::new();
    for token_start in token_starts(&text) {
        let end = text[token_start..]
            .char_indices()
            .find(|(_, c)| !c.is_alphanumeric())
            .map_or(text.len(), |(i, _)| token_start + i);
        seen_tokens.insert(fold(&text[token_start..end]));
    }
    for token in &seen_tokens {
        let Some(candidates) = map.index.by_first_token.get(token) else {
            continue;
        };
        for cand in candidates {
            if allow.allows(&cand.name) {
                continue;
            }
            let first = &cand.name[cand.token_offset..]
                .split(|c: char| !c.is_alphanumeric())
                .next()
                .unwrap_or_default();
            for (start, _) in occurrences(&text, &cand.name, cand.token_offset, first) {
                violations.push(Violation {
                    offset: start,
                    name: cand.name.clone(),
                    mid: cand.mid.clone(),
                });
            }
        }
    }
    violations.sort_by(|a, b| a.offset.cmp(&b.offset).then_with(|| a.name.cmp(&b.name)));
    violations.dedup();
    LeakReport { violations }
}

/// An answer after identifier substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedAnswer {
    /// The answer with every mapped identifier replaced by its name.
    pub text: String,
    /// Identifiers found in the raw answer.
    pub mids: Vec<Mid>,
    /// Identifiers left verbatim because the map has no name for them.
    pub unnamed: Vec<Mid>,
}

/// Replaces identifiers with their names, user-side.
pub fn deanonymize_answers(
    answers: &[String],
    map: &PrivacyMap,
    pattern: &MidPattern,
) -> Vec<NamedAnswer> {
    answers
        .iter()
        .map(|answer| {
            let mut text = String::with_capacity(answer.len());
            let mut mids = Vec::new();
            let mut unnamed = Vec::new();
            let mut last = 0;
            for (offset, raw) in pattern.find_all(answer) {
                let Ok(mid) = Mid::new(raw) else { continue };
                text.push_str(&answer[last..offset]);
                match map.name_of(&mid) {
                    Some(name) => text.push_str(name),
                    None => {
                        text.push_str(raw);
                        unnamed.push(mid.clone());
                    }
                }
                mids.push(mid);
                last = offset + raw.len();
            }
            text.push_str(&answer[last..]);
            NamedAnswer {
                text,
                mids,
                unnamed,
            }
        })
        .collect()
}

/// What happens to a prompt that fails the audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakPolicy {
    /// Refuse to send the payload.
    #[default]
    Block,
    /// Send it anyway and keep the record.
    Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: u64,
    pub module: String,
    pub offset: usize,
    /// Surrounding text with the leaked name redacted.
    pub context: String,
}

/// Append-only log of audit violations, shared across threads.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Mutex<Vec<AuditRecord>>,
    reports: Mutex<Vec<LeakReport>>,
    audited: Mutex<usize>,
}

const CONTEXT_WINDOW: usize = 24;

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, module: &str, payload: &str, report: &LeakReport) {
        *self.audited.lock().expect("audit log poisoned") += 1;
        if report.is_clean() {
            return;
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut records = self.records.lock().expect("audit log poisoned");
        for v in &report.violations {
            let start = floor_boundary(payload, v.offset.saturating_sub(CONTEXT_WINDOW));
            let name_end = v.offset + v.name.len().min(payload.len() - v.offset);
            let name_end = floor_boundary(payload, name_end);
            let end = floor_boundary(payload, (name_end + CONTEXT_WINDOW).min(payload.len()));
            let context = format!(
                "{}[REDACTED]{}",
                &payload[start..v.offset],
                &payload[name_end..end]
            );
            records.push(AuditRecord {
                timestamp,
                module: module.to_string(),
                offset: v.offset,
                context,
            });
        }
        self.reports
            .lock()
            .expect("audit log poisoned")
            .push(report.clone());
    }

    /// Number of payloads audited so far.
    pub fn audited(&self) -> usize {
        *self.audited.lock().expect("audit log poisoned")
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().expect("audit log poisoned").clone()
    }

    /// All non-empty reports seen so far.
    pub fn leak_reports(&self) -> Vec<LeakReport> {
        self.reports.lock().expect("audit log poisoned").clone()
    }

    pub fn total_violations(&self) -> usize {
        self.records.lock().expect("audit log poisoned").len()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out)
    }
}

fn floor_boundary(s: &str, mut at: usize) -> usize {
    while at > 0 && !s.is_char_boundary(at) {
        at -= 1;
    }
    at
}

/// The privacy map plus the audit log, consulted before every model call.
#[derive(Debug, Clone)]
pub struct PrivacyGuard {
    map: Arc<PrivacyMap>,
    log: Arc<AuditLog>,
    policy: LeakPolicy,
    public: Arc<Vec<String>>,
}

/// Template pieces shorter than this are not treated as public text.
const PUBLIC_FRAGMENT_MIN_LEN: usize = 24;

impl PrivacyGuard {
    pub fn new(map: PrivacyMap, policy: LeakPolicy) -> Self {
        Self {
            map: Arc::new(map),
            log: Arc::new(AuditLog::new()),
            policy,
            public: Arc::new(Vec::new()),
        }
    }

    /// Exempts the fixed text of `prompts` (instructions and exemplars) from
    /// the audit. Slot values are still scanned.
    pub fn with_public_templates(mut self, prompts: &PromptSet) -> Self {
        let mut public: Vec<String> = prompts
            .templates()
            .iter()
            .flat_map(|t| t.text_pieces())
            .filter(|p| p.len() >= PUBLIC_FRAGMENT_MIN_LEN)
            .map(str::to_string)
            .collect();
        public.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        public.dedup();
        self.public = Arc::new(public);
        self
    }

    pub fn map(&self) -> &PrivacyMap {
        &self.map
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn policy(&self) -> LeakPolicy {
        self.policy
    }

    /// Audits and logs one payload.
    pub fn check(&self, module: &str, payload: &str, allow: &AllowList) -> LeakReport {
        let report = audit_with_public_text(payload, &self.map, allow, &self.public);
        self.log.record(module, payload, &report);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid(s: &str) -> Mid {
        Mid::new(s).unwrap()
    }

    fn map(pairs: &[(&str, &str)]) -> PrivacyMap {
        PrivacyMap::from_pairs(pairs.iter().map(|(m, n)| (mid(m), n.to_string())))
    }

    #[test]
    fn builds_both_directions() {
        let m = map(&[("m.1", "Acme")]);
        assert_eq!(m.name_of(&mid("m.1")), Some("Acme"));
        assert_eq!(m.mids_for("acme"), vec![mid("m.1")]);
        assert!(PrivacyMap::default().is_empty());
    }

    #[test]
    fn ambiguous_names_keep_all_candidates() {
        let m = map(&[("m.1", "Springfield"), ("m.2", "springfield")]);
        assert!(m.is_ambiguous("SPRINGFIELD"));
        assert_eq!(m.mids_for("Springfield"), vec![mid("m.1"), mid("m.2")]);
    }

    #[test]
    fn clean_payload() {
        let m = map(&[("m.1", "Acme")]);
        let r = audit_payload(
            "m.1 (company), organization.organization.founders, m.2",
            &m,
            &AllowList::default(),
        );
        assert!(r.is_clean());
    }

    #[test]
    fn public_text_is_masked_but_slots_are_not() {
        let m = map(&[("m.1", "Law")]);
        let public = vec!["Taste cannot be controlled by law.".to_string()];
        let allow = AllowList::default();
        let payload = "Taste cannot be controlled by law.\nQ: What is Law?";
        assert_eq!(audit_payload(payload, &m, &allow).violations.len(), 2);
        let r = audit_with_public_text(payload, &m, &allow, &public);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].offset, payload.rfind("Law").unwrap());
        assert!(audit_with_public_text(&payload[..34], &m, &allow, &public).is_clean());
    }

    #[test]
    fn single_violation() {
        let m = map(&[("m.1", "Acme")]);
        let r = audit_payload("Who founded Acme?", &m, &AllowList::default());
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].offset, 12);
        assert!(
            audit_payload("Who founded ACME?", &m, &AllowList::default())
                .violations
                .len()
                == 1
        );
        assert!(audit_payload("Who founded Acmeville?", &m, &AllowList::default()).is_clean());
        assert!(audit_payload("Who founded Acme?", &m, &AllowList::new(["acme"])).is_clean());
    }

    #[test]
    fn short_names_need_exact_case() {
        let m = map(&[("m.1", "Oz")]);
        assert!(audit_payload("the oz of gold", &m, &AllowList::default()).is_clean());
        assert_eq!(
            audit_payload("land of Oz", &m, &AllowList::default())
                .violations
                .len(),
            1
        );
    }

    #[test]
    fn relations_are_exempt() {
        let m = map(&[("m.1", "Education")]);
        let payload = "m.2, people.person.education|education.education.major_field_of_study, m.3";
        assert!(audit_payload(payload, &m, &AllowList::default()).is_clean());
        assert_eq!(
            audit_payload("an Education topic", &m, &AllowList::default())
                .violations
                .len(),
            1
        );
    }

    #[test]
    fn nested_protected_name_inside_allowed_topic() {
        let m = map(&[("m.1", "Brahui"), ("m.2", "Brahui Language")]);
        let allow = AllowList::new(["Brahui Language"]);
        assert!(audit_payload("Topic Entity: Brahui Language", &m, &allow).is_clean());
        assert_eq!(
            audit_payload("Brahui is spoken", &m, &allow)
                .violations
                .len(),
            1
        );
    }

    #[test]
    fn deanonymizes_known_and_flags_unknown() {
        let m = map(&[("m.062z7", "Political Science")]);
        let out = deanonymize_answers(
            &[
                "m.062z7 (academic discipline)".to_string(),
                "m.999 (place)".into(),
                "no ids".into(),
            ],
            &m,
            &MidPattern::default(),
        );
        assert_eq!(out[0].text, "Political Science (academic discipline)");
        assert!(out[0].unnamed.is_empty());
        assert_eq!(out[1].text, "m.999 (place)");
        assert_eq!(out[1].unnamed, vec![mid("m.999")]);
        assert_eq!(out[2].text, "no ids");
    }

    #[test]
    fn audit_log_redacts_context() {
        let guard = PrivacyGuard::new(map(&[("m.1", "Acme")]), LeakPolicy::Block);
        let report = guard.check(
            "generator",
            "Who founded Acme in 1900?",
            &AllowList::default(),
        );
        assert_eq!(report.violations.len(), 1);
        let records = guard.log().records();
        assert_eq!(records[0].context, "Who founded [REDACTED] in 1900?");
        assert_eq!(guard.log().audited(), 1);
    }
}
