use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{flatten_cvt, GraphHandle, Mid, TripleIndex, Triplet, NAME_RELATION};
use crate::prompt::PromptSet;

/// A synthetic graph with names, entity types and question scripts.
#[derive(Debug, Clone)]
pub struct SimWorld {
    /// Unflattened triples and the name table.
    pub index: TripleIndex,
    pub types: BTreeMap<Mid, &'static str>,
    pub scripts: Vec<QuestionScript>,
}

impl SimWorld {
    pub fn raw_graph(&self) -> GraphHandle {
        GraphHandle::in_memory(self.index.clone(), cvt_prefixes())
    }

    /// The graph the pipeline runs on: CVT mediators flattened away.
    pub fn graph(&self) -> GraphHandle {
        flatten_cvt(&self.raw_graph())
    }

    pub fn name(&self, mid: &Mid) -> Option<&str> {
        self.index.name(mid)
    }

    /// Number of non-name triples.
    pub fn triple_count(&self) -> usize {
        self.index.len()
    }

    /// `head\trelation\ttail` lines, names included as name triples.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in self.index.triples() {
            out.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
        }
        for (mid, name) in self.index.names() {
            out.push_str(&format!("{mid}\t{NAME_RELATION}\t{name}\n"));
        }
        out
    }
}

/// Entities reached from `from` by following `hops`.
pub fn walk(graph: &GraphHandle, from: &Mid, hops: &[Hop]) -> BTreeSet<Mid> {
    let mut reached = BTreeSet::from([from.clone()]);
    for hop in hops {
        let mut next = BTreeSet::new();
        for mid in &reached {
            next.extend(
                graph
                    .entity_cluster(mid, &hop.relation, hop.direction)
                    .expect("in-memory graph"),
            );
        }
        reached = next;
    }
    reached
}

const SYLLABLES: &[&str] = &[
    "ka", "zu", "vor", "qen", "li", "tha", "mi", "dro", "sel", "ur", "ny", "pax", "ro", "vi",
    "len", "tor", "zae", "quo", "fi", "gra", "ost", "bel", "hy", "jun", "kri", "mar", "nev", "oth",
    "pel", "rus", "wyn", "ix",
];
const MID_ALPHABET: &[u8] = b"0123456789bcdfghjklmnpqrstvwxz";

struct Builder {
    rng: ChaCha8Rng,
    index: TripleIndex,
    types: BTreeMap<Mid, &'static str>,
    names: BTreeSet<String>,
    mids: BTreeSet<String>,
    vocabulary: BTreeSet<String>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Every token a prompt can contain besides entity names.
fn prompt_vocabulary() -> BTreeSet<String> {
    let prompts = PromptSet::default();
    let mut vocab: BTreeSet<String> = prompts
        .templates()
        .iter()
        .flat_map(|t| tokenize(&t.static_text()).collect::<Vec<_>>())
        .collect();
    for s in SCHEMA {
        vocab.extend(tokenize(s.relation));
        vocab.extend(tokenize(s.subject));
        vocab.extend(tokenize(s.object));
    }
    vocab.extend(["entity", "none", "yes", "no"].map(String::from));
    vocab
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: TripleIndex::new(),
            types: BTreeMap::new(),
            names: BTreeSet::new(),
            mids: BTreeSet::new(),
            vocabulary: prompt_vocabulary(),
        }
    }

    fn fresh_mid(&mut self) -> Mid {
        loop {
            let tail: String = (0..5)
                .map(|_| *MID_ALPHABET.choose(&mut self.rng).expect("alphabet") as char)
                .collect();
            let mid = format!("m.0{tail}");
            if self.mids.insert(mid.clone()) {
                return Mid::new(mid).expect("valid mid");
            }
        }
    }

    fn word(&mut self) -> String {
        let n = self.rng.random_range(2..=3);
        let raw: String = (0..n)
            .map(|_| *SYLLABLES.choose(&mut self.rng).expect("syllables"))
            .collect();
        capitalize(&raw)
    }

    fn fresh_name(&mut self, shape: fn(&mut Self) -> String) -> String {
        loop {
            let name = shape(self);
            let folded = name.to_lowercase();
            if !self.names.contains(&folded) && !collides_with_vocabulary(&name, &self.vocabulary) {
                self.names.insert(folded);
                return name;
            }
        }
    }

    fn entity(&mut self, ty: &'static str, shape: fn(&mut Self) -> String) -> Mid {
        let name = self.fresh_name(shape);
        self.named(ty, name)
    }

    fn named(&mut self, ty: &'static str, name: String) -> Mid {
        let mid = self.fresh_mid();
        self.index.set_name(mid.clone(), name);
        self.types.insert(mid.clone(), ty);
        mid
    }

    fn link(&mut self, head: &Mid, relation: &str, tail: &Mid) {
        self.index.insert(Triplet::new(
            head.clone(),
            Relation::new(relation).expect("schema relation"),
            tail.clone(),
        ));
    }

    fn cvt(&mut self, head: &Mid, first: &str, parts: &[(&str, &Mid)]) {
        let node = self.fresh_mid();
        self.link(head, first, &node);
        for (second, tail) in parts {
            self.link(&node, second, tail);
        }
    }

    fn pick(&mut self, from: &[Mid]) -> Mid {
        from.choose(&mut self.rng).expect("non-empty pool").clone()
    }

    fn pick_distinct(&mut self, from: &[Mid], n: usize) -> Vec<Mid> {
        let mut v: Vec<Mid> = from.to_vec();
        v.shuffle(&mut self.rng);
        v.truncate(n);
        v
    }
}

fn person_name(b: &mut Builder) -> String {
    format!("{} {}", b.word(), b.word())
}
fn city_name(b: &mut Builder) -> String {
    b.word()
}
fn country_name(b: &mut Builder) -> String {
    format!("{}ia", b.word())
}
fn language_name(b: &mut Builder) -> String {
    format!("{}ic", b.word())
}
fn university_name(b: &mut Builder) -> String {
    format!("{} Institute", b.word())
}
fn discipline_name(b: &mut Builder) -> String {
    format!("{}ology", b.word())
}
fn film_name(b: &mut Builder) -> String {
    format!("The {} {}", b.word(), b.word())
}
fn book_name(b: &mut Builder) -> String {
    format!("Tales of {}", b.word())
}
fn company_name(b: &mut Builder) -> String {
    format!("{} Works", b.word())
}
fn team_name(b: &mut Builder) -> String {
    format!("{} Rovers", b.word())
}
fn award_name(b: &mut Builder) -> String {
    format!("Order of {}", b.word())
}

struct Toy {
    b: Builder,
    countries: Vec<Mid>,
    cities: Vec<Mid>,
    persons: Vec<Mid>,
    films: Vec<Mid>,
    books: Vec<Mid>,
    companies: Vec<Mid>,
}

fn generate(seed: u64) -> Toy {
    let mut b = Builder::new(seed);
    let languages: Vec<Mid> = (0..8).map(|_| b.entity(LANGUAGE, language_name)).collect();
    let countries: Vec<Mid> = (0..10).map(|_| b.entity(COUNTRY, country_name)).collect();
    let mut cities = Vec::new();
    let mut city_country = BTreeMap::new();
    for country in &countries {
        let own: Vec<Mid> = (0..3).map(|_| b.entity(CITY, city_name)).collect();
        for city in &own {
            b.link(city, CONTAINED_BY, country);
            city_country.insert(city.clone(), country.clone());
        }
        let capital = b.pick(&own);
        b.link(country, CAPITAL, &capital);
        let n = b.rng.random_range(1..=2);
        for lang in b.pick_distinct(&languages, n) {
            b.link(country, OFFICIAL_LANGUAGE, &lang);
            b.link(&lang, SPOKEN_IN, country);
        }
        cities.extend(own);
    }
    let universities: Vec<Mid> = (0..10)
        .map(|_| b.entity(UNIVERSITY, university_name))
        .collect();
    for u in &universities {
        let city = b.pick(&cities);
        b.link(u, CONTAINED_BY, &city);
    }
    let disciplines: Vec<Mid> = (0..8)
        .map(|_| b.entity(DISCIPLINE, discipline_name))
        .collect();
    let awards: Vec<Mid> = (0..5).map(|_| b.entity(AWARD, award_name)).collect();

    let persons: Vec<Mid> = (0..60).map(|_| b.entity(PERSON, person_name)).collect();
    for (i, p) in persons.iter().enumerate() {
        let birth = b.pick(&cities);
        b.link(p, BIRTHPLACE, &birth);
        let nationality = if b.rng.random_bool(0.7) {
            city_country[&birth].clone()
        } else {
            b.pick(&countries)
        };
        b.link(p, NATIONALITY, &nationality);
        let n = b.rng.random_range(1..=3);
        for lang in b.pick_distinct(&languages, n) {
            b.link(p, LANGUAGES, &lang);
        }
        for _ in 0..b.rng.random_range(1..=2) {
            let u = b.pick(&universities);
            let d = b.pick(&disciplines);
            b.cvt(
                p,
                EDUCATION,
                &[
                    ("education.education.institution", &u),
                    ("education.education.major_field_of_study", &d),
                ],
            );
        }
        for _ in 0..b.rng.random_range(1..=2) {
            let c = b.pick(&cities);
            b.cvt(p, PLACES_LIVED, &[("people.place_lived.location", &c)]);
        }
        if b.rng.random_bool(0.4) {
            let a = b.pick(&awards);
            b.cvt(p, NOMINATIONS, &[("award.award_nomination.award", &a)]);
        }
        if i % 2 == 1 && b.rng.random_bool(0.5) {
            let other = persons[i - 1].clone();
            b.link(p, SPOUSE, &other);
            b.link(&other, SPOUSE, p);
        }
        if b.rng.random_bool(0.35) {
            let u = b.pick(&universities);
            let c = b.pick(&cities);
            b.link(p, LINK_A, &u);
            b.link(p, LINK_B, &c);
        }
    }
    let directors: Vec<Mid> = persons[..20].to_vec();
    let films: Vec<Mid> = (0..15).map(|_| b.entity(FILM, film_name)).collect();
    for f in &films {
        let d = b.pick(&directors);
        let c = b.pick(&countries);
        b.link(f, DIRECTED_BY, &d);
        b.link(f, FILM_COUNTRY, &c);
    }
    let books: Vec<Mid> = (0..10).map(|_| b.entity(BOOK, book_name)).collect();
    for book in &books {
        let a = b.pick(&persons);
        b.link(book, AUTHOR, &a);
    }
    let companies: Vec<Mid> = (0..10).map(|_| b.entity(COMPANY, company_name)).collect();
    for c in &companies {
        let n = b.rng.random_range(1..=2);
        for f in b.pick_distinct(&persons, n) {
            b.link(c, FOUNDERS, &f);
        }
        let hq = b.pick(&cities);
        b.link(c, HEADQUARTERS, &hq);
    }
    for _ in 0..6 {
        let t = b.entity(TEAM, team_name);
        let c = b.pick(&cities);
        b.link(&t, TEAM_LOCATION, &c);
    }
    Toy {
        b,
        countries,
        cities,
        persons,
        films,
        books,
        companies,
    }
}

struct Template {
    question: fn(&str) -> String,
    topic_type: &'static str,
    bridges: fn() -> Vec<Hop>,
    finals: fn() -> Vec<Hop>,
}

const TEMPLATES: &[Template] = &[
    Template {
        question: |t| format!("Where was {t} born?"),
        topic_type: PERSON,
        bridges: Vec::new,
        finals: || vec![Hop::forward(BIRTHPLACE)],
    },
    Template {
        question: |t| format!("What is the capital of {t}?"),
        topic_type: COUNTRY,
        bridges: Vec::new,
        finals: || vec![Hop::forward(CAPITAL)],
    },
    Template {
        question: |t| format!("Which film was directed by {t}?"),
        topic_type: PERSON,
        bridges: Vec::new,
        finals: || vec![Hop::backward(DIRECTED_BY)],
    },
    Template {
        question: |t| format!("What field of study did {t} major in?"),
        topic_type: PERSON,
        bridges: Vec::new,
        finals: || vec![Hop::forward(MAJOR)],
    },
    Template {
        question: |t| format!("What does the author of {t} have a degree in?"),
        topic_type: BOOK,
        bridges: || vec![Hop::forward(AUTHOR)],
        finals: || vec![Hop::forward(MAJOR)],
    },
    Template {
        question: |t| format!("In which country is the headquarters of {t}?"),
        topic_type: COMPANY,
        bridges: || vec![Hop::forward(HEADQUARTERS)],
        finals: || vec![Hop::forward(CONTAINED_BY)],
    },
    Template {
        question: |t| format!("Which university did the founder of {t} attend?"),
        topic_type: COMPANY,
        bridges: || vec![Hop::forward(FOUNDERS)],
        finals: || vec![Hop::forward(INSTITUTION)],
    },
    Template {
        question: |t| format!("Which language is official in the country where {t} was born?"),
        topic_type: PERSON,
        bridges: || vec![Hop::forward(BIRTHPLACE), Hop::forward(CONTAINED_BY)],
        finals: || vec![Hop::forward(OFFICIAL_LANGUAGE)],
    },
    Template {
        question: |t| format!("In which country was the director of {t} born?"),
        topic_type: FILM,
        bridges: || vec![Hop::forward(DIRECTED_BY), Hop::forward(BIRTHPLACE)],
        finals: || vec![Hop::forward(CONTAINED_BY)],
    },
];

/// Template index of the three-hop birthplace-language question.
const LANGUAGE_OF_BIRTH_COUNTRY: usize = 7;

impl Toy {
    fn gold_for(
        &self,
        graph: &GraphHandle,
        topic: &Mid,
        hops: &[Hop],
        target: Option<&str>,
    ) -> Vec<Mid> {
        walk(graph, topic, hops)
            .into_iter()
            .filter(|m| target.is_none_or(|t| self.b.types.get(m).is_some_and(|ty| *ty == t)))
            .collect()
    }

    fn name(&self, mid: &Mid) -> String {
        self.b.index.name(mid).expect("named entity").to_string()
    }

    /// A wrong answer of the right type for chain-of-thought replies.
    fn decoy(&self, ty: &str, gold: &[Mid]) -> String {
        let pick = self
            .b
            .types
            .iter()
            .find(|(m, t)| **t == ty && !gold.contains(m))
            .map(|(m, _)| m.clone())
            .expect("another entity of the same type");
        self.name(&pick)
    }

    #[allow(clippy::too_many_arguments)]
    fn script(
        &self,
        graph: &GraphHandle,
        question: String,
        topic: &Mid,
        topic_type: &str,
        bridges: Vec<Hop>,
        finals: Vec<Hop>,
        target_concept: Option<String>,
        sa_reply: String,
        cot_correct: bool,
    ) -> Option<QuestionScript> {
        let mut gold = BTreeSet::new();
        for last in &finals {
            let mut chain = bridges.clone();
            chain.push(last.clone());
            gold.extend(self.gold_for(graph, topic, &chain, target_concept.as_deref()));
        }
        let gold: Vec<Mid> = gold.into_iter().collect();
        if gold.is_empty() {
            return None;
        }
        let answer_type = target_concept
            .clone()
            .unwrap_or_else(|| finals[0].target.clone());
        let cot_answer = if cot_correct {
            self.name(&gold[0])
        } else {
            self.decoy(self.b.types[&gold[0]], &gold)
        };
        Some(QuestionScript {
            question,
            topic: TopicEntity {
                name: self.name(topic),
                mid: topic.clone(),
            },
            topic_type: topic_type.to_string(),
            bridges,
            finals,
            target_concept,
            sa_reply,
            cot_reply: format!("Reasoning from memory about this {answer_type}. So the answer is {{{cot_answer}}}."),
            gold: gold
                .iter()
                .map(|m| GoldAnswer {
                    name: Some(self.name(m)),
                    mid: Some(m.clone()),
                })
                .collect(),
        })
    }

    fn template_script(
        &self,
        graph: &GraphHandle,
        t: &Template,
        topic: &Mid,
        cot_correct: bool,
    ) -> Option<QuestionScript> {
        let name = self.name(topic);
        let bridges = (t.bridges)();
        let finals = (t.finals)();
        let mut chain = bridges.clone();
        chain.push(finals[0].clone());
        let sa = structure_reply(&name, t.topic_type, &chain, &finals[0].target);
        self.script(
            graph,
            (t.question)(&name),
            topic,
            t.topic_type,
            bridges,
            finals,
            None,
            sa,
            cot_correct,
        )
    }

    fn topics_for(&self, t: &Template) -> &[Mid] {
        match t.topic_type {
            PERSON => &self.persons,
            COUNTRY => &self.countries,
            FILM => &self.films,
            BOOK => &self.books,
            COMPANY => &self.companies,
            _ => &self.cities,
        }
    }
}

fn finish(toy: Toy, scripts: Vec<QuestionScript>) -> SimWorld {
    SimWorld {
        index: toy.b.index,
        types: toy.b.types,
        scripts,
    }
}

/// General benchmark: three questions per template, one to three hops.
/// Every third question is one the chain-of-thought baseline gets right.
pub fn toy_world(seed: u64) -> SimWorld {
    let toy = generate(seed);
    let graph = flatten_cvt(&GraphHandle::in_memory(toy.b.index.clone(), cvt_prefixes()));
    let mut scripts = Vec::new();
    for t in TEMPLATES {
        let mut taken = 0;
        for topic in toy.topics_for(t) {
            if taken == 3 {
                break;
            }
            let cot_correct = scripts.len() % 3 == 0;
            if let Some(s) = toy.template_script(&graph, t, topic, cot_correct) {
                if !scripts
                    .iter()
                    .any(|o: &QuestionScript| o.question == s.question)
                {
                    scripts.push(s);
                    taken += 1;
                }
            }
        }
    }
    finish(toy, scripts)
}

/// Three-hop questions whose topic entity also has several
/// question-flavoured but irrelevant neighbours (spoken languages,
/// nationality). Scoring against the question alone favours those over the
/// first bridge triplet.
pub fn structure_ablation_world(seed: u64) -> SimWorld {
    let toy = generate(seed);
    let graph = flatten_cvt(&GraphHandle::in_memory(toy.b.index.clone(), cvt_prefixes()));
    let t = &TEMPLATES[LANGUAGE_OF_BIRTH_COUNTRY];
    let languages = Relation::new(LANGUAGES).expect("relation");
    let mut scripts = Vec::new();
    for p in &toy.persons {
        let spoken = graph
            .entity_cluster(p, &languages, Direction::AsSubject)
            .expect("in-memory");
        if spoken.len() < 2 {
            continue;
        }
        if let Some(s) = toy.template_script(&graph, t, p, false) {
            scripts.push(s);
        }
        if scripts.len() == 8 {
            break;
        }
    }
    finish(toy, scripts)
}

/// Questions answered through two opaque relations that lead to entities of
/// different types. Only concept labels tell the right one apart; the
/// wrong one always sorts first.
pub fn concept_ablation_world(seed: u64) -> SimWorld {
    let toy = generate(seed);
    let graph = flatten_cvt(&GraphHandle::in_memory(toy.b.index.clone(), cvt_prefixes()));
    let (a, b) = (
        Relation::new(LINK_A).expect("relation"),
        Relation::new(LINK_B).expect("relation"),
    );
    let mut scripts = Vec::new();
    for p in &toy.persons {
        let univ = graph
            .entity_cluster(p, &a, Direction::AsSubject)
            .expect("in-memory");
        let city = graph
            .entity_cluster(p, &b, Direction::AsSubject)
            .expect("in-memory");
        let (Some(u), Some(c)) = (univ.first(), city.first()) else {
            continue;
        };
        if c.as_str() >= u.as_str() {
            continue;
        }
        let name = toy.name(p);
        let sa = format!(
            "Thought: {name} is affiliated with some university.\nReasoning Path: {{{name} (person) -> affiliated with -> (university)}}\nAnswer: (university)"
        );
        if let Some(s) = toy.script(
            &graph,
            format!("Which university is {name} affiliated with?"),
            p,
            PERSON,
            Vec::new(),
            vec![Hop::forward(LINK_A), Hop::forward(LINK_B)],
            Some(UNIVERSITY.to_string()),
            sa,
            false,
        ) {
            scripts.push(s);
        }
        if scripts.len() == 8 {
            break;
        }
    }
    finish(toy, scripts)
}

/// The worked two-hop case: a book, its author, and the author's field of
/// study reached through an education mediator.
pub fn worked_example_world() -> SimWorld {
    let mut b = Builder::new(0);
    let add = |b: &mut Builder, mid: &str, ty: &'static str, name: &str| {
        let mid = Mid::new(mid).expect("mid");
        b.index.set_name(mid.clone(), name);
        b.types.insert(mid.clone(), ty);
        mid
    };
    let book = add(&mut b, "m.05q5zs", BOOK, "The Audacity of Hope");
    let author = add(&mut b, "m.02mjmr", PERSON, "Barack Obama");
    let field = add(&mut b, "m.062z7", DISCIPLINE, "Political Science");
    let columbia = add(&mut b, "m.01w5m", UNIVERSITY, "Columbia University");
    let harvard = add(&mut b, "m.0pspl", UNIVERSITY, "Harvard Law School");
    let law = add(&mut b, "m.04gb7", DISCIPLINE, "Law");
    let honolulu = add(&mut b, "m.02hrh0_", CITY, "Honolulu");
    let chicago = add(&mut b, "m.01_d4", CITY, "Chicago");
    let nyc = add(&mut b, "m.02_286", CITY, "New York City");
    let usa = add(&mut b, "m.09c7w0", COUNTRY, "United States of America");
    let english = add(&mut b, "m.02h40lc", LANGUAGE, "English Language");
    let grammy = add(
        &mut b,
        "m.0nh4p7s",
        AWARD,
        "Grammy Award for Best Spoken Word Album",
    );
    let spouse = add(&mut b, "m.025s5v9", PERSON, "Michelle Obama");

    b.link(&book, AUTHOR, &author);
    b.link(&author, BIRTHPLACE, &honolulu);
    b.link(&author, NATIONALITY, &usa);
    b.link(&author, LANGUAGES, &english);
    b.link(&author, SPOUSE, &spouse);
    b.link(&spouse, SPOUSE, &author);
    b.link(&spouse, BIRTHPLACE, &chicago);
    b.cvt(
        &author,
        EDUCATION,
        &[
            ("education.education.institution", &columbia),
            ("education.education.major_field_of_study", &field),
        ],
    );
    b.cvt(
        &spouse,
        EDUCATION,
        &[
            ("education.education.institution", &harvard),
            ("education.education.major_field_of_study", &law),
        ],
    );
    b.cvt(
        &author,
        PLACES_LIVED,
        &[("people.place_lived.location", &chicago)],
    );
    b.cvt(
        &author,
        NOMINATIONS,
        &[("award.award_nomination.award", &grammy)],
    );
    for city in [&honolulu, &chicago, &nyc] {
        b.link(city, CONTAINED_BY, &usa);
    }
    b.link(&columbia, CONTAINED_BY, &nyc);
    b.link(&usa, CAPITAL, &nyc);
    b.link(&usa, OFFICIAL_LANGUAGE, &english);
    b.link(&english, SPOKEN_IN, &usa);

    let question =
        "What does the artist that was nominated for 'The Audacity of Hope' have a degree in?"
            .to_string();
    let sa_reply = "Thought: First, the artist nominated for The Audacity of Hope is Common. Second, Common has a degree in Communications.\nReasoning Path: {Common (artist) -> nominated for -> The Audacity of Hope (work)}; {Common (artist) -> has degree in -> Communications (field of study)}\nAnswer: Communications (field of study)".to_string();
    let script = QuestionScript {
        question,
        topic: TopicEntity {
            name: "The Audacity of Hope".into(),
            mid: book,
        },
        topic_type: BOOK.into(),
        bridges: vec![Hop::forward(AUTHOR)],
        finals: vec![Hop::forward(MAJOR)],
        target_concept: None,
        sa_reply,
        cot_reply:
            "The artist is Common, who studied communications. So the answer is {Communications}."
                .into(),
        gold: vec![GoldAnswer {
            name: Some("Political Science".into()),
            mid: Some(field),
        }],
    };
    SimWorld {
        index: b.index,
        types: b.types,
        scripts: vec![script],
    }
}
