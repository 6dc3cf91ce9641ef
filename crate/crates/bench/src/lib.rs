//! Input generators shared by the criterion benchmarks.

use kgabs_core::graph::{GraphHandle, Mid, Relation, TripleIndex, Triplet};
use kgabs_core::privacy::PrivacyMap;
use kgabs_core::relation::{AbstractedEntity, AbstractedTriplet};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "film", "director", "country", "city", "river", "person", "award", "book", "author", "team",
    "sport", "album", "artist", "language", "school", "company", "founder", "capital", "spouse",
    "genre",
];

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).unwrap()
}

pub fn relations(n: usize, seed: u64) -> Vec<Relation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let name = format!(
                "{}.{}.{}_{i}",
                word(&mut rng),
                word(&mut rng),
                word(&mut rng)
            );
            Relation::new(name).unwrap()
        })
        .collect()
}

pub fn question(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<&str> = (0..8).map(|_| word(&mut rng)).collect();
    format!("which {}?", words.join(" "))
}

/// Reference path texts of `len` segments each.
pub fn reference_texts(count: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| {
                    format!(
                        "{} -> {} -> {}",
                        word(&mut rng),
                        word(&mut rng),
                        word(&mut rng)
                    )
                })
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect()
}

pub fn candidates(n: usize, seed: u64) -> Vec<AbstractedTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rels = relations(n.clamp(1, 40), seed ^ 0x5eed);
    (0..n)
        .map(|i| {
            let mut entity = |k: usize| AbstractedEntity {
                mid: Mid::new(format!("m.0{i:x}{k}")).unwrap(),
                surface: None,
                concepts: (0..rng.random_range(1..3))
                    .map(|_| word(&mut rng).to_string())
                    .collect(),
            };
            let head = entity(0);
            let tail = entity(1);
            AbstractedTriplet {
                head,
                relation: rels[i % rels.len()].clone(),
                tail,
            }
        })
        .collect()
}

/// A random graph of `entities` nodes with `degree` outgoing edges each.
pub fn graph(entities: usize, degree: usize, seed: u64) -> (GraphHandle, Vec<Mid>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mids: Vec<Mid> = (0..entities)
        .map(|i| Mid::new(format!("m.0{i:x}")).unwrap())
        .collect();
    let rels = relations(degree.max(4), seed);
    let mut triples = Vec::with_capacity(entities * degree);
    for head in &mids {
        for _ in 0..degree {
            triples.push(Triplet::new(
                head.clone(),
                rels.choose(&mut rng).unwrap().clone(),
                mids.choose(&mut rng).unwrap().clone(),
            ));
        }
    }
    (
        GraphHandle::in_memory(TripleIndex::from_triples(triples), Vec::new()),
        mids,
    )
}

/// A privacy map with `n` two-word names and a payload mentioning some.
pub fn privacy_case(n: usize, payload_words: usize, seed: u64) -> (PrivacyMap, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n)
        .map(|i| format!("Name{i} {}", word(&mut rng)))
        .collect();
    let mut payload = Vec::with_capacity(payload_words);
    for _ in 0..payload_words {
        if rng.random_bool(0.05) {
            payload.push(names.choose(&mut rng).unwrap().clone());
        } else {
            payload.push(word(&mut rng).to_string());
        }
    }
    let map = PrivacyMap::from_pairs(
        names
            .into_iter()
            .enumerate()
            .map(|(i, name)| (Mid::new(format!("m.0n{i:x}")).unwrap(), name)),
    );
    (map, payload.join(" "))
}
