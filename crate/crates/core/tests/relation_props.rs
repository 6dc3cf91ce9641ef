use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use kgabs_core::context::QuestionContext;
use kgabs_core::graph::{Direction, Mid, Relation, Triplet};
use kgabs_core::pipeline::Ablation;
use kgabs_core::privacy::AllowList;
use kgabs_core::provider::{cosine, Embedder, HashingEmbedder};
use kgabs_core::relation::{
    abstract_triplets, filter_relations, AbstractConcept, AbstractionSettings, ClusterKey,
    ConceptCache, ConceptRegistry,
};
use kgabs_core::retrieval::RetrievalParams;
use kgabs_core::sim::toy_world;
use proptest::prelude::*;

fn arb_relations() -> impl Strategy<Value = Vec<Relation>> {
    prop::collection::btree_set("[a-z]{2,6}\\.[a-z]{2,6}\\.[a-z_]{2,8}", 0..12)
        .prop_map(|s| s.into_iter().map(|r| Relation::new(r).unwrap()).collect())
}

proptest! {
    #[test]
    fn filter_matches_exhaustive_search(
        question in "[a-z]{2,6}( [a-z]{2,6}){1,6}",
        relations in arb_relations(),
        k in 1usize..=5,
    ) {
        let e = HashingEmbedder::default();
        let got = filter_relations(&e, &question, &relations, k).unwrap();
        let vs = e.embed(&[question.as_str()]).unwrap();
        let scores: Vec<f64> = relations
            .iter()
            .map(|r| cosine(&vs[0], &e.embed(&[r.as_str()]).unwrap()[0]))
            .collect();
        let n = relations.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize <= k {
                let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| scores[i]).sum();
                best = best.max(s);
            }
        }
        let total: f64 = got.iter().map(|(_, s)| s).sum();
        prop_assert!((total - best).abs() < 1e-9);
        prop_assert_eq!(got.len(), k.min(n));
    }
}

#[test]
fn cache_computes_each_key_once() {
    let cache = ConceptCache::new();
    let key = ClusterKey {
        entity: Mid::new("m.01").unwrap(),
        relation: Relation::new("a.b.c").unwrap(),
        direction: Direction::AsSubject,
    };
    let calls = AtomicUsize::new(0);
    let compute = |label: &str| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok::<_, ()>(AbstractConcept {
            type_label: label.into(),
            description: String::new(),
        })
    };
    let first = cache.get_or_try_insert(&key, || compute("city")).unwrap();
    let second = cache.get_or_try_insert(&key, || compute("river")).unwrap();
    assert_eq!(first, second);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert_eq!(cache.len(), 1);
}

#[test]
fn stripping_annotations_recovers_graph_triplets() {
    let world = toy_world(3);
    let settings = Ablation::default()
        .engine_settings(RetrievalParams::default(), 5, false)
        .unwrap();
    let pipeline = world.pipeline(settings);
    let graph = world.graph();
    let index = graph.index().unwrap();
    let item = &world.items()[4];
    let llm = pipeline
        .client
        .for_question(AllowList::new([item.topic_entities[0].name.clone()]));
    let ctx = QuestionContext {
        llm: &llm,
        embedder: pipeline.embedder.as_ref(),
        prompts: &pipeline.prompts,
        mid_pattern: &pipeline.mid_pattern,
    };
    let topic = &item.topic_entities[0].mid;
    let mut pairs = Vec::new();
    for direction in [Direction::AsSubject, Direction::AsObject] {
        for relation in graph.adjacent_relations(topic, direction).unwrap() {
            pairs.push(ClusterKey {
                entity: topic.clone(),
                relation,
                direction,
            });
        }
    }
    let cache = ConceptCache::new();
    let mut registry = ConceptRegistry::new();
    let out = abstract_triplets(
        &graph,
        &ctx,
        &pairs,
        &item.question,
        &AbstractionSettings::default(),
        &cache,
        &mut registry,
    )
    .unwrap();

    let raw: BTreeSet<Triplet> = out.iter().map(|t| t.raw()).collect();
    let want: BTreeSet<Triplet> = index
        .triples()
        .filter(|t| &t.head == topic || &t.tail == topic)
        .cloned()
        .collect();
    assert_eq!(raw, want);
    assert_eq!(raw.len(), out.len());

    // Members of one cluster share the cluster's concept.
    for pair in &pairs {
        let concept = cache.get(pair).unwrap().type_label;
        for member in graph
            .entity_cluster(&pair.entity, &pair.relation, pair.direction)
            .unwrap()
        {
            assert!(registry.concepts(&member).contains(&concept));
        }
    }
    assert_eq!(cache.len(), pairs.len());
}
