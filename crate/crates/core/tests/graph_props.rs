use std::collections::BTreeSet;
use std::io::Write;

use kgabs_core::graph::{
    flatten_cvt, load_graph, Direction, GraphHandle, GraphSource, Mid, MidPattern, Relation,
    TripleIndex, Triplet,
};
use proptest::prelude::*;

const RELATIONS: &[&str] = &[
    "people.person.place_of_birth",
    "film.film.directed_by",
    "location.location.contains",
    "people.person.education",
    "education.stint.institution",
    "education.stint.major",
];

fn mid(i: u8) -> Mid {
    Mid::new(format!("m.0n{i}")).unwrap()
}

fn arb_triples() -> impl Strategy<Value = Vec<Triplet>> {
    prop::collection::vec((0u8..12, 0..RELATIONS.len(), 0u8..12), 0..60).prop_map(|raw| {
        raw.into_iter()
            .map(|(h, r, t)| Triplet::new(mid(h), Relation::new(RELATIONS[r]).unwrap(), mid(t)))
            .collect()
    })
}

fn handle(triples: &[Triplet]) -> GraphHandle {
    GraphHandle::in_memory(
        TripleIndex::from_triples(triples.iter().cloned()),
        vec!["people.person.education".into()],
    )
}

fn all_relations(graph: &GraphHandle) -> BTreeSet<Relation> {
    graph
        .index()
        .unwrap()
        .triples()
        .map(|t| t.relation.clone())
        .collect()
}

proptest! {
    #[test]
    fn cluster_members_are_connected_in_the_raw_data(triples in arb_triples()) {
        let g = handle(&triples);
        for e in 0u8..12 {
            for r in RELATIONS {
                let r = Relation::new(*r).unwrap();
                let out = g.entity_cluster(&mid(e), &r, Direction::AsSubject).unwrap();
                let want: BTreeSet<Mid> = triples.iter()
                    .filter(|t| t.head == mid(e) && t.relation == r)
                    .map(|t| t.tail.clone())
                    .collect();
                prop_assert_eq!(out.iter().cloned().collect::<BTreeSet<_>>(), want);
                let back = g.entity_cluster(&mid(e), &r, Direction::AsObject).unwrap();
                let want: BTreeSet<Mid> = triples.iter()
                    .filter(|t| t.tail == mid(e) && t.relation == r)
                    .map(|t| t.head.clone())
                    .collect();
                prop_assert_eq!(back.iter().cloned().collect::<BTreeSet<_>>(), want);
            }
        }
    }

    #[test]
    fn adjacency_matches_cluster_emptiness(triples in arb_triples()) {
        let g = flatten_cvt(&handle(&triples));
        let mut relations = all_relations(&g);
        relations.extend(RELATIONS.iter().map(|r| Relation::new(*r).unwrap()));
        for e in 0u8..12 {
            for direction in [Direction::AsSubject, Direction::AsObject] {
                let adjacent = g.adjacent_relations(&mid(e), direction).unwrap();
                for r in &relations {
                    let cluster = g.entity_cluster(&mid(e), r, direction).unwrap();
                    prop_assert_eq!(adjacent.contains(r), !cluster.is_empty());
                }
            }
        }
    }

    #[test]
    fn flattening_is_idempotent(triples in arb_triples()) {
        let once = flatten_cvt(&handle(&triples));
        let twice = flatten_cvt(&once);
        let a: Vec<Triplet> = once.index().unwrap().triples().cloned().collect();
        let b: Vec<Triplet> = twice.index().unwrap().triples().cloned().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn queries_are_deterministic(triples in arb_triples(), e in 0u8..12) {
        let mut shuffled = triples.clone();
        shuffled.reverse();
        let (a, b) = (handle(&triples), handle(&shuffled));
        for direction in [Direction::AsSubject, Direction::AsObject] {
            let ra = a.adjacent_relations(&mid(e), direction).unwrap();
            prop_assert_eq!(&ra, &b.adjacent_relations(&mid(e), direction).unwrap());
            prop_assert!(ra.windows(2).all(|w| w[0] < w[1]));
            for r in &ra {
                prop_assert_eq!(
                    a.entity_cluster(&mid(e), r, direction).unwrap(),
                    b.entity_cluster(&mid(e), r, direction).unwrap()
                );
            }
        }
    }
}

#[test]
fn file_graph_round_trips_through_tsv() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "m.01\tpeople.person.place_of_birth\tm.02").unwrap();
    writeln!(file, "m.01\tpeople.person.place_of_birth\tm.02").unwrap();
    writeln!(file, "m.01\ttype.object.name\tAda Lovelace").unwrap();
    writeln!(file, "m.02\tlocation.location.contains\tm.03").unwrap();
    let g = load_graph(GraphSource::File {
        triples: file.path().to_path_buf(),
        names: None,
        cvt_prefixes: vec![],
        mid_pattern: MidPattern::default(),
    })
    .unwrap();
    let index = g.index().unwrap();
    assert_eq!(index.len(), 2);
    assert_eq!(index.name(&Mid::new("m.01").unwrap()), Some("Ada Lovelace"));
    assert_eq!(
        g.adjacent_relations(&Mid::new("m.01").unwrap(), Direction::AsSubject)
            .unwrap(),
        vec![Relation::new("people.person.place_of_birth").unwrap()]
    );
}
