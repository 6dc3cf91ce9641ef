use std::collections::BTreeSet;

use super::{GraphHandle, Mid, Relation, TripleIndex, Triplet};

/// Replaces every `(a, r1, cvt)(cvt, r2, b)` path, where `r1` is a
/// CVT-mediating relation, by the single triple `(a, "r1|r2", b)`.
///
/// CVT nodes are the tails of CVT-mediating single-hop relations. Every
/// triple touching a CVT node is removed. Paths that come back to `a`, end
/// in another CVT node, or would need a second separator are dropped.
/// Remote graphs are returned unchanged; they flatten at query time.
pub fn flatten_cvt(graph: &GraphHandle) -> GraphHandle {
    let Some(index) = graph.index() else {
        return graph.clone();
    };
    if graph.cvt_prefixes().is_empty() {
        return graph.clone();
    }

    let cvt_nodes: BTreeSet<&Mid> = index
        .triples()
        .filter(|t| graph.is_cvt_relation(&t.relation))
        .map(|t| &t.tail)
        .collect();

    let mut out = TripleIndex::new();
    for (mid, name) in index.names() {
        out.set_name(mid.clone(), name);
    }
    for triplet in index.triples() {
        let head_cvt = cvt_nodes.contains(&triplet.head);
        let tail_cvt = cvt_nodes.contains(&triplet.tail);
        if !head_cvt && !tail_cvt {
            out.insert(triplet.clone());
            continue;
        }
        if head_cvt || !graph.is_cvt_relation(&triplet.relation) {
            continue;
        }
        let a = &triplet.head;
        let mediator = &triplet.tail;
        for second in index.adjacent_relations(mediator, super::Direction::AsSubject) {
            if second.is_flattened() {
                continue;
            }
            let Ok(composed) = Relation::compose(&triplet.relation, &second) else {
                continue;
            };
            for b in index.entity_cluster(mediator, &second, super::Direction::AsSubject) {
                if &b == a || cvt_nodes.contains(&b) {
                    continue;
                }
                out.insert(Triplet::new(a.clone(), composed.clone(), b));
            }
        }
    }
    GraphHandle::in_memory(out, graph.cvt_prefixes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: &str, r: &str, tl: &str) -> Triplet {
        Triplet::new(
            Mid::new(h).unwrap(),
            Relation::new(r).unwrap(),
            Mid::new(tl).unwrap(),
        )
    }

    fn triples(g: &GraphHandle) -> Vec<Triplet> {
        g.index().unwrap().triples().cloned().collect()
    }

    #[test]
    fn no_prefixes_is_identity() {
        let g = GraphHandle::in_memory(
            TripleIndex::from_triples([t("a", "r1", "c"), t("c", "r2", "b")]),
            vec![],
        );
        assert_eq!(triples(&flatten_cvt(&g)), triples(&g));
    }

    #[test]
    fn single_chain() {
        let g = GraphHandle::in_memory(
            TripleIndex::from_triples([t("a", "r1", "c"), t("c", "r2", "b")]),
            vec!["r1".into()],
        );
        assert_eq!(triples(&flatten_cvt(&g)), vec![t("a", "r1|r2", "b")]);
    }

    #[test]
    fn back_edges_and_inbound_edges_vanish() {
        let g = GraphHandle::in_memory(
            TripleIndex::from_triples([
                t("a", "r1", "c"),
                t("c", "r2", "b"),
                t("c", "back", "a"),
                t("z", "other", "c"),
                t("a", "plain", "z"),
            ]),
            vec!["r1".into()],
        );
        let flat = triples(&flatten_cvt(&g));
        assert_eq!(flat, vec![t("a", "plain", "z"), t("a", "r1|r2", "b")]);
    }
}
