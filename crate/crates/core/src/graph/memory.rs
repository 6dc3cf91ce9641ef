use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Direction, Mid, Relation, Triplet};

type Adjacency = HashMap<Mid, BTreeMap<Relation, BTreeSet<Mid>>>;

/// Deduplicated triple set with head and tail adjacency indexes.
#[derive(Debug, Clone, Default)]
pub struct TripleIndex {
    triples: BTreeSet<Triplet>,
    by_head: Adjacency,
    by_tail: Adjacency,
    names: BTreeMap<Mid, String>,
}

impl TripleIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triplet>) -> Self {
        let mut index = Self::new();
        for t in triples {
            index.insert(t);
        }
        index
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, triplet: Triplet) -> bool {
        if !self.triples.insert(triplet.clone()) {
            return false;
        }
        let Triplet {
            head,
            relation,
            tail,
        } = triplet;
        self.by_head
            .entry(head.clone())
            .or_default()
            .entry(relation.clone())
            .or_default()
            .insert(tail.clone());
        self.by_tail
            .entry(tail)
            .or_default()
            .entry(relation)
            .or_default()
            .insert(head);
        true
    }

    pub fn set_name(&mut self, mid: Mid, name: impl Into<String>) {
        self.names.insert(mid, name.into());
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in `(head, relation, tail)` order.
    pub fn triples(&self) -> impl Iterator<Item = &Triplet> {
        self.triples.iter()
    }

    pub fn contains(&self, triplet: &Triplet) -> bool {
        self.triples.contains(triplet)
    }

    pub fn contains_entity(&self, mid: &Mid) -> bool {
        self.by_head.contains_key(mid) || self.by_tail.contains_key(mid)
    }

    pub fn name(&self, mid: &Mid) -> Option<&str> {
        self.names.get(mid).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = (&Mid, &str)> {
        self.names.iter().map(|(m, n)| (m, n.as_str()))
    }

    fn side(&self, direction: Direction) -> &Adjacency {
        match direction {
            Direction::AsSubject => &self.by_head,
            Direction::AsObject => &self.by_tail,
        }
    }

    pub fn adjacent_relations(&self, entity: &Mid, direction: Direction) -> Vec<Relation> {
        self.side(direction)
            .get(entity)
            .map(|rels| rels.keys().cloned().collect())
            .unwrap_or_default()
    }

    fn neighbours(
        &self,
        entity: &Mid,
        relation: &Relation,
        direction: Direction,
    ) -> Option<&BTreeSet<Mid>> {
        self.side(direction).get(entity)?.get(relation)
    }

    pub fn entity_cluster(
        &self,
        entity: &Mid,
        relation: &Relation,
        direction: Direction,
    ) -> Vec<Mid> {
        let mut out: BTreeSet<Mid> = self
            .neighbours(entity, relation, direction)
            .map(|set| set.iter().cloned().collect())
            .unwrap_or_default();
        if let (first, Some(second)) = relation.hops() {
            // Unflattened graph: walk through the mediator node. Subject side
            // goes e -first-> m -second-> x, object side x -first-> m -second-> e.
            match direction {
                Direction::AsSubject => {
                    for mediator in self
                        .neighbours(entity, &first, Direction::AsSubject)
                        .into_iter()
                        .flatten()
                    {
                        if let Some(tails) =
                            self.neighbours(mediator, &second, Direction::AsSubject)
                        {
                            out.extend(tails.iter().cloned());
                        }
                    }
                }
                Direction::AsObject => {
                    for mediator in self
                        .neighbours(entity, &second, Direction::AsObject)
                        .into_iter()
                        .flatten()
                    {
                        if let Some(heads) = self.neighbours(mediator, &first, Direction::AsObject)
                        {
                            out.extend(heads.iter().cloned());
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }
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

    fn mid(s: &str) -> Mid {
        Mid::new(s).unwrap()
    }

    #[test]
    fn toy_directions() {
        let index = TripleIndex::from_triples([t("a", "p", "b"), t("c", "q", "a")]);
        assert_eq!(
            index.adjacent_relations(&mid("a"), Direction::AsSubject),
            vec![Relation::new("p").unwrap()]
        );
        assert_eq!(
            index.adjacent_relations(&mid("a"), Direction::AsObject),
            vec![Relation::new("q").unwrap()]
        );
        assert!(index
            .adjacent_relations(&mid("zz"), Direction::AsObject)
            .is_empty());
    }

    #[test]
    fn two_hop_cluster_skips_mediator() {
        let index = TripleIndex::from_triples([t("a", "p", "cvt"), t("cvt", "q", "b")]);
        let r = Relation::new("p|q").unwrap();
        assert_eq!(
            index.entity_cluster(&mid("a"), &r, Direction::AsSubject),
            vec![mid("b")]
        );
        assert_eq!(
            index.entity_cluster(&mid("b"), &r, Direction::AsObject),
            vec![mid("a")]
        );
        assert!(index
            .entity_cluster(
                &mid("a"),
                &Relation::new("x").unwrap(),
                Direction::AsSubject
            )
            .is_empty());
    }

    #[test]
    fn duplicate_insert_is_ignored() {
        let mut index = TripleIndex::new();
        assert!(index.insert(t("a", "p", "b")));
        assert!(!index.insert(t("a", "p", "b")));
        assert_eq!(index.len(), 1);
    }
}
