//! Multilingual knowledge-graph data model and file ingestion.

mod dataset;
mod io;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dataset::{load_dataset, DatasetLayout};
pub use io::{
    load_initial_vectors, parse_seeds, parse_triples, parse_triples_with, read_triples_resolved,
    sha256_file, split_seeds, write_seeds, write_transferred, write_triples, LoadReport,
};

/// Dense per-KG entity index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub usize);

/// Dense index into the global relation vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

/// Bijective label table with ids assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(labels: Vec<String>) -> Self {
        let mut v = Vocab {
            labels,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.labels
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for l in labels {
            v.intern(&l.into());
        }
        v
    }

    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn reindex(&mut self) {
        self.index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Loaded,
    Transferred,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub origin: Origin,
}

impl Triple {
    pub fn loaded(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
            origin: Origin::Loaded,
        }
    }

    pub fn key(&self) -> (usize, usize, usize) {
        (self.head.0, self.relation.0, self.tail.0)
    }
}

/// A triple copied in from another KG, tagged with the epoch it appeared in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferredTriple {
    pub triple: Triple,
    pub epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Outgoing,
    Incoming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Neighbor {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
}

/// One language's graph.
///
/// `triples` is the structure the model sees (the training split when splits
/// exist); `transferred` grows only between epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kg {
    pub id: String,
    pub entities: Vocab,
    triples: Vec<Triple>,
    transferred: Vec<TransferredTriple>,
    #[serde(skip)]
    neighbors: Vec<Vec<Neighbor>>,
}

impl Kg {
    pub fn new(id: impl Into<String>, entities: Vocab, triples: Vec<Triple>) -> Self {
        let mut kg = Kg {
            id: id.into(),
            entities,
            triples,
            transferred: Vec::new(),
            neighbors: Vec::new(),
        };
        kg.rebuild_neighbors();
        kg
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn transferred(&self) -> &[TransferredTriple] {
        &self.transferred
    }

    /// Loaded triples followed by transferred ones.
    pub fn all_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples
            .iter()
            .copied()
            .chain(self.transferred.iter().map(|t| t.triple))
    }

    /// Distinct relations used by this KG's loaded triples.
    pub fn relation_count(&self) -> usize {
        self.triples
            .iter()
            .map(|t| t.relation)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn contains(&self, key: (usize, usize, usize)) -> bool {
        self.all_triples().any(|t| t.key() == key)
    }

    /// Replaces the triple list (e.g. with the training split) and rebuilds
    /// the adjacency.
    pub fn set_triples(&mut self, triples: Vec<Triple>) {
        self.triples = triples;
        self.rebuild_neighbors();
    }

    /// Replaces the transferred set and rebuilds the adjacency.
    pub fn set_transferred(&mut self, transferred: Vec<TransferredTriple>) {
        self.transferred = transferred;
        self.rebuild_neighbors();
    }

    pub fn neighbors(&self, e: EntityId) -> &[Neighbor] {
        &self.neighbors[e.0]
    }

    /// `N(e)` as a set of `(neighbor, relation)` pairs, sorted.
    pub fn neighbor_set(&self, e: EntityId) -> Vec<(EntityId, RelationId)> {
        let mut out: Vec<_> = self.neighbors[e.0]
            .iter()
            .map(|n| (n.entity, n.relation))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn rebuild_neighbors(&mut self) {
        let mut adj = vec![Vec::new(); self.entities.len()];
        let all: Vec<Triple> = self.all_triples().collect();
        for t in all {
            adj[t.head.0].push(Neighbor {
                entity: t.tail,
                relation: t.relation,
                direction: Direction::Outgoing,
            });
            adj[t.tail.0].push(Neighbor {
                entity: t.head,
                relation: t.relation,
                direction: Direction::Incoming,
            });
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        self.neighbors = adj;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Given,
    Enlarged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPair {
    pub left: EntityId,
    pub right: EntityId,
    pub provenance: Provenance,
}

/// Aligned entity pairs between two KGs (`kg_pair` holds KG indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub kg_pair: (usize, usize),
    pub pairs: Vec<SeedPair>,
}

impl SeedSet {
    pub fn new(kg_pair: (usize, usize)) -> Self {
        SeedSet {
            kg_pair,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn given(&self) -> impl Iterator<Item = &SeedPair> {
        self.pairs
            .iter()
            .filter(|p| p.provenance == Provenance::Given)
    }

    pub fn enlarged(&self) -> impl Iterator<Item = &SeedPair> {
        self.pairs
            .iter()
            .filter(|p| p.provenance == Provenance::Enlarged)
    }

    /// True when no entity appears in more than one pair on its side.
    pub fn is_one_to_one(&self) -> bool {
        let mut left = HashSet::new();
        let mut right = HashSet::new();
        self.pairs
            .iter()
            .all(|p| left.insert(p.left) && right.insert(p.right))
    }
}

/// Training / held-out alignment seeds for one ordered KG pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSplit {
    pub train: SeedSet,
    pub test: SeedSet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KgcSplit {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Pre-trained vectors keyed by global entity row and relation id; `None`
/// marks an item that falls back to random initialisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialVectors {
    pub dim: usize,
    pub entities: Vec<Option<Vec<f64>>>,
    pub relations: Vec<Option<Vec<f64>>>,
}

impl InitialVectors {
    pub fn random_init_count(&self) -> usize {
        self.entities.iter().filter(|v| v.is_none()).count()
            + self.relations.iter().filter(|v| v.is_none()).count()
    }
}

/// Every KG of a run plus the shared relation vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiKg {
    pub kgs: Vec<Kg>,
    pub relations: Vocab,
    pub alignments: Vec<AlignmentSplit>,
    pub kgc_splits: Vec<KgcSplit>,
    pub initial_vectors: Option<InitialVectors>,
}

impl MultiKg {
    pub fn new(kgs: Vec<Kg>, relations: Vocab) -> Self {
        let kgc_splits = kgs
            .iter()
            .map(|kg| KgcSplit {
                train: kg.triples().to_vec(),
                ..KgcSplit::default()
            })
            .collect();
        MultiKg {
            kgs,
            relations,
            alignments: Vec::new(),
            kgc_splits,
            initial_vectors: None,
        }
    }

    pub fn kg_index(&self, id: &str) -> Option<usize> {
        self.kgs.iter().position(|k| k.id == id)
    }

    /// First global entity row of each KG.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.kgs
            .iter()
            .map(|k| {
                let o = acc;
                acc += k.entity_count();
                o
            })
            .collect()
    }

    pub fn total_entities(&self) -> usize {
        self.kgs.iter().map(Kg::entity_count).sum()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Known-true triples (train ∪ valid ∪ test) of one KG.
    pub fn known_triples(&self, kg: usize) -> HashSet<(usize, usize, usize)> {
        let s = &self.kgc_splits[kg];
        s.train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .map(Triple::key)
            .collect()
    }

    /// Hash of KG ids and all label tables; ties a checkpoint to its data.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for kg in &self.kgs {
            h.update(b"kg\0");
            h.update(kg.id.as_bytes());
            for l in kg.entities.labels() {
                h.update(b"\0");
                h.update(l.as_bytes());
            }
        }
        h.update(b"relations\0");
        for l in self.relations.labels() {
            h.update(l.as_bytes());
            h.update(b"\0");
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Rebuilds adjacency after deserialisation.
    pub fn reindex(&mut self) {
        for kg in &mut self.kgs {
            kg.rebuild_neighbors();
        }
    }

    /// Checks the structural invariants of the collection.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        for (i, kg) in self.kgs.iter().enumerate() {
            let mut seen = HashSet::new();
            for t in kg.all_triples() {
                if t.head.0 >= kg.entity_count() || t.tail.0 >= kg.entity_count() {
                    return Err(Error::Data(format!("{}: entity id out of range", kg.id)));
                }
                if t.relation.0 >= self.relations.len() {
                    return Err(Error::Data(format!("{}: relation id out of range", kg.id)));
                }
                if !seen.insert(t.key()) {
                    return Err(Error::Data(format!("{}: duplicate triple {:?}", kg.id, t.key())));
                }
            }
            let s = &self.kgc_splits[i];
            let train: HashSet<_> = s.train.iter().map(Triple::key).collect();
            let valid: HashSet<_> = s.valid.iter().map(Triple::key).collect();
            if s.test.iter().any(|t| train.contains(&t.key()) || valid.contains(&t.key()))
                || s.valid.iter().any(|t| train.contains(&t.key()))
            {
                return Err(Error::Data(format!("{}: kgc splits overlap", kg.id)));
            }
        }
        for a in &self.alignments {
            if !a.train.is_one_to_one() || !a.test.is_one_to_one() {
                return Err(Error::Data("seed set is not one-to-one".into()));
            }
            let train: HashSet<_> = a.train.given().map(|p| (p.left, p.right)).collect();
            if a.test.pairs.iter().any(|p| train.contains(&(p.left, p.right))) {
                return Err(Error::Data("seed pair in both train and test".into()));
            }
        }
        if let Some(v) = &self.initial_vectors {
            let ok = v
                .entities
                .iter()
                .chain(&v.relations)
                .flatten()
                .all(|x| x.len() == v.dim);
            if !ok || v.entities.len() != self.total_entities() || v.relations.len() != self.relations.len() {
                return Err(Error::Data("initial vectors have inconsistent shape".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Kg {
        let ents = Vocab::from_labels(["a", "b", "c"]);
        Kg::new(
            "x",
            ents,
            vec![Triple::loaded(0, 0, 1), Triple::loaded(1, 1, 2), Triple::loaded(2, 0, 1)],
        )
    }

    #[test]
    fn neighbor_set_matches_definition() {
        let kg = chain();
        // b: out (c, r1); in (a, r0), (c, r0)
        let n = kg.neighbor_set(EntityId(1));
        assert_eq!(
            n,
            vec![
                (EntityId(0), RelationId(0)),
                (EntityId(2), RelationId(0)),
                (EntityId(2), RelationId(1)),
            ]
        );
        // c has both (b, r0) outgoing and (b, r1) incoming.
        assert_eq!(kg.neighbor_set(EntityId(2)).len(), 2);
    }

    #[test]
    fn rebuilding_neighbors_is_stable() {
        let mut kg = chain();
        let before = kg.neighbors.clone();
        kg.rebuild_neighbors();
        assert_eq!(before, kg.neighbors);
    }

    #[test]
    fn self_loop_is_one_neighbor() {
        let kg = Kg::new("x", Vocab::from_labels(["a"]), vec![Triple::loaded(0, 0, 0)]);
        assert_eq!(kg.neighbor_set(EntityId(0)), vec![(EntityId(0), RelationId(0))]);
    }

    #[test]
    fn vocab_is_a_bijection() {
        let mut v = Vocab::new();
        assert_eq!(v.intern("x"), 0);
        assert_eq!(v.intern("y"), 1);
        assert_eq!(v.intern("x"), 0);
        assert_eq!(v.label(1), "y");
        assert_eq!(v.get("y"), Some(1));
        assert_eq!(v.get("z"), None);
    }
}
