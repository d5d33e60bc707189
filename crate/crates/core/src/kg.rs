//! Triple store with entity descriptions, adjacency lists and a degree index.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

pub const UNK: u32 = 0;
pub const MASK: u32 = 1;
pub const CLS: u32 = 2;

/// Fixed token table. Line `i` of the vocab file is token id `i`; ids 0, 1
/// and 2 are the UNK, MASK and CLS tokens whatever their spelling.
#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::InvalidInput(
                "vocab needs at least the UNK, MASK and CLS lines".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .skip(3)
            .map(|(i, t)| (t.to_lowercase(), i as u32))
            .collect();
        Ok(Self { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim().to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Whitespace split, lowercase, edge punctuation stripped; unknown words
    /// map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        words(text).map(|w| self.id(&w)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Lowercased words with surrounding ASCII punctuation removed.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityRecord {
    pub id: EntityId,
    pub label: String,
    pub name: String,
    pub description: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vec<EntityRecord>,
    relations: Vec<String>,
    triples: Vec<Triple>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    degree: Vec<usize>,
    by_label: HashMap<String, EntityId>,
}

impl KnowledgeGraph {
    /// Builds and indexes a graph. Entity ids follow `entities` order and
    /// relation ids follow `relations` order.
    pub fn new(entities: Vec<EntityRecord>, relations: Vec<String>, triples: Vec<Triple>) -> Result<Self> {
        let n = entities.len();
        let mut by_label = HashMap::with_capacity(n);
        for (i, e) in entities.iter().enumerate() {
            if e.id != EntityId(i) {
                return Err(Error::InvalidInput(format!("entity `{}` has non-dense id", e.label)));
            }
            if by_label.insert(e.label.clone(), e.id).is_some() {
                return Err(Error::InvalidInput(format!("duplicate entity label `{}`", e.label)));
            }
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        let mut degree = vec![0; n];
        for (i, t) in triples.iter().enumerate() {
            if t.head.0 >= n || t.tail.0 >= n {
                return Err(Error::InvalidInput(format!("triple {i} references a missing entity")));
            }
            if t.relation.0 >= relations.len() {
                return Err(Error::InvalidInput(format!("triple {i} references a missing relation")));
            }
            out_adj[t.head.0].push(i);
            in_adj[t.tail.0].push(i);
            degree[t.head.0] += 1;
            degree[t.tail.0] += 1;
        }
        Ok(Self {
            entities,
            relations,
            triples,
            out_adj,
            in_adj,
            degree,
            by_label,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Relations from the triples file; reserved ids come after these.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// The reserved relation joining the interaction node to extracted entities.
    pub fn interact_relation(&self) -> RelationId {
        RelationId(self.relations.len())
    }

    /// The reserved relation used for a node's attention to itself.
    pub fn self_relation(&self) -> RelationId {
        RelationId(self.relations.len() + 1)
    }

    /// File relations plus the two reserved ones.
    pub fn total_relations(&self) -> usize {
        self.relations.len() + 2
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        if r == self.interact_relation() {
            "<interact>"
        } else if r == self.self_relation() {
            "<self>"
        } else {
            &self.relations[r.0]
        }
    }

    pub fn relation_by_label(&self, label: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r == label).map(RelationId)
    }

    pub fn entity(&self, id: EntityId) -> &EntityRecord {
        &self.entities[id.0]
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn entity_by_label(&self, label: &str) -> Option<EntityId> {
        self.by_label.get(label).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn degree(&self, id: EntityId) -> usize {
        self.degree[id.0]
    }

    /// Triples with `id` as head.
    pub fn outgoing(&self, id: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.out_adj[id.0].iter().map(|&i| &self.triples[i])
    }

    /// Triples with `id` as tail.
    pub fn incoming(&self, id: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.in_adj[id.0].iter().map(|&i| &self.triples[i])
    }

    /// Neighbors over the undirected skeleton, with repeats for multi-edges.
    pub fn undirected_neighbors(&self, id: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.outgoing(id)
            .map(|t| t.tail)
            .chain(self.incoming(id).map(|t| t.head))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.out_adj[t.head.0]
            .iter()
            .any(|&i| self.triples[i] == *t)
    }

    fn check(&self, id: EntityId) -> Result<()> {
        if id.0 < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(id.0))
        }
    }

    /// Loads the triples and descriptions TSV files.
    ///
    /// Entities get ids in order of first appearance in the descriptions
    /// file; relations in order of first appearance in the triples file.
    pub fn load(triples_path: &Path, descriptions_path: &Path, vocab: &Vocab) -> Result<Self> {
        let desc_text = fs::read_to_string(descriptions_path).map_err(|e| Error::io(descriptions_path, e))?;
        let mut entities = Vec::new();
        let mut by_label: HashMap<String, EntityId> = HashMap::new();
        for (lineno, line) in desc_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(label), Some(name)) = (parts.next(), parts.next()) else {
                return Err(Error::parse(descriptions_path, lineno + 1, "expected label<TAB>name<TAB>description"));
            };
            let description = parts.next().unwrap_or("");
            let id = EntityId(entities.len());
            if by_label.insert(label.to_string(), id).is_some() {
                return Err(Error::parse(
                    descriptions_path,
                    lineno + 1,
                    format!("duplicate entity label `{label}`"),
                ));
            }
            let mut tokens = vocab.tokenize(description);
            if tokens.is_empty() {
                tokens.push(UNK);
            }
            entities.push(EntityRecord {
                id,
                label: label.to_string(),
                name: name.to_string(),
                description: tokens,
            });
        }

        let triple_text = fs::read_to_string(triples_path).map_err(|e| Error::io(triples_path, e))?;
        let mut relations: Vec<String> = Vec::new();
        let mut rel_index: HashMap<String, RelationId> = HashMap::new();
        let mut triples = Vec::new();
        for (lineno, line) in triple_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [h, r, t] = fields[..] else {
                return Err(Error::parse(triples_path, lineno + 1, "expected head<TAB>relation<TAB>tail"));
            };
            let resolve = |label: &str| {
                by_label.get(label).copied().ok_or_else(|| {
                    Error::parse(triples_path, lineno + 1, format!("unknown entity `{label}`"))
                })
            };
            let (head, tail) = (resolve(h)?, resolve(t)?);
            let relation = *rel_index.entry(r.to_string()).or_insert_with(|| {
                relations.push(r.to_string());
                RelationId(relations.len() - 1)
            });
            triples.push(Triple { head, relation, tail });
        }
        Self::new(entities, relations, triples)
    }
}

/// Result of [`khop_reach`] for one entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reach {
    pub distance: usize,
    pub seeds: BTreeSet<EntityId>,
}

/// Every non-seed entity within `k` undirected hops of some seed, with its
/// minimum distance and the set of seeds reaching it within `k`.
pub fn khop_reach(g: &KnowledgeGraph, seeds: &BTreeSet<EntityId>, k: usize) -> Result<BTreeMap<EntityId, Reach>> {
    for s in seeds {
        g.check(*s)?;
    }
    if k == 0 {
        return Err(Error::InvalidInput("hop count must be at least 1".into()));
    }
    let mut out: BTreeMap<EntityId, Reach> = BTreeMap::new();
    let mut dist = vec![usize::MAX; g.entity_count()];
    let mut touched = Vec::new();
    for &seed in seeds {
        let mut queue = VecDeque::from([seed]);
        dist[seed.0] = 0;
        touched.push(seed.0);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.0];
            if du == k {
                continue;
            }
            for v in g.undirected_neighbors(u) {
                if dist[v.0] == usize::MAX {
                    dist[v.0] = du + 1;
                    touched.push(v.0);
                    queue.push_back(v);
                    if !seeds.contains(&v) {
                        let entry = out.entry(v).or_insert_with(|| Reach {
                            distance: du + 1,
                            seeds: BTreeSet::new(),
                        });
                        entry.distance = entry.distance.min(du + 1);
                        entry.seeds.insert(seed);
                    }
                }
            }
        }
        for i in touched.drain(..) {
            dist[i] = usize::MAX;
        }
    }
    Ok(out)
}

/// Triples whose head and tail both lie in `nodes`, in triple-list order.
pub fn connecting_triples(g: &KnowledgeGraph, nodes: &BTreeSet<EntityId>) -> Vec<Triple> {
    let mut idx: Vec<usize> = nodes
        .iter()
        .filter(|e| e.0 < g.entity_count())
        .flat_map(|e| g.out_adj[e.0].iter().copied())
        .filter(|&i| nodes.contains(&g.triples[i].tail))
        .collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| g.triples[i]).collect()
}


#[cfg(test)]
mod tests {
    use super::fixtures::graph;
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<EntityId> {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn degrees_count_both_ends() {
        let g = graph(&[("a", "r1", "b"), ("b", "r2", "c")]);
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.relation_count(), 2);
        let d: Vec<usize> = (0..3).map(|i| g.degree(EntityId(i))).collect();
        assert_eq!(d, vec![1, 2, 1]);
    }

    #[test]
    fn self_loop_counts_twice() {
        let g = graph(&[("a", "r", "a")]);
        assert_eq!(g.degree(EntityId(0)), 2);
    }

    #[test]
    fn chain_reach() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c")]);
        let r = khop_reach(&g, &set(&[0]), 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[&EntityId(1)], Reach { distance: 1, seeds: set(&[0]) });
        let r = khop_reach(&g, &set(&[0, 2]), 1).unwrap();
        assert_eq!(r[&EntityId(1)], Reach { distance: 1, seeds: set(&[0, 2]) });
    }

    #[test]
    fn reach_rejects_unknown_seed_and_zero_hops() {
        let g = graph(&[("a", "r", "b")]);
        assert!(matches!(khop_reach(&g, &set(&[5]), 1), Err(Error::UnknownEntity(5))));
        assert!(khop_reach(&g, &set(&[0]), 0).is_err());
    }

    #[test]
    fn connecting_triples_filters_by_both_ends() {
        let g = graph(&[("a", "r", "b")]);
        assert_eq!(connecting_triples(&g, &set(&[0, 1])), vec![Triple::new(0, 0, 1)]);
        assert!(connecting_triples(&g, &set(&[0])).is_empty());
    }

    #[test]
    fn tokenizer_lowercases_and_strips() {
        let v = Vocab::new(["[unk]", "[mask]", "[cls]", "nasa", "moon"].map(String::from).to_vec()).unwrap();
        assert_eq!(v.tokenize("The Moon, NASA."), vec![UNK, 4, 3]);
    }
}
