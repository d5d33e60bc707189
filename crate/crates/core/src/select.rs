//! Neighbor selection, NLI-guided filtering and per-sample subgraphs.
//!
//! Selection runs in three steps over the immutable graph:
//!
//! 1. [`candidate_neighbors`]: entities within `hop_k` undirected hops of at
//!    least `min_shared_seeds` distinct extracted entities.
//! 2. [`select_by_degree`]: keep the `top_k` lowest-degree candidates.
//! 3. [`nli_filter`]: keep a neighbor if some triple linking it to an
//!    extracted entity scores `max(entail, contradict) > nli_threshold`
//!    against the sample text.
//!
//! [`build_subgraph`] then joins extracted entities, kept neighbors and an
//! interaction node into a typed [`Subgraph`].

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{self, connecting_triples, khop_reach, EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionConfig {
    pub hop_k: usize,
    pub top_k: usize,
    pub min_shared_seeds: usize,
    pub nli_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            hop_k: 2,
            top_k: 16,
            min_shared_seeds: 2,
            nli_threshold: 0.5,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_k == 0 {
            return Err(Error::Config("selection.hop_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nli_threshold) {
            return Err(Error::Config("selection.nli_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

impl NliVerdict {
    pub fn new(entail: f64, neutral: f64, contradict: f64) -> Result<Self> {
        let v = Self {
            entail,
            neutral,
            contradict,
        };
        let in_range = [entail, neutral, contradict].iter().all(|p| (0.0..=1.0).contains(p));
        if !in_range || (entail + neutral + contradict - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("not a distribution: {v:?}")));
        }
        Ok(v)
    }

    pub fn neutral() -> Self {
        Self {
            entail: 0.0,
            neutral: 1.0,
            contradict: 0.0,
        }
    }

    /// `max(entail, contradict)`: support and refutation both count as relevance.
    pub fn relevance(&self) -> f64 {
        self.entail.max(self.contradict)
    }
}

/// Judges a verbalized triple (hypothesis) against the sample text (premise).
pub trait NliScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict>;
}

/// Hex SHA-256 of the premise text, the key used by NLI fixture files.
pub fn premise_hash(premise: &str) -> String {
    hex::encode(Sha256::digest(premise.as_bytes()))
}

/// Verdicts looked up from a fixture file; unlisted pairs are neutral.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableScorer {
    table: HashMap<(String, String), NliVerdict>,
}

impl TableScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, verdict: NliVerdict) {
        self.table
            .insert((premise_hash(premise), hypothesis.to_string()), verdict);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Parses `premise_hash<TAB>hypothesis<TAB>entail<TAB>neutral<TAB>contradict` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [hash, hyp, e, n, c] = fields[..] else {
                return Err(Error::parse(path, i + 1, "expected 5 tab-separated fields"));
            };
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad probability `{s}`")))
            };
            let verdict = NliVerdict::new(num(e)?, num(n)?, num(c)?)
                .map_err(|err| Error::parse(path, i + 1, err.to_string()))?;
            table.insert((hash.to_string(), hyp.to_string()), verdict);
        }
        Ok(Self { table })
    }

    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows.iter()
            .map(|((h, hyp), v)| format!("{h}\t{hyp}\t{}\t{}\t{}\n", v.entail, v.neutral, v.contradict))
            .collect()
    }
}

impl NliScorer for TableScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict> {
        Ok(self
            .table
            .get(&(premise_hash(premise), hypothesis.to_string()))
            .copied()
            .unwrap_or_else(NliVerdict::neutral))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "by", "to", "is", "was", "and", "for", "with", "as",
];
const NEGATIONS: &[&str] = &["not", "no", "never", "false", "fake", "hoax", "denied", "staged"];

/// Token-overlap heuristic: the Jaccard overlap of content words is read as
/// entailment, or as contradiction when the premise carries a negation
/// marker; the rest of the mass is neutral.
#[derive(Clone, Debug, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    fn content(text: &str) -> BTreeSet<String> {
        kg::words(text)
            .filter(|w| !STOPWORDS.contains(&w.as_str()) && !NEGATIONS.contains(&w.as_str()))
            .collect()
    }
}

impl NliScorer for LexicalScorer {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict> {
        let p = Self::content(premise);
        let h = Self::content(hypothesis);
        let union = p.union(&h).count();
        let overlap = if union == 0 {
            0.0
        } else {
            p.intersection(&h).count() as f64 / union as f64
        };
        let negated = kg::words(premise).any(|w| NEGATIONS.contains(&w.as_str()));
        let (entail, contradict) = if negated { (0.0, overlap) } else { (overlap, 0.0) };
        Ok(NliVerdict {
            entail,
            neutral: 1.0 - overlap,
            contradict,
        })
    }
}

/// Entities within `hop_k` of at least `min_shared_seeds` extracted entities,
/// paired with their global degree, in id order.
pub fn candidate_neighbors(
    g: &KnowledgeGraph,
    extracted: &BTreeSet<EntityId>,
    cfg: &SelectionConfig,
) -> Result<Vec<(EntityId, usize)>> {
    if extracted.is_empty() {
        return Err(Error::InvalidInput("no extracted entities".into()));
    }
    let reach = khop_reach(g, extracted, cfg.hop_k)?;
    Ok(reach
        .into_iter()
        .filter(|(_, r)| r.seeds.len() >= cfg.min_shared_seeds)
        .map(|(e, _)| (e, g.degree(e)))
        .collect())
}

/// The `top_k` candidates of lowest degree, ties by ascending id, sorted by
/// `(degree, id)`.
pub fn select_by_degree(candidates: &[(EntityId, usize)], top_k: usize) -> Vec<EntityId> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by_key(|&(e, d)| (d, e));
    sorted.truncate(top_k);
    sorted.into_iter().map(|(e, _)| e).collect()
}

/// `top_k` candidates drawn uniformly without replacement, returned in id
/// order. Used by the random-selection ablation.
pub fn select_random<R: Rng + ?Sized>(candidates: &[(EntityId, usize)], top_k: usize, rng: &mut R) -> Vec<EntityId> {
    if candidates.len() <= top_k {
        return candidates.iter().map(|c| c.0).collect();
    }
    let mut picked: Vec<EntityId> = sample(rng, candidates.len(), top_k)
        .into_iter()
        .map(|i| candidates[i].0)
        .collect();
    picked.sort();
    picked
}

/// `"{head name} {relation words} {tail name}."`
pub fn verbalize_triple(g: &KnowledgeGraph, t: &Triple) -> String {
    format!(
        "{} {} {}.",
        g.entity(t.head).name,
        g.relation_label(t.relation).replace('_', " "),
        g.entity(t.tail).name
    )
}

/// NLI evidence gathered for one neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborEvidence {
    pub entity: EntityId,
    /// Best linking triple and its verdict, if any linking triple exists.
    pub best: Option<(Triple, NliVerdict)>,
    pub kept: bool,
}

impl NeighborEvidence {
    pub fn relevance(&self) -> f64 {
        self.best.map_or(0.0, |(_, v)| v.relevance())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<EntityId>,
    pub evidence: Vec<NeighborEvidence>,
}

/// Keeps neighbors with a linking triple (neighbor at one end, an extracted
/// entity at the other) whose relevance exceeds the threshold. Order of
/// `selected` is preserved.
pub fn nli_filter(
    g: &KnowledgeGraph,
    sample_text: &str,
    extracted: &BTreeSet<EntityId>,
    selected: &[EntityId],
    scorer: &dyn NliScorer,
    cfg: &SelectionConfig,
) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for &e in selected {
        let linking = g
            .outgoing(e)
            .filter(|t| extracted.contains(&t.tail))
            .chain(g.incoming(e).filter(|t| extracted.contains(&t.head)));
        let mut best: Option<(Triple, NliVerdict)> = None;
        for t in linking {
            let verdict = scorer.score(sample_text, &verbalize_triple(g, t))?;
            if best.is_none_or(|(_, b)| verdict.relevance() > b.relevance()) {
                best = Some((*t, verdict));
            }
        }
        let kept = best.is_some_and(|(_, v)| v.relevance() > cfg.nli_threshold);
        if kept {
            out.kept.push(e);
        }
        out.evidence.push(NeighborEvidence { entity: e, best, kept });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Extracted,
    Neighbor,
    Interaction,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::Extracted, NodeKind::Neighbor, NodeKind::Interaction];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Entity(EntityId),
    Interaction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubgraphNode {
    pub node: NodeRef,
    pub kind: NodeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub relation: RelationId,
    pub dst: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<Edge>,
    pub interaction_index: usize,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kinds(&self) -> Vec<NodeKind> {
        self.nodes.iter().map(|n| n.kind).collect()
    }

    /// Entity ids of the entity nodes, in node order.
    pub fn entity_ids(&self) -> Vec<EntityId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.node {
                NodeRef::Entity(e) => Some(e),
                NodeRef::Interaction => None,
            })
            .collect()
    }

    /// Reorders nodes so that new position `i` holds old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Subgraph {
        assert_eq!(order.len(), self.nodes.len());
        let mut new_pos = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_pos[old] = new;
        }
        Subgraph {
            nodes: order.iter().map(|&o| self.nodes[o]).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: new_pos[e.src],
                    relation: e.relation,
                    dst: new_pos[e.dst],
                })
                .collect(),
            interaction_index: new_pos[self.interaction_index],
        }
    }

    /// JSON export: nodes with labels and kinds, and relation-labelled edges.
    pub fn to_json(&self, g: &KnowledgeGraph) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .map(|n| match n.node {
                NodeRef::Entity(e) => serde_json::json!({
                    "id": e.0,
                    "label": g.entity(e).label,
                    "kind": n.kind,
                }),
                NodeRef::Interaction => serde_json::json!({
                    "id": null,
                    "label": "<interaction>",
                    "kind": n.kind,
                }),
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "src": e.src,
                    "rel": g.relation_label(e.relation),
                    "dst": e.dst,
                })
            })
            .collect();
        serde_json::json!({ "nodes": nodes, "edges": edges })
    }
}

/// Extracted nodes (by id), then kept neighbors (by id), then the
/// interaction node. Edges are the connecting triples among entity nodes
/// followed by INTERACT edges in both directions for every extracted node.
pub fn build_subgraph(
    g: &KnowledgeGraph,
    extracted: &BTreeSet<EntityId>,
    kept_neighbors: &[EntityId],
) -> Result<Subgraph> {
    if extracted.is_empty() {
        return Err(Error::InvalidInput("cannot build a subgraph without extracted entities".into()));
    }
    let neighbors: BTreeSet<EntityId> = kept_neighbors.iter().copied().collect();
    if let Some(e) = neighbors.intersection(extracted).next() {
        return Err(Error::InvalidInput(format!("entity {} is both extracted and neighbor", e.0)));
    }
    let mut nodes = Vec::with_capacity(extracted.len() + neighbors.len() + 1);
    let mut position = HashMap::new();
    for (set, kind) in [(extracted, NodeKind::Extracted), (&neighbors, NodeKind::Neighbor)] {
        for &e in set {
            if e.0 >= g.entity_count() {
                return Err(Error::UnknownEntity(e.0));
            }
            position.insert(e, nodes.len());
            nodes.push(SubgraphNode {
                node: NodeRef::Entity(e),
                kind,
            });
        }
    }
    let interaction_index = nodes.len();
    nodes.push(SubgraphNode {
        node: NodeRef::Interaction,
        kind: NodeKind::Interaction,
    });

    let all: BTreeSet<EntityId> = extracted.union(&neighbors).copied().collect();
    let mut edges: Vec<Edge> = connecting_triples(g, &all)
        .iter()
        .map(|t| Edge {
            src: position[&t.head],
            relation: t.relation,
            dst: position[&t.tail],
        })
        .collect();
    let interact = g.interact_relation();
    for e in extracted {
        let p = position[e];
        edges.push(Edge {
            src: interaction_index,
            relation: interact,
            dst: p,
        });
        edges.push(Edge {
            src: p,
            relation: interact,
            dst: interaction_index,
        });
    }
    Ok(Subgraph {
        nodes,
        edges,
        interaction_index,
    })
}
