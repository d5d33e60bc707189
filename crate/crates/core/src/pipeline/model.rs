//! Model parameters and the per-sample forward pass.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Config, SelectionMode};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{self, Context, FusionConfig};
use crate::gat::{self, GatConfig};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::modality::{self, ImageConfig, ImageFeatures, TextConfig};
use crate::numerics::{seeded, ParamStore, Session, Tensor, Var};
use crate::select::{
    build_subgraph, candidate_neighbors, nli_filter, select_by_degree, select_random, verbalize_triple,
    NeighborEvidence, NliScorer, Subgraph,
};

use super::data::{Dataset, Label, Sample};

/// All parameters plus the typed sub-configs they were built from.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub params: ParamStore,
    pub encoder: EncoderConfig,
    pub text: TextConfig,
    pub image: ImageConfig,
    pub gat: GatConfig,
    pub fusion: FusionConfig,
    pub self_relation: RelationId,
}

impl Model {
    /// Fresh parameters drawn from `train.seed`.
    pub fn new(cfg: &Config, g: &KnowledgeGraph, vocab_size: usize) -> Result<Self> {
        let mut model = Self::skeleton(cfg, g, vocab_size)?;
        let mut rng = seeded(cfg.train_seed);
        let p = &mut model.params;
        encoder::init_encoder(p, &model.encoder, g.total_relations(), &mut rng);
        modality::init_text(p, &model.text, vocab_size, &mut rng);
        modality::init_image(p, &model.image, &mut rng);
        gat::init_gat(p, &model.gat, &mut rng);
        fusion::init_fusion(p, &model.fusion, &mut rng);
        Ok(model)
    }

    /// Wraps loaded parameters; names and shapes must match a fresh model.
    pub fn with_params(cfg: &Config, g: &KnowledgeGraph, vocab_size: usize, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(cfg, g, vocab_size)?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, config expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if params.len() != fresh.params.len() {
            return Err(Error::Checkpoint("checkpoint has parameters the config does not define".into()));
        }
        Ok(Self { params, ..fresh })
    }

    fn skeleton(cfg: &Config, g: &KnowledgeGraph, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: cfg.clone(),
            params: ParamStore::new(),
            encoder: cfg.encoder(vocab_size),
            text: cfg.text(),
            image: cfg.image(),
            gat: cfg.gat(),
            fusion: cfg.fusion(),
            self_relation: g.self_relation(),
        })
    }

    pub fn uses_kg(&self) -> bool {
        self.fusion.use_kg
    }

    /// Description encodings of every entity, or `None` without the KG branch.
    pub fn entity_cache(&self, g: &KnowledgeGraph) -> Result<Option<Tensor>> {
        if self.uses_kg() {
            encoder::entity_table(&self.params, &self.encoder, g).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Selection results for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGraph {
    pub subgraph: Subgraph,
    pub candidates: Vec<(EntityId, usize)>,
    pub selected: Vec<EntityId>,
    pub evidence: Vec<NeighborEvidence>,
}

/// A sample with everything that does not depend on trainable parameters
/// resolved: subgraph, NLI evidence, image features.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub sample: Sample,
    pub image: ImageFeatures,
    pub graph: Option<SampleGraph>,
    pub text_vector: Option<Tensor>,
}

pub struct Resources<'a> {
    pub graph: &'a KnowledgeGraph,
    pub scorer: &'a dyn NliScorer,
    /// Precomputed text vectors, used when `text.provider = vectors`.
    pub text_vectors: Option<&'a HashMap<String, Tensor>>,
}

fn sample_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

/// Runs neighbor selection for `sample` under `cfg`.
pub fn sample_graph(res: &Resources, cfg: &Config, sample: &Sample) -> Result<SampleGraph> {
    let g = res.graph;
    let sel = cfg.selection();
    let extracted: BTreeSet<EntityId> = sample.entities.iter().copied().collect();
    let candidates = candidate_neighbors(g, &extracted, &sel)?;
    let (selected, kept, evidence) = match cfg.selection_mode {
        SelectionMode::Nli => {
            let selected = select_by_degree(&candidates, sel.top_k);
            let outcome = nli_filter(g, &sample.text, &extracted, &selected, res.scorer, &sel)?;
            (selected, outcome.kept, outcome.evidence)
        }
        SelectionMode::Degree => {
            let selected = select_by_degree(&candidates, sel.top_k);
            (selected.clone(), selected, Vec::new())
        }
        SelectionMode::Random => {
            let mut rng = seeded(sample_seed(cfg.train_seed, &sample.id));
            let selected = select_random(&candidates, sel.top_k, &mut rng);
            (selected.clone(), selected, Vec::new())
        }
    };
    let subgraph = build_subgraph(g, &extracted, &kept)?;
    Ok(SampleGraph {
        subgraph,
        candidates,
        selected,
        evidence,
    })
}

pub fn prepare_sample(res: &Resources, cfg: &Config, sample: &Sample, image_path: &Path) -> Result<Prepared> {
    let run = || -> Result<Prepared> {
        let image = modality::load_image_features(image_path, &sample.id)?;
        let graph = if cfg.model_use_kg {
            Some(sample_graph(res, cfg, sample)?)
        } else {
            None
        };
        let text_vector = match (cfg.text_provider, res.text_vectors) {
            (crate::config::TextProvider::Encoder, _) => None,
            (crate::config::TextProvider::Vectors, Some(table)) => Some(
                table
                    .get(&sample.id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput("no precomputed text vector".into()))?,
            ),
            (crate::config::TextProvider::Vectors, None) => {
                return Err(Error::Config("text.provider = vectors but no vectors were loaded".into()))
            }
        };
        Ok(Prepared {
            sample: sample.clone(),
            image,
            graph,
            text_vector,
        })
    };
    run().map_err(|e| e.in_sample(&sample.id))
}

/// Prepares `samples` (all of `dataset` when `None`) in parallel, keeping order.
pub fn prepare_all(res: &Resources, cfg: &Config, dataset: &Dataset, samples: &[&Sample]) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| prepare_sample(res, cfg, s, &dataset.image_path(s)))
        .collect()
}

/// Where the GAT's initial entity states come from.
#[derive(Clone, Copy)]
pub enum Entities<'t> {
    /// Rows of a precomputed description-encoding table (no gradient).
    Cached(&'t Tensor),
    /// Re-encoded on the tape so gradients reach the knowledge encoder.
    Live,
}

pub struct ForwardPass {
    /// `1 x 2` logits, `[real, fake]`.
    pub logits: Var,
    pub gat: Option<gat::GatOutput>,
    pub kg_weights: Vec<f64>,
    pub image_weights: Vec<f64>,
}

/// Selection output to logits for one prepared sample.
pub fn forward(
    s: &mut Session,
    model: &Model,
    g: &KnowledgeGraph,
    p: &Prepared,
    entities: Entities,
) -> Result<ForwardPass> {
    let run = |s: &mut Session| -> Result<ForwardPass> {
        let text = match &p.text_vector {
            Some(v) => {
                if v.cols() != model.fusion.dim {
                    return Err(Error::Shape(format!(
                        "text vector has {} values, model dim is {}",
                        v.cols(),
                        model.fusion.dim
                    )));
                }
                s.constant(v.clone())
            }
            None => modality::encode_text(s, &model.text, &p.sample.tokens)?.pooled,
        };
        let img = modality::encode_image(s, &model.image, &p.image)?;
        let image = Context {
            pooled: img.pooled,
            tokens: img.tokens,
        };
        let (kg, gat_out) = match (&p.graph, model.uses_kg()) {
            (Some(graph), true) => {
                let ids = graph.subgraph.entity_ids();
                let states = match entities {
                    Entities::Cached(table) => s.constant(table.gather_rows(&ids.iter().map(|e| e.0).collect::<Vec<_>>())),
                    Entities::Live => encoder::encode_entities(s, &model.encoder, g, &ids)?,
                };
                let out = gat::gat_forward(s, &model.gat, &graph.subgraph, states, model.self_relation);
                let ctx = Context {
                    pooled: out.readout,
                    tokens: out.states,
                };
                (Some(ctx), Some(out))
            }
            (None, true) => return Err(Error::InvalidInput("sample was prepared without a subgraph".into())),
            (_, false) => (None, None),
        };
        let fused = fusion::fuse(s, &model.fusion, text, kg, image)?;
        Ok(ForwardPass {
            logits: fused.logits,
            gat: gat_out,
            kg_weights: fused.kg_weights,
            image_weights: fused.image_weights,
        })
    };
    run(s).map_err(|e| e.in_sample(&p.sample.id))
}

/// `[p_real, p_fake]` for every sample, in order. Parameters are read only.
pub fn predict(model: &Model, g: &KnowledgeGraph, samples: &[Prepared]) -> Result<Vec<[f64; 2]>> {
    let cache = model.entity_cache(g)?;
    samples
        .par_iter()
        .map(|p| {
            let mut s = Session::with_frozen(&model.params, &[""]);
            let entities = cache.as_ref().map_or(Entities::Live, Entities::Cached);
            let out = forward(&mut s, model, g, p, entities)?;
            Ok(fusion::probabilities(s.value(out.logits)))
        })
        .collect()
}

pub fn predicted_label(probs: [f64; 2]) -> Label {
    if probs[fusion::FAKE] > 0.5 {
        Label::Fake
    } else {
        Label::Real
    }
}

/// Probabilities and a JSON trace: selected neighbors with their NLI
/// verdicts, subgraph, per-layer GAT attention and both fusion stages.
pub fn forward_sample(model: &Model, g: &KnowledgeGraph, p: &Prepared) -> Result<([f64; 2], Value)> {
    let cache = model.entity_cache(g)?;
    let mut s = Session::with_frozen(&model.params, &[""]);
    let entities = cache.as_ref().map_or(Entities::Live, Entities::Cached);
    let out = forward(&mut s, model, g, p, entities)?;
    let probs = fusion::probabilities(s.value(out.logits));

    let label = |e: EntityId| g.entity(e).label.clone();
    let mut trace = json!({
        "id": p.sample.id,
        "label": p.sample.label,
        "prediction": predicted_label(probs),
        "probabilities": { "real": probs[fusion::REAL], "fake": probs[fusion::FAKE] },
        "entities": p.sample.entities.iter().map(|&e| label(e)).collect::<Vec<_>>(),
        "fusion": { "kg": out.kg_weights, "image": out.image_weights },
    });
    if let Some(graph) = &p.graph {
        let neighbors: Vec<Value> = if graph.evidence.is_empty() {
            graph
                .selected
                .iter()
                .map(|&e| json!({ "id": e.0, "label": label(e), "kept": true }))
                .collect()
        } else {
            graph
                .evidence
                .iter()
                .map(|ev| {
                    let mut v = json!({ "id": ev.entity.0, "label": label(ev.entity), "kept": ev.kept });
                    if let Some((t, verdict)) = ev.best {
                        v["triple"] = json!(verbalize_triple(g, &t));
                        v["nli"] = json!(verdict);
                    }
                    v
                })
                .collect()
        };
        trace["neighbors"] = Value::Array(neighbors);
        trace["subgraph"] = graph.subgraph.to_json(g);
    }
    if let Some(gat_out) = &out.gat {
        let layers: Vec<Value> = gat_out
            .attention
            .iter()
            .map(|alpha| {
                gat_out
                    .edges
                    .iter()
                    .zip(alpha.data())
                    .map(|(e, a)| json!({ "src": e.src, "rel": g.relation_label(e.relation), "dst": e.dst, "alpha": a }))
                    .collect::<Vec<_>>()
            })
            .map(Value::from)
            .collect();
        trace["gat_attention"] = Value::Array(layers);
    }
    Ok((probs, trace))
}
