//! Entity-description encoder trained with masked-token prediction and a
//! translation-based margin loss over graph triples.
//!
//! Entities have no free embedding: every entity vector is the CLS output of
//! the encoder over its description, recomputed each step so the structural
//! loss reaches the encoder weights. Relations do have a free vector each
//! (`kg.rel`), including the reserved INTERACT and SELF rows used by the GAT.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple, MASK};
use crate::numerics::{Adam, AdamConfig, ParamStore, Session, Tensor, Var};
use crate::transformer::{self, with_cls, TransformerConfig};

/// Every parameter of the knowledge encoder group starts with this prefix.
pub const GROUP: &str = "kg.";
pub const RELATIONS: &str = "kg.rel";
const ENCODER: &str = "kg.enc";
const MLM_HEAD: &str = "kg.mlm";

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub transformer: TransformerConfig,
    pub vocab_size: usize,
    pub mask_prob: f64,
    pub margin: f64,
    pub negatives: usize,
    pub positions: bool,
    pub mlm_weight: f64,
    pub kg_weight: f64,
}

impl EncoderConfig {
    pub fn new(transformer: TransformerConfig, vocab_size: usize) -> Self {
        Self {
            transformer,
            vocab_size,
            mask_prob: 0.15,
            margin: 1.0,
            negatives: 1,
            positions: true,
            mlm_weight: 1.0,
            kg_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer.validate("encoder")?;
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config("encoder.mask_prob must be in (0, 1)".into()));
        }
        if self.margin <= 0.0 {
            return Err(Error::Config("encoder.margin must be positive".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("encoder.negatives must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn init_encoder<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &EncoderConfig, total_relations: usize, rng: &mut R) {
    transformer::init_token_encoder(params, ENCODER, cfg.vocab_size, &cfg.transformer, rng);
    params.init_linear(MLM_HEAD, cfg.transformer.dim, cfg.vocab_size, rng);
    params.init_table(RELATIONS, total_relations, cfg.transformer.dim, rng);
}

/// CLS output over the description, `1 x dim`.
pub fn encode_description(s: &mut Session, cfg: &EncoderConfig, tokens: &[u32]) -> Result<Var> {
    let out = transformer::encode_tokens(s, ENCODER, &cfg.transformer, tokens, cfg.positions)?;
    Ok(transformer::row(s, out.hidden, 0))
}

/// Stacked description encodings of `ids`, one row each, in the given order.
pub fn encode_entities(s: &mut Session, cfg: &EncoderConfig, g: &KnowledgeGraph, ids: &[EntityId]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("no entities to encode".into()));
    }
    let rows = ids
        .iter()
        .map(|&e| encode_description(s, cfg, &g.entity(e).description))
        .collect::<Result<Vec<_>>>()?;
    Ok(if rows.len() == 1 { rows[0] } else { s.concat_rows(&rows) })
}

/// Encodes every entity of `g` without recording gradients.
pub fn entity_table(params: &ParamStore, cfg: &EncoderConfig, g: &KnowledgeGraph) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(g.entity_count());
    for e in g.entities() {
        let mut s = Session::with_frozen(params, &[GROUP]);
        let v = encode_description(&mut s, cfg, &e.description)?;
        rows.push(s.value(v).data().to_vec());
    }
    Tensor::from_rows(&rows)
}

/// Masked positions for each sequence, indexed within the CLS-prefixed
/// sequence. Each non-CLS position is masked independently with
/// probability `p`; a sequence with no draw gets one uniformly chosen
/// position.
pub fn sample_masks<R: Rng + ?Sized>(batch: &[&[u32]], max_len: usize, p: f64, rng: &mut R) -> Vec<Vec<usize>> {
    batch
        .iter()
        .map(|tokens| {
            let len = with_cls(tokens, max_len).len();
            let mut picked: Vec<usize> = (1..len).filter(|_| rng.random_bool(p)).collect();
            if picked.is_empty() && len > 1 {
                picked.push(rng.random_range(1..len));
            }
            picked
        })
        .collect()
}

/// Mean cross-entropy over the given masked positions.
pub fn mlm_loss_masked(s: &mut Session, cfg: &EncoderConfig, batch: &[&[u32]], masks: &[Vec<usize>]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty MLM batch".into()));
    }
    let mut logits_rows = Vec::new();
    let mut targets = Vec::new();
    for (tokens, mask) in batch.iter().zip(masks) {
        if mask.is_empty() {
            continue;
        }
        let original = with_cls(tokens, cfg.transformer.max_len);
        let mut input = original.clone();
        for &m in mask {
            input[m] = MASK as usize;
            targets.push(original[m]);
        }
        let out = transformer::encode_ids(s, ENCODER, &cfg.transformer, &input, cfg.positions)?;
        let picked = s.gather(out.hidden, mask);
        logits_rows.push(s.linear(picked, MLM_HEAD));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("no maskable positions in MLM batch".into()));
    }
    let logits = if logits_rows.len() == 1 { logits_rows[0] } else { s.concat_rows(&logits_rows) };
    Ok(s.cross_entropy(logits, &targets))
}

pub fn mlm_loss<R: Rng + ?Sized>(s: &mut Session, cfg: &EncoderConfig, batch: &[&[u32]], rng: &mut R) -> Result<Var> {
    let masks = sample_masks(batch, cfg.transformer.max_len, cfg.mask_prob, rng);
    mlm_loss_masked(s, cfg, batch, &masks)
}

/// One corruption per positive: head or tail (fair coin) replaced by a
/// uniformly drawn different entity.
pub fn corrupt<R: Rng + ?Sized>(entity_count: usize, positives: &[Triple], rng: &mut R) -> Result<Vec<Triple>> {
    if entity_count < 2 {
        return Err(Error::InvalidInput("need at least two entities to corrupt a triple".into()));
    }
    let redraw = |orig: EntityId, rng: &mut R| {
        let mut e = rng.random_range(0..entity_count - 1);
        if e >= orig.0 {
            e += 1;
        }
        EntityId(e)
    };
    Ok(positives
        .iter()
        .map(|t| {
            let mut n = *t;
            if rng.random_bool(0.5) {
                n.head = redraw(t.head, rng);
            } else {
                n.tail = redraw(t.tail, rng);
            }
            n
        })
        .collect())
}

/// `||h + r - t||` per row, as an `n x 1` column.
pub fn translation_distance(s: &mut Session, h: Var, r: Var, t: Var) -> Var {
    let hr = s.add(h, r);
    let diff = s.sub(hr, t);
    s.row_l2_norm(diff)
}

/// Per-triple hinge `max(0, margin + d_pos - d_neg)` from distance columns.
pub fn margin_hinge(s: &mut Session, pos: Var, neg: Var, margin: f64) -> Var {
    let n = s.value(pos).rows();
    let m = s.constant(Tensor::filled(n, 1, margin));
    let gap = s.sub(pos, neg);
    let shifted = s.add(gap, m);
    s.hinge(shifted)
}

/// Mean margin loss over `positives` against the given negatives.
pub fn kg_triplet_loss_with(
    s: &mut Session,
    cfg: &EncoderConfig,
    g: &KnowledgeGraph,
    positives: &[Triple],
    negatives: &[Triple],
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::InvalidInput("no positive triples".into()));
    }
    let needed: BTreeSet<EntityId> = positives
        .iter()
        .chain(negatives)
        .flat_map(|t| [t.head, t.tail])
        .collect();
    let order: Vec<EntityId> = needed.into_iter().collect();
    let slot: BTreeMap<EntityId, usize> = order.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let table = encode_entities(s, cfg, g, &order)?;
    let rel_table = s.param(RELATIONS);

    let side = |s: &mut Session, ts: &[Triple]| {
        let h = s.gather(table, &ts.iter().map(|t| slot[&t.head]).collect::<Vec<_>>());
        let t_ = s.gather(table, &ts.iter().map(|t| slot[&t.tail]).collect::<Vec<_>>());
        let r = s.gather(rel_table, &ts.iter().map(|t| t.relation.0).collect::<Vec<_>>());
        translation_distance(s, h, r, t_)
    };
    let pos = side(s, positives);
    let neg = side(s, negatives);
    let hinge = margin_hinge(s, pos, neg, cfg.margin);
    Ok(s.mean(hinge))
}

pub fn kg_triplet_loss<R: Rng + ?Sized>(
    s: &mut Session,
    cfg: &EncoderConfig,
    g: &KnowledgeGraph,
    positives: &[Triple],
    rng: &mut R,
) -> Result<Var> {
    let mut pos = Vec::with_capacity(positives.len() * cfg.negatives);
    let mut neg = Vec::with_capacity(positives.len() * cfg.negatives);
    for _ in 0..cfg.negatives {
        pos.extend_from_slice(positives);
        neg.extend(corrupt(g.entity_count(), positives, rng)?);
    }
    kg_triplet_loss_with(s, cfg, g, &pos, &neg)
}

/// `mlm_weight * mlm + kg_weight * kg`; both weights default to 1.
pub fn joint_loss(s: &mut Session, cfg: &EncoderConfig, mlm: Var, kg: Var) -> Var {
    let a = if cfg.mlm_weight == 1.0 { mlm } else { s.scale(mlm, cfg.mlm_weight) };
    let b = if cfg.kg_weight == 1.0 { kg } else { s.scale(kg, cfg.kg_weight) };
    s.add(a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub triple_batch: usize,
    pub description_batch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 1e-2,
            triple_batch: 32,
            description_batch: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLogRow {
    pub step: usize,
    pub loss_mlm: f64,
    pub loss_kg: f64,
    pub loss_total: f64,
}

pub fn log_csv(rows: &[PretrainLogRow]) -> String {
    let mut out = String::from("step,loss_mlm,loss_kg,loss_total\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss_mlm, r.loss_kg, r.loss_total));
    }
    out
}

fn pick<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, n, k).into_vec();
        v.sort_unstable();
        v
    }
}

/// Joint pre-training of the `kg.` parameter group in `params`. Returns the
/// per-step loss log.
pub fn train_encoder<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    cfg: &EncoderConfig,
    train: &PretrainConfig,
    params: &mut ParamStore,
    rng: &mut R,
) -> Result<Vec<PretrainLogRow>> {
    cfg.validate()?;
    if g.entity_count() == 0 {
        return Err(Error::InvalidInput("graph has no entities".into()));
    }
    let mut adam = Adam::new(AdamConfig::default());
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let desc_idx = pick(g.entity_count(), train.description_batch, rng);
        let descriptions: Vec<&[u32]> = desc_idx
            .iter()
            .map(|&i| g.entity(EntityId(i)).description.as_slice())
            .collect();
        let triple_idx = pick(g.triples().len(), train.triple_batch, rng);
        let positives: Vec<Triple> = triple_idx.iter().map(|&i| g.triples()[i]).collect();

        let mut s = Session::new(params);
        let mlm = mlm_loss(&mut s, cfg, &descriptions, rng)?;
        let kg = if positives.is_empty() {
            s.constant(Tensor::scalar(0.0))
        } else {
            kg_triplet_loss(&mut s, cfg, g, &positives, rng)?
        };
        let total = joint_loss(&mut s, cfg, mlm, kg);
        log.push(PretrainLogRow {
            step,
            loss_mlm: s.value(mlm).item(),
            loss_kg: s.value(kg).item(),
            loss_total: s.value(total).item(),
        });
        let grads = s.gradients(total);
        drop(s);
        adam.step(params, &grads, train.lr)?;
    }
    Ok(log)
}
