//! Two-phase training and evaluation.
//!
//! Phase 1 trains everything except the knowledge encoder group (`kg.`) on
//! a step-decayed learning rate; the entity encodings are then constant and
//! computed once. Phase 2 unfreezes the group at its own learning rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::encoder::GROUP;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::numerics::{lr_schedule, seeded, Adam, AdamConfig, Session, Tensor};

use super::data::Label;
use super::metrics::Metrics;
use super::model::{forward, predict, predicted_label, Entities, Model, Prepared};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based, counted across both phases.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: Option<Metrics>,
}

pub fn epoch_log_csv(rows: &[EpochLog]) -> String {
    let mut out = String::from("epoch,phase,lr,train_loss,eval_acc,eval_f1\n");
    for r in rows {
        let (acc, f1) = r
            .eval
            .map_or((String::new(), String::new()), |m| (m.accuracy.to_string(), m.f1.to_string()));
        let _ = writeln!(out, "{},{},{:?},{},{acc},{f1}", r.epoch, r.phase, r.lr, r.train_loss);
    }
    out
}

fn batch_step(
    model: &Model,
    g: &KnowledgeGraph,
    batch: &[&Prepared],
    freeze_kg: bool,
    cache: Option<&Tensor>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let frozen: &[&str] = if freeze_kg { &[GROUP] } else { &[] };
    let per_sample: Vec<(f64, BTreeMap<String, Tensor>)> = batch
        .par_iter()
        .map(|p| {
            let mut s = Session::with_frozen(&model.params, frozen);
            let entities = cache.map_or(Entities::Live, Entities::Cached);
            let out = forward(&mut s, model, g, p, entities)?;
            let loss = s.cross_entropy(out.logits, &[p.sample.label.class()]);
            Ok((s.value(loss).item(), s.gradients(loss)))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (loss, g) in per_sample {
        total += loss;
        for (name, t) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(name, t);
                }
            }
        }
    }
    for t in grads.values_mut() {
        *t = t.map(|v| v * scale);
    }
    Ok((total * scale, grads))
}

/// Trains `model` in place and returns one log row per epoch. When `eval`
/// is given it is scored after every epoch.
pub fn train(
    model: &mut Model,
    g: &KnowledgeGraph,
    train_set: &[Prepared],
    eval: Option<&[Prepared]>,
) -> Result<Vec<EpochLog>> {
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let mut rng = seeded(cfg.train_seed.wrapping_add(1));
    let mut adam = Adam::new(AdamConfig::default());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let phases = [(1u8, cfg.train_phase1_epochs), (2u8, cfg.train_phase2_epochs)];
    for (phase, epochs) in phases {
        // The knowledge encoder does not move in phase 1, so its output is
        // computed once; without the KG branch there is nothing to encode.
        let cache = if phase == 1 && epochs > 0 { model.entity_cache(g)? } else { None };
        for e in 0..epochs {
            let lr = if phase == 1 {
                lr_schedule(cfg.train_base_lr, e, cfg.train_lr_decay, cfg.train_lr_period)
            } else {
                cfg.train_phase2_lr
            };
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(cfg.train_batch_size) {
                let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
                let (loss, grads) = batch_step(model, g, &batch, phase == 1, cache.as_ref())?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {}", log.len() + 1)));
                }
                loss_sum += loss * batch.len() as f64;
                adam.step(&mut model.params, &grads, lr)?;
            }
            let eval = match eval {
                Some(set) if !set.is_empty() => Some(evaluate(model, g, set)?),
                _ => None,
            };
            let row = EpochLog {
                epoch: log.len() + 1,
                phase,
                lr,
                train_loss: loss_sum / train_set.len() as f64,
                eval,
            };
            log::info!(
                "epoch {} phase {} lr {:e} loss {:.5}{}",
                row.epoch,
                phase,
                lr,
                row.train_loss,
                eval.map_or(String::new(), |m| format!(" eval {}", m.line()))
            );
            log.push(row);
        }
    }
    Ok(log)
}

/// Predicted and true label of every sample, in order.
pub fn predictions(model: &Model, g: &KnowledgeGraph, samples: &[Prepared]) -> Result<Vec<(Label, Label)>> {
    let probs = predict(model, g, samples)?;
    Ok(probs
        .into_iter()
        .zip(samples)
        .map(|(p, s)| (predicted_label(p), s.sample.label))
        .collect())
}

pub fn evaluate(model: &Model, g: &KnowledgeGraph, samples: &[Prepared]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    Ok(Metrics::from_predictions(&predictions(model, g, samples)?))
}
