//! Loading everything a run needs from a [`Config`].

use std::collections::HashMap;

use crate::config::{Config, ScorerKind, TextProvider};
use crate::encoder::train_encoder;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Vocab};
use crate::modality::load_text_vectors;
use crate::numerics::{seeded, Tensor};
use crate::select::{LexicalScorer, NliScorer, TableScorer};

use super::data::{load_dataset, Dataset, Sample};
use super::metrics::Metrics;
use super::model::{prepare_all, Model, Prepared, Resources};
use super::train::{evaluate, train, EpochLog};

pub struct Workspace {
    pub graph: KnowledgeGraph,
    pub vocab: Vocab,
    pub dataset: Dataset,
    pub scorer: Box<dyn NliScorer>,
    pub text_vectors: Option<HashMap<String, Tensor>>,
}

impl Workspace {
    pub fn load(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocab::load(&cfg.data_path(&cfg.data_vocab))?;
        let graph = KnowledgeGraph::load(
            &cfg.data_path(&cfg.data_triples),
            &cfg.data_path(&cfg.data_descriptions),
            &vocab,
        )?;
        let dataset = load_dataset(&cfg.data_path(&cfg.data_dataset), &graph, &vocab)?;
        let scorer: Box<dyn NliScorer> = match cfg.selection_scorer {
            ScorerKind::Table => Box::new(TableScorer::load(&cfg.data_path(&cfg.selection_nli_fixture))?),
            ScorerKind::Lexical => Box::new(LexicalScorer),
        };
        let text_vectors = match cfg.text_provider {
            TextProvider::Encoder => None,
            TextProvider::Vectors => Some(load_text_vectors(&cfg.data_path(&cfg.text_vectors), cfg.model_dim)?),
        };
        Ok(Self {
            graph,
            vocab,
            dataset,
            scorer,
            text_vectors,
        })
    }

    pub fn resources(&self) -> Resources<'_> {
        Resources {
            graph: &self.graph,
            scorer: self.scorer.as_ref(),
            text_vectors: self.text_vectors.as_ref(),
        }
    }

    /// Samples before and after `data.split_at`.
    pub fn split(&self, cfg: &Config) -> (Vec<&Sample>, Vec<&Sample>) {
        let at = cfg.data_split_at.min(self.dataset.samples.len());
        let (a, b) = self.dataset.samples.split_at(at);
        (a.iter().collect(), b.iter().collect())
    }

    pub fn prepare(&self, cfg: &Config, samples: &[&Sample]) -> Result<Vec<Prepared>> {
        prepare_all(&self.resources(), cfg, &self.dataset, samples)
    }

    pub fn sample(&self, id: &str) -> Result<&Sample> {
        self.dataset
            .samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("sample `{id}` not in the dataset")))
    }

    /// A freshly initialized model, pre-trained on the graph when
    /// `pretrain.steps > 0`.
    pub fn init_model(&self, cfg: &Config) -> Result<Model> {
        let mut model = Model::new(cfg, &self.graph, self.vocab.len())?;
        if cfg.pretrain_steps > 0 {
            let mut rng = seeded(cfg.train_seed.wrapping_add(2));
            train_encoder(&self.graph, &model.encoder, &cfg.pretrain(), &mut model.params, &mut rng)?;
        }
        Ok(model)
    }
}

pub struct RunOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub metrics: Metrics,
}

/// Initialize, train on `train_set`, score on `test_set`.
pub fn run(ws: &Workspace, cfg: &Config, train_set: &[&Sample], test_set: &[&Sample]) -> Result<RunOutcome> {
    let train_prepared = ws.prepare(cfg, train_set)?;
    let test_prepared = ws.prepare(cfg, test_set)?;
    let mut model = ws.init_model(cfg)?;
    let eval = (!test_prepared.is_empty()).then_some(test_prepared.as_slice());
    let log = train(&mut model, &ws.graph, &train_prepared, eval)?;
    let metrics = evaluate(&model, &ws.graph, &test_prepared)?;
    Ok(RunOutcome { model, log, metrics })
}
