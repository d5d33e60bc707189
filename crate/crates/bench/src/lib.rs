//! Shared fixtures for the benchmarks.

use kgalign::kg::{EntityId, EntityRecord, KnowledgeGraph, Vocab};
use kgalign::synth::{synth_world, SynthWorld};

/// The synthetic world as an in-memory graph plus its vocabulary.
pub fn world(seed: u64, entities: usize, samples: usize) -> (SynthWorld, KnowledgeGraph, Vocab) {
    let w = synth_world(seed, entities, 8, samples).expect("valid sizes");
    let vocab = Vocab::new(w.vocab()).expect("special tokens present");
    let records = w
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| EntityRecord {
            id: EntityId(i),
            label: e.label.clone(),
            name: e.name.clone(),
            description: vocab.tokenize(&e.description),
        })
        .collect();
    let g = KnowledgeGraph::new(records, w.relations.clone(), w.triples.clone()).expect("consistent world");
    (w, g, vocab)
}
