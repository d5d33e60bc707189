//! Deterministic synthetic world for end-to-end checks.
//!
//! A random graph over pseudo-word entities; every sample verbalizes two or
//! three graph triples with disjoint entities. Fake samples swap the tail of
//! one triple for an entity that has no edge to its head, so whether a post
//! is real can only be decided by looking the statements up in the graph.
//! The NLI table entails each true statement and contradicts both the
//! swapped statement and the graph triple it replaced.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{words, EntityId, Triple};
use crate::modality::ImageFeatures;
use crate::numerics::{seeded, Tensor};
use crate::pipeline::data::{dataset_to_jsonl, Label, SampleRecord};
use crate::select::{NliVerdict, TableScorer};

pub const TRIPLES: &str = "triples.tsv";
pub const DESCRIPTIONS: &str = "descriptions.tsv";
pub const VOCAB: &str = "vocab.txt";
pub const NLI: &str = "nli.tsv";
pub const DATASET: &str = "dataset.jsonl";
pub const IMAGES: &str = "images";

pub const FEATURE_DIM: usize = 8;
const MAX_REGIONS: usize = 6;

const RELATION_NAMES: &[&str] = &[
    "borders", "trades_with", "founded", "admires", "rivals", "hosts", "funds", "mentors", "supplies",
    "governs", "visited", "sponsors",
];
const KINDS: &[&str] = &["city", "company", "person", "river", "festival", "school"];
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthEntity {
    pub label: String,
    pub name: String,
    pub description: String,
}

/// One verbalized statement of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Statement {
    pub triple: Triple,
    /// The graph triple this statement replaced, for corrupted statements.
    pub replaced: Option<Triple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub record: SampleRecord,
    pub statements: Vec<Statement>,
    pub image: ImageFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub entities: Vec<SynthEntity>,
    pub relations: Vec<String>,
    pub triples: Vec<Triple>,
    pub samples: Vec<SynthSample>,
    pub nli: TableScorer,
}

fn pseudo_word<R: Rng + ?Sized>(rng: &mut R, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if rng.random_bool(0.5) {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

impl SynthWorld {
    pub fn name(&self, e: EntityId) -> &str {
        &self.entities[e.0].name
    }

    pub fn sentence(&self, t: &Triple) -> String {
        format!(
            "{} {} {}.",
            self.name(t.head),
            self.relations[t.relation.0].replace('_', " "),
            self.name(t.tail)
        )
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    fn linked(&self, a: EntityId, b: EntityId) -> bool {
        self.triples
            .iter()
            .any(|t| (t.head == a && t.tail == b) || (t.head == b && t.tail == a))
    }

    pub fn triples_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entities[t.head.0].label, self.relations[t.relation.0], self.entities[t.tail.0].label
            );
        }
        out
    }

    pub fn descriptions_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entities {
            let _ = writeln!(out, "{}\t{}\t{}", e.label, e.name, e.description);
        }
        out
    }

    /// Special tokens, then every word of descriptions and texts, sorted.
    pub fn vocab(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        for e in &self.entities {
            all.extend(words(&e.description));
            all.extend(words(&e.name));
        }
        for s in &self.samples {
            all.extend(words(&s.record.text));
        }
        ["<unk>", "<mask>", "<cls>"]
            .iter()
            .map(|s| s.to_string())
            .chain(all)
            .collect()
    }

    /// Writes the five data files and the per-sample image features.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join(IMAGES);
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write(TRIPLES, self.triples_tsv())?;
        write(DESCRIPTIONS, self.descriptions_tsv())?;
        write(VOCAB, self.vocab().join("\n") + "\n")?;
        write(NLI, self.nli.to_tsv())?;
        let records: Vec<SampleRecord> = self.samples.iter().map(|s| s.record.clone()).collect();
        write(DATASET, dataset_to_jsonl(&records))?;
        for s in &self.samples {
            s.image.write(&dir.join(&s.record.image_features))?;
        }
        Ok(())
    }
}

fn verdict(entail: f64, neutral: f64, contradict: f64) -> NliVerdict {
    NliVerdict::new(entail, neutral, contradict).expect("valid distribution")
}

/// Builds the world in memory. Needs at least 10 entities, 1 relation and
/// 2 samples.
pub fn synth_world(seed: u64, n_entities: usize, n_relations: usize, n_samples: usize) -> Result<SynthWorld> {
    if n_entities < 10 || n_relations == 0 || n_samples < 2 {
        return Err(Error::InvalidInput(
            "synthetic world needs >= 10 entities, >= 1 relation and >= 2 samples".into(),
        ));
    }
    let mut rng = seeded(seed);
    let mut taken = HashSet::new();
    let names: Vec<String> = (0..n_entities).map(|_| pseudo_word(&mut rng, &mut taken)).collect();
    let relations: Vec<String> = (0..n_relations)
        .map(|i| match RELATION_NAMES.get(i) {
            Some(r) => r.to_string(),
            None => pseudo_word(&mut rng, &mut taken),
        })
        .collect();

    let target = (2 * n_entities).min(n_entities * (n_entities - 1) / 2);
    let mut pairs = HashSet::new();
    let mut triples = Vec::with_capacity(target);
    while triples.len() < target {
        let h = rng.random_range(0..n_entities);
        let t = rng.random_range(0..n_entities);
        if h == t || !pairs.insert((h.min(t), h.max(t))) {
            continue;
        }
        triples.push(Triple::new(h, rng.random_range(0..n_relations), t));
    }

    let entities: Vec<SynthEntity> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let kind = KINDS.choose(&mut rng).expect("non-empty");
            let mut description = format!("{name} is a {kind}.");
            for t in triples.iter().filter(|t| t.head.0 == i).take(3) {
                let _ = write!(
                    description,
                    " {name} {} {}.",
                    relations[t.relation.0].replace('_', " "),
                    names[t.tail.0]
                );
            }
            SynthEntity {
                label: format!("e{i:03}"),
                name: name.clone(),
                description,
            }
        })
        .collect();

    let mut world = SynthWorld {
        entities,
        relations,
        triples,
        samples: Vec::with_capacity(n_samples),
        nli: TableScorer::new(),
    };

    let mut labels: Vec<Label> = (0..n_samples)
        .map(|i| if i < n_samples.div_ceil(2) { Label::Real } else { Label::Fake })
        .collect();
    labels.shuffle(&mut rng);

    for (i, &label) in labels.iter().enumerate() {
        let id = format!("s{:04}", i + 1);
        let statements = loop {
            if let Some(s) = draw_statements(&world, label, &mut rng) {
                break s;
            }
        };
        let text = statements
            .iter()
            .map(|s| world.sentence(&s.triple))
            .collect::<Vec<_>>()
            .join(" ");
        for s in &statements {
            match s.replaced {
                None => world.nli.insert(&text, &world.sentence(&s.triple), verdict(0.9, 0.05, 0.05)),
                Some(original) => {
                    world.nli.insert(&text, &world.sentence(&s.triple), verdict(0.05, 0.05, 0.9));
                    world.nli.insert(&text, &world.sentence(&original), verdict(0.05, 0.05, 0.9));
                }
            }
        }
        let mut mentioned: Vec<String> = Vec::new();
        for s in &statements {
            for e in [s.triple.head, s.triple.tail] {
                let l = world.entities[e.0].label.clone();
                if !mentioned.contains(&l) {
                    mentioned.push(l);
                }
            }
        }
        let regions = rng.random_range(1..=MAX_REGIONS);
        let image = ImageFeatures {
            clip_cls: Tensor::uniform(1, FEATURE_DIM, 1.0, &mut rng),
            objects: Tensor::uniform(regions, FEATURE_DIM, 1.0, &mut rng),
            conf: 0.2,
            iou: 0.7,
        };
        world.samples.push(SynthSample {
            record: SampleRecord {
                id: id.clone(),
                text,
                entities: mentioned,
                image_features: format!("{IMAGES}/{id}.txt"),
                label,
            },
            statements,
            image,
        });
    }
    Ok(world)
}

/// Two or three graph triples over disjoint entities; for fake samples one
/// tail is swapped. `None` when the draw hit a dead end.
fn draw_statements<R: Rng + ?Sized>(world: &SynthWorld, label: Label, rng: &mut R) -> Option<Vec<Statement>> {
    let count = rng.random_range(2..=3);
    let mut used = HashSet::new();
    let mut statements = Vec::with_capacity(count);
    for _ in 0..count {
        let candidates: Vec<&Triple> = world
            .triples
            .iter()
            .filter(|t| !used.contains(&t.head) && !used.contains(&t.tail))
            .collect();
        let t = **candidates.choose(rng)?;
        used.insert(t.head);
        used.insert(t.tail);
        statements.push(Statement {
            triple: t,
            replaced: None,
        });
    }
    if label == Label::Fake {
        let k = rng.random_range(0..statements.len());
        let original = statements[k].triple;
        let swaps: Vec<EntityId> = (0..world.entities.len())
            .map(EntityId)
            .filter(|&e| !used.contains(&e) && !world.linked(original.head, e))
            .collect();
        let tail = *swaps.choose(rng)?;
        statements[k] = Statement {
            triple: Triple {
                tail,
                ..original
            },
            replaced: Some(original),
        };
    }
    Some(statements)
}

/// Generates the world and writes it under `out`.
pub fn synth_generate(seed: u64, n_entities: usize, n_relations: usize, n_samples: usize, out: &Path) -> Result<SynthWorld> {
    let world = synth_world(seed, n_entities, n_relations, n_samples)?;
    world.write(out)?;
    Ok(world)
}
