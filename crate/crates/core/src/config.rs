//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file only lists what it changes and
//! `--key=value` overrides are applied on top. Unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::gat::GatConfig;
use crate::modality::{ImageConfig, SlotPositions, TextConfig};
use crate::select::SelectionConfig;
use crate::transformer::TransformerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// Degree ranking followed by the NLI filter.
    Nli,
    /// Degree ranking only.
    Degree,
    /// Uniform sample of the candidates, no filter.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    Table,
    Lexical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextProvider {
    Encoder,
    Vectors,
}

trait Setting: Sized {
    fn parse_setting(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! from_str_setting {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn parse_setting(s: &str) -> std::result::Result<Self, String> {
                <$t>::from_str(s).map_err(|e| e.to_string())
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_setting!(usize, u64, bool, String);

impl Setting for f64 {
    fn parse_setting(s: &str) -> std::result::Result<Self, String> {
        let v = f64::from_str(s).map_err(|e| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

impl Setting for PathBuf {
    fn parse_setting(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

macro_rules! enum_setting {
    ($t:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl Setting for $t {
            fn parse_setting(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
            fn show(&self) -> String {
                $(if *self == $variant { return $name.to_string(); })*
                unreachable!()
            }
        }
    };
}
enum_setting!(SelectionMode { "nli" => SelectionMode::Nli, "degree" => SelectionMode::Degree, "random" => SelectionMode::Random });
enum_setting!(ScorerKind { "table" => ScorerKind::Table, "lexical" => ScorerKind::Lexical });
enum_setting!(TextProvider { "encoder" => TextProvider::Encoder, "vectors" => TextProvider::Vectors });
enum_setting!(SlotPositions { "none" => SlotPositions::None, "cls" => SlotPositions::ClsOnly, "all" => SlotPositions::All });

macro_rules! settings {
    ($( $key:literal => $field:ident : $ty:ty = $default:expr, )*) => {
        /// Every tunable of a run. Field `a_b` is key `a.b`.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $( pub $field: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$field = <$ty as Setting>::parse_setting(value)
                            .map_err(|m| Error::Config(format!("`{key}` = `{value}`: {m}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( $key => Some(self.$field.show()), )*
                    _ => None,
                }
            }
        }
    };
}

settings! {
    "model.dim" => model_dim: usize = 32,
    "model.use_kg" => model_use_kg: bool = true,

    "encoder.layers" => encoder_layers: usize = 1,
    "encoder.heads" => encoder_heads: usize = 2,
    "encoder.ffn_dim" => encoder_ffn_dim: usize = 64,
    "encoder.max_len" => encoder_max_len: usize = 32,
    "encoder.positions" => encoder_positions: bool = true,
    "encoder.mask_prob" => encoder_mask_prob: f64 = 0.15,
    "encoder.margin" => encoder_margin: f64 = 1.0,
    "encoder.negatives" => encoder_negatives: usize = 1,
    "encoder.mlm_weight" => encoder_mlm_weight: f64 = 1.0,
    "encoder.kg_weight" => encoder_kg_weight: f64 = 1.0,

    "pretrain.steps" => pretrain_steps: usize = 0,
    "pretrain.lr" => pretrain_lr: f64 = 1e-2,
    "pretrain.triple_batch" => pretrain_triple_batch: usize = 32,
    "pretrain.description_batch" => pretrain_description_batch: usize = 16,

    "text.layers" => text_layers: usize = 1,
    "text.heads" => text_heads: usize = 2,
    "text.ffn_dim" => text_ffn_dim: usize = 64,
    "text.max_len" => text_max_len: usize = 48,
    "text.positions" => text_positions: bool = true,
    "text.provider" => text_provider: TextProvider = TextProvider::Encoder,
    "text.vectors" => text_vectors: PathBuf = PathBuf::from("text_vectors.csv"),

    "image.clip_dim" => image_clip_dim: usize = 8,
    "image.object_dim" => image_object_dim: usize = 8,
    "image.layers" => image_layers: usize = 1,
    "image.heads" => image_heads: usize = 2,
    "image.ffn_dim" => image_ffn_dim: usize = 64,
    "image.positions" => image_positions: SlotPositions = SlotPositions::ClsOnly,

    "gat.layers" => gat_layers: usize = 2,
    "gat.qk_dim" => gat_qk_dim: usize = 32,
    "gat.hidden" => gat_hidden: usize = 64,

    "fusion.pooled_only" => fusion_pooled_only: bool = false,

    "selection.mode" => selection_mode: SelectionMode = SelectionMode::Nli,
    "selection.hop_k" => selection_hop_k: usize = 2,
    "selection.top_k" => selection_top_k: usize = 16,
    "selection.min_shared_seeds" => selection_min_shared_seeds: usize = 2,
    "selection.nli_threshold" => selection_nli_threshold: f64 = 0.5,
    "selection.scorer" => selection_scorer: ScorerKind = ScorerKind::Table,
    "selection.nli_fixture" => selection_nli_fixture: PathBuf = PathBuf::from("nli.tsv"),

    "train.batch_size" => train_batch_size: usize = 64,
    "train.phase1_epochs" => train_phase1_epochs: usize = 30,
    "train.phase2_epochs" => train_phase2_epochs: usize = 20,
    "train.base_lr" => train_base_lr: f64 = 5e-4,
    "train.phase2_lr" => train_phase2_lr: f64 = 1e-6,
    "train.lr_decay" => train_lr_decay: f64 = 0.1,
    "train.lr_period" => train_lr_period: usize = 3,
    "train.seed" => train_seed: u64 = 0,

    "data.dir" => data_dir: PathBuf = PathBuf::from("."),
    "data.triples" => data_triples: PathBuf = PathBuf::from("triples.tsv"),
    "data.descriptions" => data_descriptions: PathBuf = PathBuf::from("descriptions.tsv"),
    "data.vocab" => data_vocab: PathBuf = PathBuf::from("vocab.txt"),
    "data.dataset" => data_dataset: PathBuf = PathBuf::from("dataset.jsonl"),
    "data.split_at" => data_split_at: usize = 400,
}

impl Config {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies `--key=value` (or `key=value`) overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let body = o.strip_prefix("--").unwrap_or(o);
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not --key=value")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Every key with its current value, loadable by [`Config::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn data_path(&self, file: &Path) -> PathBuf {
        self.data_dir.join(file)
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            transformer: TransformerConfig {
                dim: self.model_dim,
                layers: self.encoder_layers,
                heads: self.encoder_heads,
                ffn_dim: self.encoder_ffn_dim,
                max_len: self.encoder_max_len,
            },
            vocab_size,
            mask_prob: self.encoder_mask_prob,
            margin: self.encoder_margin,
            negatives: self.encoder_negatives,
            positions: self.encoder_positions,
            mlm_weight: self.encoder_mlm_weight,
            kg_weight: self.encoder_kg_weight,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            triple_batch: self.pretrain_triple_batch,
            description_batch: self.pretrain_description_batch,
            seed: self.train_seed,
        }
    }

    pub fn text(&self) -> TextConfig {
        TextConfig {
            transformer: TransformerConfig {
                dim: self.model_dim,
                layers: self.text_layers,
                heads: self.text_heads,
                ffn_dim: self.text_ffn_dim,
                max_len: self.text_max_len,
            },
            positions: self.text_positions,
        }
    }

    pub fn image(&self) -> ImageConfig {
        ImageConfig {
            clip_dim: self.image_clip_dim,
            object_dim: self.image_object_dim,
            transformer: TransformerConfig {
                dim: self.model_dim,
                layers: self.image_layers,
                heads: self.image_heads,
                ffn_dim: self.image_ffn_dim,
                max_len: crate::modality::MAX_OBJECTS + 1,
            },
            positions: self.image_positions,
        }
    }

    pub fn gat(&self) -> GatConfig {
        GatConfig {
            layers: self.gat_layers,
            dim: self.model_dim,
            qk_dim: self.gat_qk_dim,
            hidden: self.gat_hidden,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            dim: self.model_dim,
            pooled_only: self.fusion_pooled_only,
            use_kg: self.model_use_kg,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            hop_k: self.selection_hop_k,
            top_k: self.selection_top_k,
            min_shared_seeds: self.selection_min_shared_seeds,
            nli_threshold: self.selection_nli_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder(3).validate()?;
        self.text().transformer.validate("text")?;
        self.image().transformer.validate("image")?;
        self.gat().validate()?;
        self.selection().validate()?;
        if self.train_batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.train_lr_period == 0 {
            return Err(Error::Config("train.lr_period must be >= 1".into()));
        }
        if self.image_clip_dim == 0 || self.image_object_dim == 0 {
            return Err(Error::Config("image feature dims must be >= 1".into()));
        }
        Ok(())
    }
}
