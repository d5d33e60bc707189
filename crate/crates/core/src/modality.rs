//! Text and image branches.
//!
//! The image branch takes precomputed features: a global CLIP-style vector
//! and up to 36 region vectors. Both are projected into the model width and
//! pooled by a transformer encoder whose position-0 output is the image
//! representation. Region slots carry no positional signal by default, so
//! region order does not matter.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Tensor, Var};
use crate::transformer::{self, TransformerConfig};

pub const MAX_OBJECTS: usize = 36;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    /// `1 x d_c`
    pub clip_cls: Tensor,
    /// `K x d_o`, `1 <= K <= 36`
    pub objects: Tensor,
    /// Detector confidence threshold the regions were extracted with.
    pub conf: f64,
    /// Detector IoU threshold the regions were extracted with.
    pub iou: f64,
}

impl ImageFeatures {
    pub fn object_count(&self) -> usize {
        self.objects.rows()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "d_c={},d_o={},conf={},iou={}\n",
            self.clip_cls.cols(),
            self.objects.cols(),
            self.conf,
            self.iou
        );
        let mut row = |values: &[f64]| {
            let cells: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        };
        row(self.clip_cls.data());
        for k in 0..self.objects.rows() {
            row(self.objects.row(k));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn header_field(header: &str, key: &str) -> Option<String> {
    header.split(',').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k.trim() == key).then(|| v.trim().to_string())
    })
}

/// Parses a feature file: `d_c=..,d_o=..,conf=..,iou=..` header, the global
/// row, then one CSV row per region.
pub fn parse_image_features(text: &str, sample_id: &str) -> Result<ImageFeatures> {
    let bad = |msg: String| Error::InvalidInput(format!("image features for `{sample_id}`: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dim = |key: &str| -> Result<usize> {
        header_field(header, key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let num = |key: &str| -> Result<f64> {
        header_field(header, key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let (d_c, d_o) = (dim("d_c")?, dim("d_o")?);
    let (conf, iou) = (num("conf")?, num("iou")?);

    let parse_row = |line: &str, width: usize, what: &str| -> Result<Vec<f64>> {
        let values = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("malformed {what} row")))?;
        if values.len() != width {
            return Err(bad(format!("{what} row has {} values, header says {width}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value in {what} row")));
        }
        Ok(values)
    };
    let cls_line = lines.next().ok_or_else(|| bad("missing global row".into()))?;
    let clip = parse_row(cls_line, d_c, "global")?;
    let objects = lines
        .map(|l| parse_row(l, d_o, "object"))
        .collect::<Result<Vec<_>>>()?;
    if objects.is_empty() {
        return Err(bad("no object rows".into()));
    }
    if objects.len() > MAX_OBJECTS {
        return Err(bad(format!("{} object rows exceed the limit of {MAX_OBJECTS}", objects.len())));
    }
    Ok(ImageFeatures {
        clip_cls: Tensor::row_vector(clip),
        objects: Tensor::from_rows(&objects)?,
        conf,
        iou,
    })
}

pub fn load_image_features(path: &Path, sample_id: &str) -> Result<ImageFeatures> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_image_features(&text, sample_id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SlotPositions {
    /// No positional encoding at all.
    None,
    /// Position 0 (the global slot) only; regions are an unordered set.
    #[default]
    ClsOnly,
    /// Every slot gets its own position.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageConfig {
    pub clip_dim: usize,
    pub object_dim: usize,
    pub transformer: TransformerConfig,
    pub positions: SlotPositions,
}

pub fn init_image<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &ImageConfig, rng: &mut R) {
    let d = cfg.transformer.dim;
    params.init_linear("img.clip", cfg.clip_dim, d, rng);
    params.init_linear("img.obj", cfg.object_dim, d, rng);
    params.init_table("img.pos", MAX_OBJECTS + 1, d, rng);
    transformer::init_layers(params, "img.enc", &cfg.transformer, rng);
}

/// `[W_clip c + b_clip ; W_obj o_k + b_obj ...]`, one row per slot.
pub fn project_image(s: &mut Session, feats: &ImageFeatures) -> Result<Var> {
    let expect = |name: &str, got: usize, s: &Session| -> Result<()> {
        let rows = s.params().get(name).map_or(0, Tensor::rows);
        if rows != got {
            return Err(Error::Shape(format!("feature width {got} does not match projection input {rows}")));
        }
        Ok(())
    };
    expect("img.clip.w", feats.clip_cls.cols(), s)?;
    expect("img.obj.w", feats.objects.cols(), s)?;
    let clip = s.constant(feats.clip_cls.clone());
    let objects = s.constant(feats.objects.clone());
    let clip = s.linear(clip, "img.clip");
    let objects = s.linear(objects, "img.obj");
    Ok(s.concat_rows(&[clip, objects]))
}

pub struct ImageOutput {
    pub pooled: Var,
    pub tokens: Var,
    pub attention: Vec<Tensor>,
}

pub fn encode_image(s: &mut Session, cfg: &ImageConfig, feats: &ImageFeatures) -> Result<ImageOutput> {
    let mut x = project_image(s, feats)?;
    let len = feats.object_count() + 1;
    match cfg.positions {
        SlotPositions::None => {}
        SlotPositions::All => {
            let table = s.param("img.pos");
            let idx: Vec<usize> = (0..len).collect();
            let p = s.gather(table, &idx);
            x = s.add(x, p);
        }
        SlotPositions::ClsOnly => {
            let table = s.param("img.pos");
            let first = s.gather(table, &[0]);
            let zeros = s.constant(Tensor::zeros(len - 1, cfg.transformer.dim));
            let p = s.concat_rows(&[first, zeros]);
            x = s.add(x, p);
        }
    }
    let out = transformer::encode(s, "img.enc", &cfg.transformer, x);
    let pooled = transformer::row(s, out.hidden, 0);
    Ok(ImageOutput {
        pooled,
        tokens: out.hidden,
        attention: out.attention,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextConfig {
    pub transformer: TransformerConfig,
    pub positions: bool,
}

pub fn init_text<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &TextConfig, vocab_size: usize, rng: &mut R) {
    transformer::init_token_encoder(params, "text", vocab_size, &cfg.transformer, rng);
}

pub struct TextOutput {
    pub pooled: Var,
    pub tokens: Var,
}

/// CLS-pooled text encoding.
pub fn encode_text(s: &mut Session, cfg: &TextConfig, tokens: &[u32]) -> Result<TextOutput> {
    let out = transformer::encode_tokens(s, "text", &cfg.transformer, tokens, cfg.positions)?;
    let pooled = transformer::row(s, out.hidden, 0);
    Ok(TextOutput {
        pooled,
        tokens: out.hidden,
    })
}

/// Precomputed text vectors keyed by sample id, from `sample_id,v1,...,vd` rows.
pub fn load_text_vectors(path: &Path, dim: usize) -> Result<HashMap<String, Tensor>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let id = cells.next().unwrap_or_default().trim().to_string();
        let values = cells
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(path, i + 1, "malformed value"))?;
        if values.len() != dim {
            return Err(Error::parse(path, i + 1, format!("expected {dim} values, got {}", values.len())));
        }
        out.insert(id, Tensor::row_vector(values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(k: usize) -> String {
        let mut s = String::from("d_c=4,d_o=4,conf=0.2,iou=0.7\n1,2,3,4\n");
        for i in 0..k {
            s.push_str(&format!("{i},0,0,1\n"));
        }
        s
    }

    #[test]
    fn parses_object_count() {
        let f = parse_image_features(&feats(3), "s1").unwrap();
        assert_eq!(f.object_count(), 3);
        assert_eq!(f.clip_cls.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((f.conf, f.iou), (0.2, 0.7));
    }

    #[test]
    fn rejects_too_many_objects() {
        let err = parse_image_features(&feats(37), "s9").unwrap_err().to_string();
        assert!(err.contains("s9"), "{err}");
        assert!(parse_image_features(&feats(36), "s9").is_ok());
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(parse_image_features("d_c=2,d_o=2,conf=0.2,iou=0.7\n1,2\n1,x\n", "s").is_err());
        assert!(parse_image_features("d_c=2,d_o=2,conf=0.2,iou=0.7\n1,2\n1,2,3\n", "s").is_err());
        assert!(parse_image_features("d_c=2,conf=0.2,iou=0.7\n1,2\n1,2\n", "s").is_err());
        assert!(parse_image_features("d_c=2,d_o=2,conf=0.2,iou=0.7\n1,2\n", "s").is_err());
    }

    #[test]
    fn text_round_trip() {
        let f = ImageFeatures {
            clip_cls: Tensor::row_vector(vec![0.1, -2.5e-7]),
            objects: Tensor::from_rows(&[vec![1.0 / 3.0], vec![-7.0]]).unwrap(),
            conf: 0.2,
            iou: 0.7,
        };
        assert_eq!(parse_image_features(&f.to_text(), "x").unwrap(), f);
    }
}
