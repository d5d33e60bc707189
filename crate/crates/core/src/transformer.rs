//! Post-norm transformer encoder shared by the description, text and image
//! branches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::CLS;
use crate::numerics::{ParamStore, Session, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Longest sequence, CLS included.
    pub max_len: usize,
}

impl TransformerConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{what}: dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!("{what}: max_len must be at least 2")));
        }
        Ok(())
    }
}

/// Hidden states of the last layer plus every attention matrix
/// (`layers x heads`, each `len x len`).
pub struct EncoderOutput {
    pub hidden: Var,
    pub attention: Vec<Tensor>,
}

pub fn init_layers<R: Rng + ?Sized>(params: &mut ParamStore, prefix: &str, cfg: &TransformerConfig, rng: &mut R) {
    let d = cfg.dim;
    for l in 0..cfg.layers {
        for proj in ["q", "k", "v", "o"] {
            params.init_linear(&format!("{prefix}.{l}.{proj}"), d, d, rng);
        }
        params.init_norm(&format!("{prefix}.{l}.ln1"), d);
        params.init_linear(&format!("{prefix}.{l}.ff1"), d, cfg.ffn_dim, rng);
        params.init_linear(&format!("{prefix}.{l}.ff2"), cfg.ffn_dim, d, rng);
        params.init_norm(&format!("{prefix}.{l}.ln2"), d);
    }
}

/// Runs every layer over the `len x dim` input `x`.
pub fn encode(s: &mut Session, prefix: &str, cfg: &TransformerConfig, mut x: Var) -> EncoderOutput {
    let d = cfg.dim;
    let head_dim = d / cfg.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut attention = Vec::with_capacity(cfg.layers * cfg.heads);
    for l in 0..cfg.layers {
        let q = s.linear(x, &format!("{prefix}.{l}.q"));
        let k = s.linear(x, &format!("{prefix}.{l}.k"));
        let v = s.linear(x, &format!("{prefix}.{l}.v"));
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (a, b) = (h * head_dim, (h + 1) * head_dim);
            let qh = s.slice_cols(q, a, b);
            let kh = s.slice_cols(k, a, b);
            let vh = s.slice_cols(v, a, b);
            let kt = s.transpose(kh);
            let scores = s.matmul(qh, kt);
            let scores = s.scale(scores, scale);
            let attn = s.softmax_rows(scores);
            attention.push(s.value(attn).clone());
            heads.push(s.matmul(attn, vh));
        }
        let merged = if heads.len() == 1 { heads[0] } else { s.concat_cols(&heads) };
        let attended = s.linear(merged, &format!("{prefix}.{l}.o"));
        let res = s.add(x, attended);
        let x1 = s.norm(res, &format!("{prefix}.{l}.ln1"));
        let hidden = s.linear(x1, &format!("{prefix}.{l}.ff1"));
        let hidden = s.gelu(hidden);
        let ff = s.linear(hidden, &format!("{prefix}.{l}.ff2"));
        let res = s.add(x1, ff);
        x = s.norm(res, &format!("{prefix}.{l}.ln2"));
    }
    EncoderOutput { hidden: x, attention }
}

/// Token embedding table `{prefix}.tok`, positions `{prefix}.pos` and the layers.
pub fn init_token_encoder<R: Rng + ?Sized>(
    params: &mut ParamStore,
    prefix: &str,
    vocab_size: usize,
    cfg: &TransformerConfig,
    rng: &mut R,
) {
    params.init_table(&format!("{prefix}.tok"), vocab_size, cfg.dim, rng);
    params.init_table(&format!("{prefix}.pos"), cfg.max_len, cfg.dim, rng);
    init_layers(params, &format!("{prefix}.layer"), cfg, rng);
}

/// CLS followed by `tokens`, truncated to `max_len`.
pub fn with_cls(tokens: &[u32], max_len: usize) -> Vec<usize> {
    std::iter::once(CLS)
        .chain(tokens.iter().copied())
        .take(max_len)
        .map(|t| t as usize)
        .collect()
}

/// Encodes a token sequence (CLS is prepended here). Row 0 of the hidden
/// states is the pooled CLS representation.
pub fn encode_tokens(
    s: &mut Session,
    prefix: &str,
    cfg: &TransformerConfig,
    tokens: &[u32],
    positions: bool,
) -> Result<EncoderOutput> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot encode an empty token sequence".into()));
    }
    encode_ids(s, prefix, cfg, &with_cls(tokens, cfg.max_len), positions)
}

/// Encodes an id sequence exactly as given (no CLS added).
pub fn encode_ids(
    s: &mut Session,
    prefix: &str,
    cfg: &TransformerConfig,
    ids: &[usize],
    positions: bool,
) -> Result<EncoderOutput> {
    let table = s.param(&format!("{prefix}.tok"));
    let vocab = s.value(table).rows();
    if let Some(bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(Error::InvalidInput(format!("token id {bad} outside vocab of {vocab}")));
    }
    let mut x = s.gather(table, ids);
    if positions {
        let pos = s.param(&format!("{prefix}.pos"));
        let idx: Vec<usize> = (0..ids.len()).collect();
        let p = s.gather(pos, &idx);
        x = s.add(x, p);
    }
    Ok(encode(s, &format!("{prefix}.layer"), cfg, x))
}

/// Row `i` of `x` as a `1 x n` var.
pub fn row(s: &mut Session, x: Var, i: usize) -> Var {
    s.gather(x, &[i])
}
