//! Two-stage cross-attention fusion and the binary classifier head.
//!
//! Stage one lets the text vector attend over the subgraph readout (and node
//! states); stage two attends over the image tokens. Each stage is a single
//! query scaled dot-product attention followed by an output projection, a
//! residual connection with the query and layer normalization.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Session, Tensor, Var};

pub const KG_STAGE: &str = "fuse.kg";
pub const IMAGE_STAGE: &str = "fuse.img";
pub const CLASSIFIER: &str = "cls";

/// Class index of real posts.
pub const REAL: usize = 0;
/// Class index of fake posts.
pub const FAKE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub dim: usize,
    /// Attend over the pooled vectors only instead of every node/region.
    pub pooled_only: bool,
    /// Skip the knowledge stage entirely.
    pub use_kg: bool,
}

pub fn init_fusion<R: Rng + ?Sized>(params: &mut ParamStore, cfg: &FusionConfig, rng: &mut R) {
    for stage in [KG_STAGE, IMAGE_STAGE] {
        for proj in ["q", "k", "v", "o"] {
            params.init_linear(&format!("{stage}.{proj}"), cfg.dim, cfg.dim, rng);
        }
        params.init_norm(&format!("{stage}.ln"), cfg.dim);
    }
    params.init_linear(CLASSIFIER, cfg.dim, 2, rng);
}

/// `LN(query + W_o softmax(q K^T / sqrt(d)) V)`. Returns the `1 x d` output
/// and the attention weights over the context rows.
pub fn cross_attend(s: &mut Session, prefix: &str, query: Var, context: Var) -> Result<(Var, Vec<f64>)> {
    if s.value(context).rows() == 0 {
        return Err(Error::InvalidInput(format!("{prefix}: empty attention context")));
    }
    let d = s.value(query).cols();
    let q = s.linear(query, &format!("{prefix}.q"));
    let k = s.linear(context, &format!("{prefix}.k"));
    let v = s.linear(context, &format!("{prefix}.v"));
    let kt = s.transpose(k);
    let scores = s.matmul(q, kt);
    let scores = s.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = s.softmax_rows(scores);
    let attended = s.matmul(weights, v);
    let attended = s.linear(attended, &format!("{prefix}.o"));
    let res = s.add(query, attended);
    let out = s.norm(res, &format!("{prefix}.ln"));
    Ok((out, s.value(weights).data().to_vec()))
}

pub struct FusionOutput {
    pub fused: Var,
    /// `1 x 2` logits, `[real, fake]`.
    pub logits: Var,
    pub kg_weights: Vec<f64>,
    pub image_weights: Vec<f64>,
}

/// A context set: the pooled vector and every token it was pooled from.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub pooled: Var,
    pub tokens: Var,
}

/// Fuses the text vector with the knowledge and image contexts and scores
/// it. With `pooled_only` each stage attends over the pooled vector alone.
pub fn fuse(
    s: &mut Session,
    cfg: &FusionConfig,
    text: Var,
    kg: Option<Context>,
    image: Context,
) -> Result<FusionOutput> {
    let pick = |c: Context| if cfg.pooled_only { c.pooled } else { c.tokens };
    let (mut h, mut kg_weights) = (text, Vec::new());
    if cfg.use_kg {
        let ctx = kg.ok_or_else(|| Error::InvalidInput("knowledge context missing".into()))?;
        let (out, w) = cross_attend(s, KG_STAGE, h, pick(ctx))?;
        h = out;
        kg_weights = w;
    }
    let (fused, image_weights) = cross_attend(s, IMAGE_STAGE, h, pick(image))?;
    let logits = s.linear(fused, CLASSIFIER);
    Ok(FusionOutput {
        fused,
        logits,
        kg_weights,
        image_weights,
    })
}

/// `[p_real, p_fake]` from a `1 x 2` logit row.
pub fn probabilities(logits: &Tensor) -> [f64; 2] {
    let (a, b) = (logits.data()[0], logits.data()[1]);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded;

    fn setup(pooled_only: bool, use_kg: bool) -> (ParamStore, FusionConfig) {
        let cfg = FusionConfig {
            dim: 4,
            pooled_only,
            use_kg,
        };
        let mut params = ParamStore::new();
        init_fusion(&mut params, &cfg, &mut seeded(3));
        (params, cfg)
    }

    #[test]
    fn single_context_row_gets_full_weight() {
        let (params, _) = setup(false, true);
        let mut s = Session::new(&params);
        let q = s.constant(Tensor::row_vector(vec![0.3, -1.0, 2.0, 0.5]));
        let c = s.constant(Tensor::row_vector(vec![1.0, 1.0, -1.0, 0.0]));
        let (_, w) = cross_attend(&mut s, KG_STAGE, q, c).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn empty_context_is_rejected() {
        let (params, _) = setup(false, true);
        let mut s = Session::new(&params);
        let q = s.constant(Tensor::row_vector(vec![0.0; 4]));
        let c = s.constant(Tensor::zeros(0, 4));
        assert!(cross_attend(&mut s, KG_STAGE, q, c).is_err());
    }

    #[test]
    fn pooled_only_restricts_context() {
        let (params, cfg) = setup(true, true);
        let mut s = Session::new(&params);
        let t = s.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4]));
        let kg = s.constant(Tensor::filled(3, 4, 0.5));
        let kg_pooled = s.gather(kg, &[2]);
        let img = s.constant(Tensor::filled(5, 4, -0.5));
        let img_pooled = s.gather(img, &[0]);
        let kg = Context { pooled: kg_pooled, tokens: kg };
        let img = Context { pooled: img_pooled, tokens: img };
        let out = fuse(&mut s, &cfg, t, Some(kg), img).unwrap();
        assert_eq!(out.kg_weights.len(), 1);
        assert_eq!(out.image_weights.len(), 1);
        let p = probabilities(s.value(out.logits));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_image_only_skips_knowledge() {
        let (params, cfg) = setup(false, false);
        let mut s = Session::new(&params);
        let t = s.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4]));
        let img = s.constant(Tensor::filled(2, 4, 1.0));
        let pooled = s.gather(img, &[0]);
        let img = Context { pooled, tokens: img };
        let out = fuse(&mut s, &cfg, t, None, img).unwrap();
        assert!(out.kg_weights.is_empty());
        assert_eq!(out.image_weights.len(), 2);
    }
}
