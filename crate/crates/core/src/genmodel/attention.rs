use serde::{Deserialize, Serialize};

use super::tokens::TokenSequence;
use crate::numerics::{DiffGraph, NodeId, Real, Tensor};
use crate::sixd::Modality;
use crate::{Error, Result};

/// `W + scale·B·A` for `W: out×in`, `A: r×in`, `B: out×r`.
pub fn lora_apply(base: &Tensor, a: &Tensor, b: &Tensor, scale: f64) -> Result<Tensor> {
    if base.rank() != 2 || a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape("lora_apply expects matrices"));
    }
    let (out, inp) = (base.shape()[0], base.shape()[1]);
    let r = a.shape()[0];
    if a.shape()[1] != inp || b.shape() != [out, r] {
        return Err(Error::shape(format!(
            "LoRA factors A {:?}, B {:?} do not fit W {:?}",
            a.shape(),
            b.shape(),
            base.shape()
        )));
    }
    let ba = b.matmul(a)?;
    let s = scale as f32;
    base.zip_map(&ba, |w, d| w + s * d)
}

/// The graph form of [`lora_apply`].
pub(crate) fn lora_graph<T: Real>(
    g: &mut DiffGraph<T>,
    base: NodeId,
    a: NodeId,
    b: NodeId,
    scale: f64,
) -> Result<NodeId> {
    let ba = g.matmul(b, a)?;
    let scaled = g.scale(ba, scale)?;
    g.add(base, scaled)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdsaMode {
    /// Every token attends to all tokens of the other modality.
    Full,
    /// Every token attends only to the other-modality token at its coordinate.
    Sparse,
}

/// Query/key/value/output projections, each `D×D` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

/// Additive mask with `0` where `allowed(i, j)` and `-inf` elsewhere.
pub(crate) fn additive_mask<T: Real>(n: usize, allowed: impl Fn(usize, usize) -> bool) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut any = false;
        for j in 0..n {
            let ok = allowed(i, j);
            any |= ok;
            data.push(if ok { T::zero() } else { T::neg_infinity() });
        }
        if !any {
            return Err(Error::invalid(format!("token {i} has nothing to attend to")));
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Cross-modality attention pattern over tokens tagged with `modality` and
/// `coords`.
pub(crate) fn cross_mask<T: Real>(
    modality: &[Option<Modality>],
    coords: &[[usize; 3]],
    mode: CdsaMode,
) -> Result<Tensor<T>> {
    additive_mask(modality.len(), |i, j| {
        let cross = matches!((modality[i], modality[j]), (Some(a), Some(b)) if a != b);
        cross && (mode == CdsaMode::Full || coords[i] == coords[j])
    })
}

/// Multi-head attention over `x: B×L×D` with merged projection weights
/// `[wq, wk, wv, wo]` and an optional additive `L×L` mask.
pub(crate) fn attention_graph<T: Real>(
    g: &mut DiffGraph<T>,
    x: NodeId,
    w: [NodeId; 4],
    heads: usize,
    mask: Option<NodeId>,
) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let [b, l, d] = shape[..] else {
        return Err(Error::shape(format!("attention input must be B×L×D, got {shape:?}")));
    };
    let hd = d / heads;
    let mut split_heads = |w: NodeId, perm: &[usize]| -> Result<NodeId> {
        let y = g.linear(x, w, None)?;
        let y = g.reshape(y, &[b, l, heads, hd])?;
        g.permute(y, perm)
    };
    let q = split_heads(w[0], &[0, 2, 1, 3])?;
    let kt = split_heads(w[1], &[0, 2, 3, 1])?;
    let v = split_heads(w[2], &[0, 2, 1, 3])?;
    let s = g.matmul(q, kt)?;
    let mut s = g.scale(s, 1.0 / (hd as f64).sqrt())?;
    if let Some(m) = mask {
        s = g.add(s, m)?;
    }
    let p = g.softmax(s)?;
    let o = g.matmul(p, v)?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &[b, l, d])?;
    g.linear(o, w[3], None)
}

/// Cross-domain self-attention on its own: returns the attention output
/// (without residual) for every token.
pub fn cross_domain_attention(
    seq: &TokenSequence,
    weights: &AttentionWeights,
    heads: usize,
    mode: CdsaMode,
) -> Result<TokenSequence> {
    let (l, d) = (seq.len(), seq.width());
    if seq.coords.len() != l || seq.modality.len() != l {
        return Err(Error::invalid("token sequence is missing coordinates or tags"));
    }
    if !(seq.modality.contains(&Modality::Rgb) && seq.modality.contains(&Modality::Xyz)) {
        return Err(Error::invalid("cross-domain attention needs both modalities"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!("width {d} is not divisible by {heads} heads")));
    }
    for w in [&weights.wq, &weights.wk, &weights.wv, &weights.wo] {
        if w.shape() != [d, d] {
            return Err(Error::shape(format!("projection {:?} does not match width {d}", w.shape())));
        }
    }
    let tags: Vec<Option<Modality>> = seq.modality.iter().copied().map(Some).collect();
    let mut g = DiffGraph::<f32>::new();
    let mask = g.constant(cross_mask(&tags, &seq.coords, mode)?);
    let x = g.constant(seq.tokens.reshape(&[1, l, d])?);
    let w = [&weights.wq, &weights.wk, &weights.wv, &weights.wo].map(|w| g.constant(w.clone()));
    let y = attention_graph(&mut g, x, w, heads, Some(mask))?;
    Ok(TokenSequence {
        tokens: g.value(y).reshape(&[l, d])?,
        coords: seq.coords.clone(),
        modality: seq.modality.clone(),
    })
}
