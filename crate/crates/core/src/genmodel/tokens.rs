use serde::{Deserialize, Serialize};

use crate::numerics::{DiffGraph, NodeId, Real, Tensor};
use crate::sixd::{LatentGrid, Modality};
use crate::{Error, Result};

/// Patch extents `(pt, ph, pw)`.
pub type Patch = [usize; 3];

/// Flat tokens with their patch-grid coordinates and modality tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    /// `L×D`.
    pub tokens: Tensor,
    pub coords: Vec<[usize; 3]>,
    pub modality: Vec<Modality>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        if self.tokens.rank() != 2 {
            return Err(Error::shape(format!("tokens must be L×D, got {:?}", self.tokens.shape())));
        }
        if self.coords.len() != self.len() {
            return Err(Error::invalid(format!("{} tokens but {} coordinates", self.len(), self.coords.len())));
        }
        if self.modality.len() != self.len() {
            return Err(Error::invalid(format!("{} tokens but {} modality tags", self.len(), self.modality.len())));
        }
        Ok(())
    }
}

/// Patch grid `(T/pt, H/ph, W/pw)` of a `T×C×H×W` shape.
pub fn patch_grid(shape: &[usize], patch: Patch) -> Result<[usize; 3]> {
    if shape.len() != 4 {
        return Err(Error::shape(format!("expected T×C×H×W, got {shape:?}")));
    }
    let mut grid = [0; 3];
    for (g, (&e, &p)) in grid.iter_mut().zip([shape[0], shape[2], shape[3]].iter().zip(&patch)) {
        if p == 0 || e % p != 0 {
            return Err(Error::shape(format!("extents {shape:?} are not divisible by patch {patch:?}")));
        }
        *g = e / p;
    }
    Ok(grid)
}

/// `T×C×H×W` to `L×(C·pt·ph·pw)` in raster patch order; features are ordered
/// channel-major, then `dt`, `dh`, `dw`.
pub fn patchify_tensor<T: Real>(x: &Tensor<T>, patch: Patch) -> Result<Tensor<T>> {
    let s = x.shape();
    let [gt, gh, gw] = patch_grid(s, patch)?;
    let [pt, ph, pw] = patch;
    let c = s[1];
    x.reshape(&[gt, pt, c, gh, ph, gw, pw])?.permute(&[0, 3, 5, 2, 1, 4, 6])?.reshape(&[gt * gh * gw, c * pt * ph * pw])
}

/// Inverse of [`patchify_tensor`] for a target shape `T×C×H×W`.
pub fn unpatchify_tensor<T: Real>(tokens: &Tensor<T>, patch: Patch, shape: &[usize]) -> Result<Tensor<T>> {
    let [gt, gh, gw] = patch_grid(shape, patch)?;
    let [pt, ph, pw] = patch;
    let c = shape[1];
    if tokens.shape() != [gt * gh * gw, c * pt * ph * pw] {
        return Err(Error::shape(format!("tokens {:?} do not fill {shape:?} with patch {patch:?}", tokens.shape())));
    }
    tokens.reshape(&[gt, gh, gw, c, pt, ph, pw])?.permute(&[0, 4, 3, 1, 5, 2, 6])?.reshape(shape)
}

pub(crate) fn grid_coords(grid: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(grid.iter().product());
    for t in 0..grid[0] {
        for h in 0..grid[1] {
            for w in 0..grid[2] {
                out.push([t, h, w]);
            }
        }
    }
    out
}

pub fn patchify(latent: &LatentGrid, patch: Patch) -> Result<TokenSequence> {
    let tokens = patchify_tensor(latent.tensor(), patch)?;
    let coords = grid_coords(patch_grid(latent.shape(), patch)?);
    let modality = vec![latent.modality(); coords.len()];
    Ok(TokenSequence { tokens, coords, modality })
}

/// Reassembles a single-modality sequence into a `T×C×H×W` latent.
pub fn unpatchify(seq: &TokenSequence, patch: Patch, shape: &[usize]) -> Result<LatentGrid> {
    seq.validate()?;
    let Some(&m) = seq.modality.first() else {
        return Err(Error::invalid("cannot unpatchify an empty sequence"));
    };
    if seq.modality.iter().any(|&x| x != m) {
        return Err(Error::invalid("unpatchify needs a single-modality sequence"));
    }
    LatentGrid::new(unpatchify_tensor(&seq.tokens, patch, shape)?, m)
}

/// Learnable per-modality vectors added after the rotary encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainEmbeddings {
    pub rgb: Vec<f32>,
    pub xyz: Vec<f32>,
}

impl DomainEmbeddings {
    pub fn get(&self, m: Modality) -> &[f32] {
        match m {
            Modality::Rgb => &self.rgb,
            Modality::Xyz => &self.xyz,
        }
    }
}

/// Rotary encoding over `(t, h, w)`. Every head's dimension is split into
/// rotation pairs, and the pairs are divided among the three axes as evenly
/// as possible (earlier axes take the remainder).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rope {
    pub width: usize,
    pub heads: usize,
    pub base: f64,
}

impl Rope {
    pub fn new(width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) || !(width / heads).is_multiple_of(2) || width / heads < 6 {
            return Err(Error::invalid(format!(
                "rotary encoding needs an even head dimension of at least 6 (width {width}, heads {heads})"
            )));
        }
        Ok(Self { width, heads, base: 10_000.0 })
    }

    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Pair counts per axis within one head.
    pub fn groups(&self) -> [usize; 3] {
        let pairs = self.head_dim() / 2;
        let (q, r) = (pairs / 3, pairs % 3);
        [q + usize::from(r > 0), q + usize::from(r > 1), q]
    }

    /// Rotation angle of every pair in one head at `coord`.
    pub fn angles(&self, coord: [usize; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.head_dim() / 2);
        for (axis, &n) in self.groups().iter().enumerate() {
            for k in 0..n {
                let freq = self.base.powf(-(k as f64) / n as f64);
                out.push(coord[axis] as f64 * freq);
            }
        }
        out
    }

    /// Rotates one `width`-long token in place.
    pub fn rotate(&self, x: &mut [f64], coord: [usize; 3]) {
        let angles = self.angles(coord);
        let hd = self.head_dim();
        for head in 0..self.heads {
            for (p, a) in angles.iter().enumerate() {
                let (i, j) = (head * hd + 2 * p, head * hd + 2 * p + 1);
                let (s, c) = a.sin_cos();
                let (xi, xj) = (x[i], x[j]);
                x[i] = xi * c - xj * s;
                x[j] = xi * s + xj * c;
            }
        }
    }

    /// `(cos, sin)` tables of shape `L×width` for the graph form
    /// `x ⊙ cos + (x·S) ⊙ sin`.
    pub fn tables<T: Real>(&self, coords: &[[usize; 3]]) -> Result<(Tensor<T>, Tensor<T>)> {
        let hd = self.head_dim();
        let mut cos = Vec::with_capacity(coords.len() * self.width);
        let mut sin = Vec::with_capacity(coords.len() * self.width);
        for &c in coords {
            let angles = self.angles(c);
            for _ in 0..self.heads {
                for d in 0..hd {
                    let (s, co) = angles[d / 2].sin_cos();
                    cos.push(T::of(co));
                    sin.push(T::of(s));
                }
            }
        }
        Ok((Tensor::new(vec![coords.len(), self.width], cos)?, Tensor::new(vec![coords.len(), self.width], sin)?))
    }

    /// Pair-swap matrix `S` with `(x·S)[2p] = −x[2p+1]`, `(x·S)[2p+1] = x[2p]`.
    pub fn swap_matrix<T: Real>(&self) -> Tensor<T> {
        let n = self.width;
        let mut m = vec![T::zero(); n * n];
        for p in 0..n / 2 {
            m[(2 * p + 1) * n + 2 * p] = T::of(-1.0);
            m[(2 * p) * n + 2 * p + 1] = T::one();
        }
        Tensor::from_parts(vec![n, n], m)
    }

    /// Records the rotation of `x` (`…×L×width`) on the tape.
    pub fn apply_graph<T: Real>(&self, g: &mut DiffGraph<T>, x: NodeId, coords: &[[usize; 3]]) -> Result<NodeId> {
        let (cos, sin) = self.tables::<T>(coords)?;
        let (cos, sin) = (g.constant(cos), g.constant(sin));
        let swap = g.constant(self.swap_matrix());
        let xs = g.matmul(x, swap)?;
        let a = g.mul(x, cos)?;
        let b = g.mul(xs, sin)?;
        g.add(a, b)
    }
}

/// `RoPE(x) + e_modality` for every token.
pub fn encode_tokens(seq: &TokenSequence, emb: &DomainEmbeddings, rope: &Rope) -> Result<TokenSequence> {
    seq.validate()?;
    let d = seq.width();
    if d != rope.width || emb.rgb.len() != d || emb.xyz.len() != d {
        return Err(Error::shape(format!(
            "token width {d}, rotary width {}, embeddings {}/{}",
            rope.width,
            emb.rgb.len(),
            emb.xyz.len()
        )));
    }
    let mut out = Vec::with_capacity(seq.tokens.numel());
    let mut row = vec![0.0f64; d];
    for (i, tok) in seq.tokens.data().chunks_exact(d).enumerate() {
        for (r, &v) in row.iter_mut().zip(tok) {
            *r = v as f64;
        }
        rope.rotate(&mut row, seq.coords[i]);
        let e = emb.get(seq.modality[i]);
        out.extend(row.iter().zip(e).map(|(&r, &e)| (r + e as f64) as f32));
    }
    Ok(TokenSequence {
        tokens: Tensor::new(seq.tokens.shape().to_vec(), out)?,
        coords: seq.coords.clone(),
        modality: seq.modality.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn patchify_shapes_and_roundtrip() {
        let x = LatentGrid::new(random(&[2, 4, 8, 8], 1), Modality::Rgb).unwrap();
        let seq = patchify(&x, [1, 2, 2]).unwrap();
        assert_eq!(seq.tokens.shape(), &[32, 16]);
        assert_eq!(seq.coords[5], [0, 1, 1]);
        let back = unpatchify(&seq, [1, 2, 2], x.shape()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn unit_patch_gives_latent_columns() {
        let x = LatentGrid::new(random(&[1, 3, 2, 2], 2), Modality::Xyz).unwrap();
        let seq = patchify(&x, [1, 1, 1]).unwrap();
        for (l, &[_, h, w]) in seq.coords.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(seq.tokens.get(&[l, c]).unwrap(), x.tensor().get(&[0, c, h, w]).unwrap());
            }
        }
    }

    #[test]
    fn indivisible_patch_rejected() {
        let x = LatentGrid::new(random(&[2, 1, 3, 4], 3), Modality::Rgb).unwrap();
        assert!(patchify(&x, [1, 2, 2]).is_err());
        assert!(patchify(&x, [0, 1, 1]).is_err());
    }

    #[test]
    fn rope_groups() {
        assert_eq!(Rope::new(64, 4).unwrap().groups(), [3, 3, 2]);
        assert_eq!(Rope::new(12, 1).unwrap().groups(), [2, 2, 2]);
        assert!(Rope::new(64, 3).is_err());
        assert!(Rope::new(8, 2).is_err());
    }

    fn emb(d: usize, seed: u64) -> DomainEmbeddings {
        let r = random(&[2, d], seed);
        DomainEmbeddings { rgb: r.data()[..d].to_vec(), xyz: r.data()[d..].to_vec() }
    }

    #[test]
    fn origin_token_only_gets_embedding() {
        let rope = Rope::new(16, 2).unwrap();
        let e = emb(16, 4);
        let tokens = random(&[1, 16], 5);
        let seq = TokenSequence { tokens: tokens.clone(), coords: vec![[0, 0, 0]], modality: vec![Modality::Xyz] };
        let out = encode_tokens(&seq, &e, &rope).unwrap();
        for d in 0..16 {
            assert_eq!(out.tokens.data()[d], tokens.data()[d] + e.xyz[d]);
        }
    }

    #[test]
    fn modality_difference_is_embedding_difference() {
        let rope = Rope::new(16, 2).unwrap();
        let e = emb(16, 6);
        let tok = random(&[1, 16], 7);
        let tokens = Tensor::concat(&[&tok, &tok], 0).unwrap();
        let seq = TokenSequence { tokens, coords: vec![[1, 2, 3]; 2], modality: vec![Modality::Rgb, Modality::Xyz] };
        let out = encode_tokens(&seq, &e, &rope).unwrap();
        for d in 0..16 {
            let diff = out.tokens.data()[d] - out.tokens.data()[16 + d];
            assert!((diff - (e.rgb[d] - e.xyz[d])).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_preserves_norm_and_relative_logits() {
        let rope = Rope::new(24, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rot = |v: &[f64], c| {
            let mut v = v.to_vec();
            rope.rotate(&mut v, c);
            v
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let qa = rot(&q, [1, 2, 3]);
        assert!((dot(&qa, &qa) - dot(&q, &q)).abs() < 1e-12);
        let l1 = dot(&rot(&q, [1, 2, 3]), &rot(&k, [2, 5, 4]));
        let l2 = dot(&rot(&q, [4, 0, 7]), &rot(&k, [5, 3, 8]));
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn graph_rotation_matches_direct() {
        let rope = Rope::new(12, 2).unwrap();
        let coords = vec![[0, 1, 2], [3, 0, 1]];
        let x = random(&[2, 12], 9).cast::<f64>();
        let mut g = DiffGraph::<f64>::new();
        let xn = g.constant(x.clone());
        let y = rope.apply_graph(&mut g, xn, &coords).unwrap();
        for (l, &c) in coords.iter().enumerate() {
            let mut row = x.data()[l * 12..(l + 1) * 12].to_vec();
            rope.rotate(&mut row, c);
            for (d, r) in row.iter().enumerate() {
                assert!((g.value(y).data()[l * 12 + d] - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_rejects_missing_coords() {
        let rope = Rope::new(12, 2).unwrap();
        let seq =
            TokenSequence { tokens: random(&[2, 12], 1), coords: vec![[0, 0, 0]], modality: vec![Modality::Rgb; 2] };
        assert!(encode_tokens(&seq, &emb(12, 1), &rope).is_err());
    }
}
