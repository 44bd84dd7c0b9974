use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{additive_mask, attention_graph, cross_mask, lora_graph, CdsaMode};
use super::tokens::{grid_coords, patch_grid, patchify_tensor, unpatchify_tensor, Patch, Rope};
use crate::fusion::{fuse, unfuse, FusedLatent, FusionKind, FusionStrategy};
use crate::numerics::{DiffGraph, NodeId, Real, Tensor, Unary};
use crate::sixd::{LatentGrid, Modality};
use crate::{Error, Result};

/// An RGB latent and an XYZ latent of identical `T×C×H×W` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub rgb: Tensor,
    pub xyz: Tensor,
}

impl LatentPair {
    pub fn new(rgb: Tensor, xyz: Tensor) -> Result<Self> {
        if rgb.rank() != 4 || rgb.shape() != xyz.shape() {
            return Err(Error::shape(format!(
                "latent pair needs equal T×C×H×W shapes, got {:?} and {:?}",
                rgb.shape(),
                xyz.shape()
            )));
        }
        Ok(Self { rgb, xyz })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(Tensor::zeros(shape)?, Tensor::zeros(shape)?)
    }

    pub fn shape(&self) -> &[usize] {
        self.rgb.shape()
    }

    pub fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Rgb => &self.rgb,
            Modality::Xyz => &self.xyz,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32 + Copy) -> Result<Self> {
        Self::new(self.rgb.zip_map(&other.rgb, f)?, self.xyz.zip_map(&other.xyz, f)?)
    }

    pub fn all_finite(&self) -> bool {
        self.rgb.all_finite() && self.xyz.all_finite()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.rgb.max_abs_diff(&other.rgb)?.max(self.xyz.max_abs_diff(&other.xyz)?))
    }

    pub(crate) fn fused(&self, strategy: FusionStrategy) -> Result<FusedLatent> {
        fuse(
            &LatentGrid::new(self.rgb.clone(), Modality::Rgb)?,
            &LatentGrid::new(self.xyz.clone(), Modality::Xyz)?,
            strategy,
        )
    }
}

/// Conditioning for one clip: the encoded first frame and initial XYZ plane
/// (later latent frames zero) plus the pooled guided masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub image: LatentPair,
    /// `T×M×H×W` pooled masks, `M` = frames per latent step.
    pub mask_rgb: Tensor,
    pub mask_xyz: Tensor,
}

impl Condition {
    fn mask(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Rgb => &self.mask_rgb,
            Modality::Xyz => &self.mask_xyz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    /// Every parameter is updated.
    #[default]
    All,
    /// Only LoRA factors are updated.
    LoraOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub mask_channels: usize,
    pub patch: Patch,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    pub time_dim: usize,
    pub strategy: FusionStrategy,
    pub cdsa: Option<CdsaMode>,
    pub lora: Option<LoraConfig>,
    pub trainable: Trainable,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 768,
            mask_channels: 4,
            patch: [1, 2, 2],
            width: 64,
            heads: 4,
            blocks: 4,
            ffn_mult: 4,
            time_dim: 32,
            strategy: FusionStrategy::new(FusionKind::Width),
            cdsa: None,
            lora: None,
            trainable: Trainable::All,
            seed: 0,
        }
    }
}

const SWITCH_DIM: usize = 2;
const NORM_EPS: f64 = 1e-6;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        Rope::new(self.width, self.heads)?;
        if self.latent_channels == 0 || self.blocks == 0 || self.ffn_mult == 0 {
            return Err(Error::invalid("latent channels, blocks and ffn_mult must be positive"));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("time_dim must be even, got {}", self.time_dim)));
        }
        if self.patch.contains(&0) {
            return Err(Error::invalid("patch extents must be positive"));
        }
        if self.cdsa.is_some() && self.strategy.kind != FusionKind::Batch {
            return Err(Error::invalid("cross-domain attention requires the batch strategy"));
        }
        if let Some(l) = self.lora {
            if l.rank == 0 || l.rank > self.width || !l.scale.is_finite() {
                return Err(Error::invalid(format!("invalid LoRA rank {} / scale {}", l.rank, l.scale)));
            }
        }
        if self.trainable == Trainable::LoraOnly && self.lora.is_none() {
            return Err(Error::invalid("lora_only training needs LoRA adapters"));
        }
        Ok(())
    }

    fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }

    fn joint(&self) -> usize {
        if self.strategy.kind == FusionKind::Channel {
            2
        } else {
            1
        }
    }

    /// Input features per token.
    pub fn token_in(&self) -> usize {
        self.joint() * (2 * self.latent_channels + self.mask_channels) * self.patch_volume()
    }

    /// Output features per token.
    pub fn token_out(&self) -> usize {
        self.joint() * self.latent_channels * self.patch_volume()
    }

    pub fn rope(&self) -> Rope {
        Rope::new(self.width, self.heads).expect("validated")
    }
}

/// Per-token modality tags (`None` for merged channel tokens) and shared
/// `(t, h, w)` coordinates of a fused layout, in sequence order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    pub tags: Vec<Option<Modality>>,
    pub coords: Vec<[usize; 3]>,
}

/// Token order produced by patchifying the fused latent. An XYZ token reuses
/// the coordinate of its RGB partner.
pub fn token_layout(strategy: FusionStrategy, grid: [usize; 3]) -> TokenLayout {
    let order = if strategy.rgb_first { [Modality::Rgb, Modality::Xyz] } else { [Modality::Xyz, Modality::Rgb] };
    let base = grid_coords(grid);
    match strategy.kind {
        FusionKind::Channel => TokenLayout { tags: vec![None; base.len()], coords: base },
        FusionKind::Batch => TokenLayout {
            tags: [vec![Some(order[0]); base.len()], vec![Some(order[1]); base.len()]].concat(),
            coords: [base.clone(), base].concat(),
        },
        kind => {
            let axis = match kind {
                FusionKind::Frame => 0,
                FusionKind::Height => 1,
                _ => 2,
            };
            let mut fused = grid;
            fused[axis] *= 2;
            let mut layout = TokenLayout { tags: Vec::new(), coords: Vec::new() };
            for mut c in grid_coords(fused) {
                let half = c[axis] / grid[axis];
                c[axis] %= grid[axis];
                layout.tags.push(Some(order[half]));
                layout.coords.push(c);
            }
            layout
        }
    }
}

/// Sinusoidal embedding of `t ∈ [0, 1]`.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out.push((1000.0 * t * freq).sin());
    }
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out.push((1000.0 * t * freq).cos());
    }
    out
}

/// One model evaluation: noisy latent, its conditioning and time.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub x_t: &'a LatentPair,
    pub cond: &'a Condition,
    pub t: f64,
}

/// The transformer velocity predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

const ATTN_WEIGHTS: [&str; 4] = ["wq", "wk", "wv", "wo"];

pub(crate) struct Forward {
    /// `B×L×D_out` velocity tokens.
    pub output: NodeId,
}

impl VelocityModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = BTreeMap::new();
        let (d, f) = (config.width, config.width * config.ffn_mult);
        let mut add = |name: String, shape: &[usize], std: f64| -> Result<()> {
            let t = if std == 0.0 {
                Tensor::zeros(shape)?
            } else {
                let dist = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| dist.sample(&mut rng) as f32)?
            };
            params.insert(name, t);
            Ok(())
        };
        let ones = |shape: &[usize]| Tensor::full(shape, 1.0f32);
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        add("embed.w".into(), &[d, config.token_in()], fan(config.token_in()))?;
        add("embed.b".into(), &[d], 0.0)?;
        add("domain.rgb".into(), &[d], 0.02)?;
        add("domain.xyz".into(), &[d], 0.02)?;
        add("text".into(), &[d], 0.02)?;
        add("time.w1".into(), &[d, config.time_dim + SWITCH_DIM], fan(config.time_dim + SWITCH_DIM))?;
        add("time.b1".into(), &[d], 0.0)?;
        add("time.w2".into(), &[d, d], fan(d))?;
        add("time.b2".into(), &[d], 0.0)?;
        for i in 0..config.blocks {
            let p = format!("blocks.{i}");
            for w in ATTN_WEIGHTS {
                add(format!("{p}.attn.{w}"), &[d, d], fan(d))?;
            }
            if config.cdsa.is_some() {
                for w in ATTN_WEIGHTS {
                    add(format!("{p}.cdsa.{w}"), &[d, d], fan(d))?;
                }
            }
            add(format!("{p}.ffn.w1"), &[f, d], fan(d))?;
            add(format!("{p}.ffn.b1"), &[f], 0.0)?;
            add(format!("{p}.ffn.w2"), &[d, f], fan(f))?;
            add(format!("{p}.ffn.b2"), &[d], 0.0)?;
        }
        add("head.w".into(), &[config.token_out(), d], 0.1 * fan(d))?;
        add("head.b".into(), &[config.token_out()], 0.0)?;
        add("gate.w".into(), &[1, d], 0.0)?;
        add("gate.b".into(), &[1], 0.0)?;
        for i in 0..config.blocks {
            let p = format!("blocks.{i}");
            params.insert(format!("{p}.norm1"), ones(&[d])?);
            params.insert(format!("{p}.norm2"), ones(&[d])?);
            if config.cdsa.is_some() {
                params.insert(format!("{p}.norm_c"), ones(&[d])?);
            }
        }
        params.insert("final.norm".into(), ones(&[d])?);

        let mut model = Self { config, params };
        if let Some(l) = model.config.lora {
            model.config.lora = None;
            model.add_lora(l, model.config.seed ^ 0x10AA)?;
        }
        Ok(model)
    }

    /// Attaches rank-`r` adapters to every attention projection with `A`
    /// random and `B` zero, so outputs are unchanged.
    pub fn add_lora(&mut self, lora: LoraConfig, seed: u64) -> Result<()> {
        if self.config.lora.is_some() {
            return Err(Error::invalid("model already has LoRA adapters"));
        }
        let mut cfg = self.config.clone();
        cfg.lora = Some(lora);
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.width;
        let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        for name in self.adapted_weights() {
            let a = Tensor::from_fn(&[lora.rank, d], |_| dist.sample(&mut rng) as f32)?;
            self.params.insert(format!("{name}.lora_a"), a);
            self.params.insert(format!("{name}.lora_b"), Tensor::zeros(&[d, lora.rank])?);
        }
        self.config = cfg;
        Ok(())
    }

    fn adapted_weights(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.config.blocks {
            let kinds: &[&str] = if self.config.cdsa.is_some() { &["attn", "cdsa"] } else { &["attn"] };
            for k in kinds {
                for w in ATTN_WEIGHTS {
                    out.push(format!("blocks.{i}.{k}.{w}"));
                }
            }
        }
        out
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        let reference = Self::new(config.clone())?;
        for (name, t) in &reference.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::shape(format!(
                        "parameter '{name}' has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::invalid(format!("missing parameter '{name}'"))),
            }
        }
        if let Some(extra) = params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(Error::invalid(format!("unexpected parameter '{extra}'")));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        match self.config.trainable {
            Trainable::All => true,
            Trainable::LoraOnly => name.contains(".lora_"),
        }
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<[usize; 4]> {
        let shape: [usize; 4] = input.x_t.shape().try_into().map_err(|_| Error::shape("latent must be rank 4"))?;
        if shape[1] != self.config.latent_channels {
            return Err(Error::shape(format!(
                "latent has {} channels, model expects {}",
                shape[1], self.config.latent_channels
            )));
        }
        if input.cond.image.shape() != shape {
            return Err(Error::shape("condition latent does not match the noisy latent"));
        }
        let mshape = [shape[0], self.config.mask_channels, shape[2], shape[3]];
        if input.cond.mask_rgb.shape() != mshape || input.cond.mask_xyz.shape() != mshape {
            return Err(Error::shape(format!("masks must be {mshape:?}")));
        }
        if !(0.0..=1.0).contains(&input.t) {
            return Err(Error::invalid(format!("time {} outside [0, 1]", input.t)));
        }
        Ok(shape)
    }

    /// Tokens of a fused latent pair, `L×features`, in layout order.
    fn tokens_of(&self, pair: &LatentPair) -> Result<Tensor> {
        let fused = pair.fused(self.config.strategy)?;
        if self.config.strategy.kind == FusionKind::Batch {
            let s = fused.source_shape;
            let halves = fused.tensor.split(0, &[1, 1])?;
            let a = patchify_tensor(&halves[0].reshape(&s)?, self.config.patch)?;
            let b = patchify_tensor(&halves[1].reshape(&s)?, self.config.patch)?;
            Tensor::concat(&[&a, &b], 0)
        } else {
            patchify_tensor(&fused.tensor, self.config.patch)
        }
    }

    /// Inverse of [`tokens_of`](Self::tokens_of) for one sample.
    pub(crate) fn pair_from_tokens(&self, tokens: &Tensor, shape: [usize; 4]) -> Result<LatentPair> {
        let strategy = self.config.strategy;
        let zero = LatentPair::zeros(&shape)?.fused(strategy)?;
        let tensor = if strategy.kind == FusionKind::Batch {
            let l = tokens.shape()[0] / 2;
            let parts = tokens.split(0, &[l, l])?;
            let a = unpatchify_tensor(&parts[0], self.config.patch, &shape)?;
            let b = unpatchify_tensor(&parts[1], self.config.patch, &shape)?;
            Tensor::concat(&[&a, &b], 0)?.reshape(zero.tensor.shape())?
        } else {
            unpatchify_tensor(tokens, self.config.patch, zero.tensor.shape())?
        };
        let (rgb, xyz) = unfuse(&FusedLatent { tensor, ..zero })?;
        LatentPair::new(rgb.into_tensor(), xyz.into_tensor())
    }

    /// Patchified velocity targets (or noisy inputs) for a batch, `B×L×D_out`.
    pub(crate) fn batch_tokens<T: Real>(&self, pairs: &[&LatentPair]) -> Result<Tensor<T>> {
        let toks: Vec<Tensor<T>> = pairs.iter().map(|p| self.tokens_of(p).map(|t| t.cast())).collect::<Result<_>>()?;
        let refs: Vec<&Tensor<T>> = toks.iter().collect();
        let (l, f) = (toks[0].shape()[0], toks[0].shape()[1]);
        Tensor::concat(&refs, 0)?.reshape(&[pairs.len(), l, f])
    }

    fn input_pair(&self, input: &ModelInput<'_>) -> Result<LatentPair> {
        let per = |m: Modality| -> Result<Tensor> {
            Tensor::concat(&[input.x_t.get(m), input.cond.image.get(m), input.cond.mask(m)], 1)
        };
        LatentPair::new(per(Modality::Rgb)?, per(Modality::Xyz)?)
    }

    /// Records the forward pass for a batch. Parameters become named graph
    /// parameters when `differentiable`, constants otherwise.
    pub(crate) fn build<T: Real>(
        &self,
        g: &mut DiffGraph<T>,
        batch: &[ModelInput<'_>],
        differentiable: bool,
    ) -> Result<Forward> {
        let Some(first) = batch.first() else {
            return Err(Error::invalid("empty batch"));
        };
        let shape = self.check_input(first)?;
        for b in batch {
            if self.check_input(b)? != shape {
                return Err(Error::shape("batch latents differ in shape"));
            }
        }
        let cfg = &self.config;
        let grid = patch_grid(&shape, cfg.patch)?;
        let layout = token_layout(cfg.strategy, grid);
        let (bsz, l, d) = (batch.len(), layout.tags.len(), cfg.width);

        let mut p = BTreeMap::new();
        for (name, t) in &self.params {
            let id = if differentiable && self.is_trainable(name) {
                g.param(name.clone(), t.cast())?
            } else {
                g.constant(t.cast())
            };
            p.insert(name.as_str(), id);
        }
        let w = |name: &str| -> Result<NodeId> {
            p.get(name).copied().ok_or_else(|| Error::invalid(format!("missing parameter '{name}'")))
        };
        let weight = |g: &mut DiffGraph<T>, name: &str| -> Result<NodeId> {
            let base = w(name)?;
            match cfg.lora {
                Some(lora) => {
                    lora_graph(g, base, w(&format!("{name}.lora_a"))?, w(&format!("{name}.lora_b"))?, lora.scale)
                }
                None => Ok(base),
            }
        };

        // Inputs.
        let inputs: Vec<LatentPair> = batch.iter().map(|b| self.input_pair(b)).collect::<Result<_>>()?;
        let x_in = g.constant(self.batch_tokens(&inputs.iter().collect::<Vec<_>>())?);
        let x_noisy = g.constant(self.batch_tokens(&batch.iter().map(|b| b.x_t).collect::<Vec<_>>())?);

        // Conditioning vector per token: time features plus a modality switch.
        let mut cond_in = Vec::with_capacity(bsz * l * (cfg.time_dim + SWITCH_DIM));
        for b in batch {
            let tf = time_features(b.t, cfg.time_dim);
            for tag in &layout.tags {
                cond_in.extend(tf.iter().map(|&v| T::of(v)));
                let switch = match (cfg.strategy.kind, tag) {
                    (FusionKind::Batch, Some(Modality::Rgb)) => [1.0, 0.0],
                    (FusionKind::Batch, Some(Modality::Xyz)) => [0.0, 1.0],
                    _ => [0.0, 0.0],
                };
                cond_in.extend(switch.map(T::of));
            }
        }
        let cond_in = g.constant(Tensor::new(vec![bsz, l, cfg.time_dim + SWITCH_DIM], cond_in)?);
        let c = g.linear(cond_in, w("time.w1")?, Some(w("time.b1")?))?;
        let c = g.silu(c)?;
        let c = g.linear(c, w("time.w2")?, Some(w("time.b2")?))?;

        // Token encoding: embed, rotate, add domain embedding and conditioning.
        let h = g.linear(x_in, w("embed.w")?, Some(w("embed.b")?))?;
        let h = cfg.rope().apply_graph(g, h, &layout.coords)?;
        let select: Vec<T> = layout
            .tags
            .iter()
            .flat_map(|t| match t {
                Some(Modality::Rgb) => [T::one(), T::zero()],
                Some(Modality::Xyz) => [T::zero(), T::one()],
                None => [T::zero(), T::zero()],
            })
            .collect();
        let select = g.constant(Tensor::new(vec![l, 2], select)?);
        let e_rgb = g.reshape(w("domain.rgb")?, &[1, d])?;
        let e_xyz = g.reshape(w("domain.xyz")?, &[1, d])?;
        let table = g.concat(&[e_rgb, e_xyz], 0)?;
        let dom = g.matmul(select, table)?;
        let h = g.add(h, dom)?;
        let h = g.add(h, c)?;
        let mut h = g.add(h, w("text")?)?;

        let self_mask = if cfg.strategy.kind == FusionKind::Batch {
            let tags = &layout.tags;
            Some(g.constant(additive_mask::<T>(l, |i, j| tags[i] == tags[j])?))
        } else {
            None
        };
        let cdsa_mask = match cfg.cdsa {
            Some(mode) => Some(g.constant(cross_mask::<T>(&layout.tags, &layout.coords, mode)?)),
            None => None,
        };

        for i in 0..cfg.blocks {
            let pre = format!("blocks.{i}");
            let a = rms_norm(g, h, w(&format!("{pre}.norm1"))?)?;
            let ws = attn_weights(g, &weight, &format!("{pre}.attn"))?;
            let a = attention_graph(g, a, ws, cfg.heads, self_mask)?;
            h = g.add(h, a)?;
            if let Some(mask) = cdsa_mask {
                let a = rms_norm(g, h, w(&format!("{pre}.norm_c"))?)?;
                let ws = attn_weights(g, &weight, &format!("{pre}.cdsa"))?;
                let a = attention_graph(g, a, ws, cfg.heads, Some(mask))?;
                h = g.add(h, a)?;
            }
            let f = rms_norm(g, h, w(&format!("{pre}.norm2"))?)?;
            let f = g.linear(f, w(&format!("{pre}.ffn.w1"))?, Some(w(&format!("{pre}.ffn.b1"))?))?;
            let f = g.gelu(f)?;
            let f = g.linear(f, w(&format!("{pre}.ffn.w2"))?, Some(w(&format!("{pre}.ffn.b2"))?))?;
            h = g.add(h, f)?;
        }

        let h = rms_norm(g, h, w("final.norm")?)?;
        let out = g.linear(h, w("head.w")?, Some(w("head.b")?))?;
        let gate = g.linear(c, w("gate.w")?, Some(w("gate.b")?))?;
        let skip = g.mul(gate, x_noisy)?;
        let output = g.add(out, skip)?;
        Ok(Forward { output })
    }

    /// Velocity for a batch, one [`LatentPair`] per input.
    pub fn velocity_batch(&self, batch: &[ModelInput<'_>]) -> Result<Vec<LatentPair>> {
        let mut g = DiffGraph::<f32>::new();
        let fwd = self.build(&mut g, batch, false)?;
        let out = g.value(fwd.output);
        if !out.all_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        let shape: [usize; 4] = batch[0].x_t.shape().try_into().expect("checked");
        let per = out.shape()[1] * out.shape()[2];
        (0..batch.len())
            .map(|b| {
                let toks =
                    Tensor::new(vec![out.shape()[1], out.shape()[2]], out.data()[b * per..(b + 1) * per].to_vec())?;
                self.pair_from_tokens(&toks, shape)
            })
            .collect()
    }
}

fn attn_weights<T: Real>(
    g: &mut DiffGraph<T>,
    weight: &impl Fn(&mut DiffGraph<T>, &str) -> Result<NodeId>,
    prefix: &str,
) -> Result<[NodeId; 4]> {
    Ok([
        weight(g, &format!("{prefix}.wq"))?,
        weight(g, &format!("{prefix}.wk"))?,
        weight(g, &format!("{prefix}.wv"))?,
        weight(g, &format!("{prefix}.wo"))?,
    ])
}

/// `x / sqrt(mean(x²) + ε) · gain` over the last axis.
pub(crate) fn rms_norm<T: Real>(g: &mut DiffGraph<T>, x: NodeId, gain: NodeId) -> Result<NodeId> {
    let sq = g.square(x)?;
    let axis = g.value(x).rank() - 1;
    let ms = g.mean_axis(sq, axis)?;
    let ms = g.add_scalar(ms, NORM_EPS)?;
    let inv = g.unary(ms, Unary::Rsqrt)?;
    let y = g.mul(x, inv)?;
    g.mul(y, gain)
}
