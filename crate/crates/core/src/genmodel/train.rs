use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{interpolate_pair, noise_from};
use super::model::{Condition, LatentPair, ModelConfig, ModelInput, VelocityModel};
use crate::numerics::{load_tensor, save_tensor, DiffGraph, NodeId, Real};
use crate::{Error, Result};

/// One training clip in latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub x1: LatentPair,
    pub cond: Condition,
}

/// A flow-matching loss term: data, conditioning, time and noise.
#[derive(Clone, Copy, Debug)]
pub struct LossItem<'a> {
    pub x1: &'a LatentPair,
    pub cond: &'a Condition,
    pub t: f64,
    pub x0: &'a LatentPair,
}

/// Records the batch flow-matching loss, the mean over every latent entry of
/// `(u(x_t) − (x1 − x0))²`. Parameters are graph parameters only when
/// `differentiable`.
pub fn build_loss_graph<T: Real>(
    model: &VelocityModel,
    g: &mut DiffGraph<T>,
    items: &[LossItem<'_>],
    differentiable: bool,
) -> Result<NodeId> {
    let mut noisy = Vec::with_capacity(items.len());
    let mut targets = Vec::with_capacity(items.len());
    for it in items {
        noisy.push(interpolate_pair(it.x0, it.x1, it.t)?);
        targets.push(it.x1.zip_map(it.x0, |a, b| a - b)?);
    }
    let inputs: Vec<ModelInput<'_>> =
        items.iter().zip(&noisy).map(|(it, x_t)| ModelInput { x_t, cond: it.cond, t: it.t }).collect();
    let fwd = model.build(g, &inputs, differentiable)?;
    let target = g.constant(model.batch_tokens(&targets.iter().collect::<Vec<_>>())?);
    let diff = g.sub(fwd.output, target)?;
    let sq = g.square(diff)?;
    g.mean(sq)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub adamw: AdamW,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl TrainState {
    pub fn new(model: &VelocityModel, seed: u64, adamw: AdamW) -> Self {
        let zeros = |n: usize| vec![0.0f64; n];
        let trainable = model.params().iter().filter(|(k, _)| model.is_trainable(k));
        let first: BTreeMap<_, _> = trainable.map(|(k, t)| (k.clone(), zeros(t.numel()))).collect();
        Self { step: 0, seed, adamw, second: first.clone(), first }
    }

    pub fn moment_shapes(&self) -> impl Iterator<Item = (&str, usize)> {
        self.first.iter().map(|(k, v)| (k.as_str(), v.len()))
    }
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One AdamW update on a batch. Times `t ~ U(0, 1)` and noise are drawn
/// from a stream keyed by `(state.seed, state.step)`.
pub fn train_step(state: &mut TrainState, model: &mut VelocityModel, batch: &[TrainSample], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut rng = step_rng(state.seed, state.step);
    let mut draws = Vec::with_capacity(batch.len());
    for s in batch {
        let t: f64 = rng.random();
        draws.push((t, noise_from(&mut rng, s.x1.shape())?));
    }
    let items: Vec<LossItem<'_>> =
        batch.iter().zip(&draws).map(|(s, (t, x0))| LossItem { x1: &s.x1, cond: &s.cond, t: *t, x0 }).collect();
    train_step_on(state, model, &items, lr)
}

/// One AdamW update on explicit loss items. A non-finite loss or gradient
/// aborts before any parameter changes.
pub fn train_step_on(
    state: &mut TrainState,
    model: &mut VelocityModel,
    items: &[LossItem<'_>],
    lr: f64,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let mut g = DiffGraph::<f32>::new();
    let loss = build_loss_graph(model, &mut g, items, true)?;
    let value = g.value(loss).item()? as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {}", state.step)));
    }
    let grads = g.backward(loss)?;

    let k = (state.step + 1) as i32;
    let a = state.adamw;
    let (c1, c2) = (1.0 - a.beta1.powi(k), 1.0 - a.beta2.powi(k));
    for (name, grad) in &grads {
        let p = model
            .params_mut()
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter '{name}'")))?;
        let m = state.first.get_mut(name).ok_or_else(|| Error::invalid(format!("no moments for '{name}'")))?;
        let v = state.second.get_mut(name).expect("moments are created together");
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            *mi = a.beta1 * *mi + (1.0 - a.beta1) * gi;
            *vi = a.beta2 * *vi + (1.0 - a.beta2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + a.eps) + a.weight_decay * *w as f64;
            *w = (*w as f64 - lr * update) as f32;
        }
    }
    state.step += 1;
    Ok(value)
}

/// Held-out flow-matching loss at `points` stratified times per sample with
/// noise fixed by `seed`.
pub fn heldout_loss(model: &VelocityModel, samples: &[TrainSample], seed: u64, points: usize) -> Result<f64> {
    if samples.is_empty() || points == 0 {
        return Err(Error::invalid("held-out evaluation needs samples and time points"));
    }
    let mut draws = Vec::with_capacity(samples.len() * points);
    for (i, s) in samples.iter().enumerate() {
        let mut rng = step_rng(seed, i as u64);
        for k in 0..points {
            let t = (k as f64 + 0.5) / points as f64;
            draws.push((i, t, noise_from(&mut rng, s.x1.shape())?));
        }
    }
    let mut total = 0.0;
    for chunk in draws.chunks(8) {
        let items: Vec<LossItem<'_>> = chunk
            .iter()
            .map(|(i, t, x0)| LossItem { x1: &samples[*i].x1, cond: &samples[*i].cond, t: *t, x0 })
            .collect();
        let mut g = DiffGraph::<f32>::new();
        let loss = build_loss_graph(model, &mut g, &items, false)?;
        total += g.value(loss).item()? as f64 * chunk.len() as f64;
    }
    let mean = total / draws.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("held-out loss".into()));
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Linear warm-up length before cosine decay.
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr`.
    pub final_lr_ratio: f64,
    pub eval_points: usize,
    pub adamw: AdamW,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 2e-3,
            steps: 2000,
            batch_size: 4,
            warmup: 100,
            final_lr_ratio: 0.05,
            eval_points: 8,
            adamw: AdamW::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1);
        let p = ((step - self.warmup) as f64 / span as f64).min(1.0);
        let floor = self.final_lr_ratio * self.lr;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_heldout: f64,
    pub final_heldout: f64,
    pub losses: Vec<f64>,
}

/// Runs `cfg.steps` updates on minibatches drawn without replacement from
/// `train`, evaluating held-out loss before and after.
pub fn train(
    model: &mut VelocityModel,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &[TrainSample],
    heldout: &[TrainSample],
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::invalid("training needs samples and a positive batch size"));
    }
    let eval_seed = cfg.seed ^ 0xE7A1;
    let initial_heldout = heldout_loss(model, heldout, eval_seed, cfg.eval_points)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let bs = cfg.batch_size.min(train.len());
    for step in 0..cfg.steps {
        let mut rng = step_rng(cfg.seed ^ 0xBA7C, step as u64);
        let picks = rand::seq::index::sample(&mut rng, train.len(), bs);
        let batch: Vec<TrainSample> = picks.iter().map(|i| train[i].clone()).collect();
        let loss = train_step(state, model, &batch, cfg.lr_at(step))?;
        on_step(step, loss);
        losses.push(loss);
    }
    let final_heldout = heldout_loss(model, heldout, eval_seed, cfg.eval_points)?;
    Ok(TrainReport { initial_heldout, final_heldout, losses })
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    params: Vec<ParamEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json` and one TNSR file per parameter into `dir`.
pub fn save_checkpoint(dir: &Path, model: &VelocityModel, metadata: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    for (name, t) in model.params() {
        let file = format!("{name}.tnsr");
        save_tensor(dir.join(&file), t)?;
        params.push(ParamEntry { name: name.clone(), file, shape: t.shape().to_vec() });
    }
    let manifest = Manifest { config: model.config().clone(), params, metadata };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Loads a checkpoint and its free-form metadata.
pub fn load_checkpoint(dir: &Path) -> Result<(VelocityModel, serde_json::Value)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut params = BTreeMap::new();
    for e in manifest.params {
        if e.file.contains(['/', '\\']) {
            return Err(Error::Format(format!("parameter file '{}' escapes the checkpoint", e.file)));
        }
        let t = load_tensor(dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Format(format!("'{}' has shape {:?}, manifest says {:?}", e.name, t.shape(), e.shape)));
        }
        params.insert(e.name, t);
    }
    Ok((VelocityModel::from_parts(manifest.config, params)?, manifest.metadata))
}
