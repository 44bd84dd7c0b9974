use serde::{Deserialize, Serialize};

use super::{LatentGrid, Modality};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Scalar mean and standard deviation of XYZ latents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Reference values measured on pretrained-VAE latents of real XYZ
    /// videos. They do not describe this crate's codec.
    pub const REFERENCE: NormStats = NormStats { mean: -0.13, std: 1.70 };

    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::invalid(format!("invalid normalization stats (mean {mean}, std {std})")));
        }
        Ok(Self { mean, std })
    }
}

/// Population mean and std over every entry of every latent.
pub fn compute_norm_stats(latents: &[LatentGrid]) -> Result<NormStats> {
    if latents.is_empty() {
        return Err(Error::invalid("compute_norm_stats needs at least one latent"));
    }
    if let Some(l) = latents.iter().find(|l| l.modality() != Modality::Xyz) {
        return Err(Error::invalid(format!("normalization stats are computed on xyz latents, got {:?}", l.modality())));
    }
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for l in latents {
        n += l.tensor().numel();
        sum += l.tensor().sum_f64();
    }
    let mean = sum / n as f64;
    let var = latents.iter().flat_map(|l| l.tensor().data().iter()).map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
        / n as f64;
    if !mean.is_finite() || !var.is_finite() {
        return Err(Error::NonFinite("latent statistics".into()));
    }
    NormStats::new(mean, var.sqrt().max(STD_FLOOR))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn normalize_latent(latent: &Tensor, stats: &NormStats, direction: Direction) -> Tensor {
    let (m, s) = (stats.mean, stats.std);
    match direction {
        Direction::Forward => latent.map(|v| ((v as f64 - m) / s) as f32),
        Direction::Inverse => latent.map(|v| (v as f64 * s + m) as f32),
    }
}
