use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Condition, LatentPair};
use super::train::TrainSample;
use crate::numerics::Tensor;
use crate::sixd::{
    build_guided_mask, compute_norm_stats, init_xyz, normalize_latent, normalize_scene_extent, Direction, LatentCodec,
    LatentGrid, Modality, NormStats, SixDVideo,
};
use crate::{Error, Result};

/// A colored square sliding at constant velocity over the sloped initial
/// plane, raised toward the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Largest per-axis displacement in pixels per frame.
    pub max_speed: f64,
    /// Depth offset of the quad relative to the plane.
    pub lift: f32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { frames: 5, height: 32, width: 32, min_size: 8, max_size: 14, max_speed: 3.0, lift: 0.5 }
    }
}

pub fn moving_quad_video(cfg: &QuadConfig, rng: &mut ChaCha8Rng) -> Result<SixDVideo> {
    let (t, h, w) = (cfg.frames, cfg.height, cfg.width);
    if cfg.min_size == 0 || cfg.min_size > cfg.max_size || cfg.max_size >= h.min(w) || t == 0 {
        return Err(Error::invalid("quad size must be positive and smaller than the frame"));
    }
    let size = rng.random_range(cfg.min_size..=cfg.max_size);
    let travel = (t - 1) as f64;
    let mut start = [0.0; 2];
    let mut vel = [0.0; 2];
    for (axis, extent) in [h, w].into_iter().enumerate() {
        let room = (extent - size) as f64;
        let vmax = cfg.max_speed.min(room / travel.max(1.0));
        vel[axis] = rng.random_range(-vmax..=vmax);
        let lo = (-vel[axis] * travel).max(0.0);
        let hi = (room - vel[axis] * travel).min(room);
        start[axis] = rng.random_range(lo..=hi.max(lo));
    }
    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.45));
    let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.55..1.0));
    let plane = init_xyz(h, w)?;

    let mut rgb = Vec::with_capacity(t * h * w * 3);
    let mut xyz = Vec::with_capacity(t * h * w * 3);
    for f in 0..t {
        let top = (start[0] + vel[0] * f as f64).round() as usize;
        let left = (start[1] + vel[1] * f as f64).round() as usize;
        for i in 0..h {
            for j in 0..w {
                let inside = (top..top + size).contains(&i) && (left..left + size).contains(&j);
                let shade = 0.15 * i as f32 / (h - 1) as f32;
                for c in 0..3 {
                    rgb.push(if inside { fg[c] } else { (bg[c] + shade).min(1.0) });
                    let p = plane.data()[(i * w + j) * 3 + c];
                    xyz.push(if inside && c == 2 { p - cfg.lift } else { p });
                }
            }
        }
    }
    SixDVideo::new(Tensor::new(vec![t, h, w, 3], rgb)?, Tensor::new(vec![t, h, w, 3], xyz)?)
}

pub fn moving_quad_dataset(cfg: &QuadConfig, count: usize, seed: u64) -> Result<Vec<SixDVideo>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| moving_quad_video(cfg, &mut rng)).collect()
}

/// Maps 6D videos to model latents and back. RGB is shifted to `[-1, 1]`
/// before encoding; XYZ is scene-normalized per clip, encoded and then
/// standardized with `stats`.
#[derive(Clone, Debug)]
pub struct LatentPipeline {
    pub codec: LatentCodec,
    pub stats: NormStats,
}

impl LatentPipeline {
    /// Fits normalization statistics on the XYZ latents of `videos`.
    pub fn fit(codec: LatentCodec, videos: &[SixDVideo]) -> Result<Self> {
        let latents: Vec<LatentGrid> = videos
            .iter()
            .map(|v| {
                let (xyz, _) = normalize_scene_extent(v.xyz())?;
                codec.encode(&xyz, Modality::Xyz)
            })
            .collect::<Result<_>>()?;
        let stats = compute_norm_stats(&latents)?;
        Ok(Self { codec, stats })
    }

    fn encode_rgb(&self, rgb: &Tensor) -> Result<Tensor> {
        Ok(self.codec.encode(&rgb.map(|v| 2.0 * v - 1.0), Modality::Rgb)?.into_tensor())
    }

    fn encode_xyz(&self, xyz: &Tensor) -> Result<Tensor> {
        let z = self.codec.encode(xyz, Modality::Xyz)?;
        Ok(normalize_latent(z.tensor(), &self.stats, Direction::Forward))
    }

    pub fn encode(&self, video: &SixDVideo) -> Result<LatentPair> {
        let (xyz, _) = normalize_scene_extent(video.xyz())?;
        LatentPair::new(self.encode_rgb(video.rgb())?, self.encode_xyz(&xyz)?)
    }

    /// Conditioning from a first frame (`H×W×3`) for a `frames`-long clip.
    pub fn condition(&self, first_frame: &Tensor, frames: usize) -> Result<Condition> {
        if first_frame.rank() != 3 || first_frame.shape()[2] != 3 {
            return Err(Error::shape(format!("first frame must be H×W×3, got {:?}", first_frame.shape())));
        }
        let (h, w) = (first_frame.shape()[0], first_frame.shape()[1]);
        let pad = |frame0: &Tensor| -> Result<Tensor> {
            let rest = Tensor::zeros(&[frames - 1, h, w, 3])?;
            Tensor::concat(&[&frame0.reshape(&[1, h, w, 3])?, &rest], 0)
        };
        if frames == 0 {
            return Err(Error::invalid("clip must have at least one frame"));
        }
        let keep_first = |z: Tensor| -> Result<Tensor> {
            let s = z.shape().to_vec();
            let head = z.narrow(0, 0, 1)?;
            if s[0] == 1 {
                return Ok(head);
            }
            let tail = Tensor::zeros(&[s[0] - 1, s[1], s[2], s[3]])?;
            Tensor::concat(&[&head, &tail], 0)
        };
        let image = LatentPair::new(
            keep_first(self.encode_rgb(&pad(first_frame)?)?)?,
            keep_first(self.encode_xyz(&pad(&init_xyz(h, w)?)?)?)?,
        )?;
        let mask = build_guided_mask(frames, h, w)?;
        let cfg = self.codec.config();
        Ok(Condition {
            image,
            mask_rgb: mask.pooled(Modality::Rgb, &cfg)?,
            mask_xyz: mask.pooled(Modality::Xyz, &cfg)?,
        })
    }

    pub fn sample(&self, video: &SixDVideo) -> Result<TrainSample> {
        Ok(TrainSample { x1: self.encode(video)?, cond: self.condition(&video.first_frame(), video.frames())? })
    }

    /// Decodes a latent pair to a 6D video, clamping RGB into `[0, 1]`.
    pub fn decode(&self, pair: &LatentPair) -> Result<SixDVideo> {
        let rgb = self.codec.decode(&LatentGrid::new(pair.rgb.clone(), Modality::Rgb)?)?;
        let xyz = normalize_latent(&pair.xyz, &self.stats, Direction::Inverse);
        let xyz = self.codec.decode(&LatentGrid::new(xyz, Modality::Xyz)?)?;
        SixDVideo::new(rgb.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)), xyz)
    }
}
