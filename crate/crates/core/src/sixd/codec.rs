use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Modality;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Latent tensor `T_l×C_l×H_l×W_l` tagged with the modality it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    tensor: Tensor,
    modality: Modality,
}

impl LatentGrid {
    pub fn new(tensor: Tensor, modality: Modality) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::shape(format!("latent must be T×C×H×W, got {:?}", tensor.shape())));
        }
        Ok(Self { tensor, modality })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    /// Frames per latent step after the leading frame.
    pub temporal: usize,
    /// Space-to-depth block edge.
    pub spatial: usize,
    /// Seed of the channel-mixing matrices.
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { temporal: 4, spatial: 8, seed: 0x5EED_C0DE }
    }
}

/// Deterministic invertible stand-in for a video VAE.
///
/// Frame 0 is replicated into its own temporal group and the remaining frames
/// are grouped `temporal` at a time. Each `temporal × spatial × spatial × 3`
/// block becomes a matrix `X` (rows: sub-frame and color, columns: pixel in the
/// block) and is mixed as `Q_a X Q_bᵀ` with seeded orthonormal `Q_a`, `Q_b`,
/// giving `C_l = 3 · temporal · spatial²` channels.
#[derive(Clone, Debug)]
pub struct LatentCodec {
    config: CodecConfig,
    rows: usize,
    cols: usize,
    qa: Vec<f64>,
    qb: Vec<f64>,
}

/// Gram-Schmidt orthonormalization of a seeded Gaussian matrix, row-major.
fn random_orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut q: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for i in 0..n {
            // Two passes keep the basis orthonormal to machine precision.
            for _ in 0..2 {
                for k in 0..i {
                    let dot: f64 = (0..n).map(|c| q[i * n + c] * q[k * n + c]).sum();
                    for c in 0..n {
                        q[i * n + c] -= dot * q[k * n + c];
                    }
                }
            }
            let norm = (0..n).map(|c| q[i * n + c].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for c in 0..n {
                q[i * n + c] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

impl LatentCodec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        if config.temporal == 0 || config.spatial == 0 {
            return Err(Error::invalid("codec factors must be positive"));
        }
        let rows = 3 * config.temporal;
        let cols = config.spatial * config.spatial;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let qa = random_orthonormal(rows, &mut rng);
        let qb = random_orthonormal(cols, &mut rng);
        Ok(Self { config, rows, cols, qa, qb })
    }

    pub fn config(&self) -> CodecConfig {
        self.config
    }

    pub fn latent_channels(&self) -> usize {
        self.rows * self.cols
    }

    /// `(T_l, C_l, H_l, W_l)` for a `T×H×W` video.
    pub fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 4]> {
        let (tf, s) = (self.config.temporal, self.config.spatial);
        if frames == 0 || !(frames - 1).is_multiple_of(tf) {
            return Err(Error::shape(format!("frame count {frames} must be 1 + k·{tf}")));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(Error::shape(format!("frame size {height}×{width} is not divisible by {s}")));
        }
        Ok([1 + (frames - 1) / tf, self.latent_channels(), height / s, width / s])
    }

    /// Inverse of [`latent_shape`](Self::latent_shape): `(T, H, W)`.
    pub fn video_shape(&self, latent: &[usize]) -> Result<[usize; 3]> {
        if latent.len() != 4 || latent[1] != self.latent_channels() || latent.contains(&0) {
            return Err(Error::shape(format!(
                "latent {latent:?} does not match a codec with {} channels",
                self.latent_channels()
            )));
        }
        let (tf, s) = (self.config.temporal, self.config.spatial);
        Ok([1 + (latent[0] - 1) * tf, latent[2] * s, latent[3] * s])
    }

    fn source_frame(&self, group: usize, sub: usize) -> usize {
        if group == 0 {
            0
        } else {
            1 + (group - 1) * self.config.temporal + sub
        }
    }

    /// `Y = A X Bᵀ` (or `Aᵀ X B` when `transpose`) for row-major `X`.
    fn mix(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let (r, c) = (self.rows, self.cols);
        let a = |i: usize, k: usize| if transpose { self.qa[k * r + i] } else { self.qa[i * r + k] };
        let b = |j: usize, k: usize| if transpose { self.qb[k * c + j] } else { self.qb[j * c + k] };
        let mut ax = vec![0.0; r * c];
        for i in 0..r {
            for k in 0..r {
                let aik = a(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..c {
                    ax[i * c + j] += aik * x[k * c + j];
                }
            }
        }
        let mut y = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                y[i * c + j] = (0..c).map(|k| ax[i * c + k] * b(j, k)).sum();
            }
        }
        y
    }

    /// Encodes one modality plane given as `T×H×W×3`.
    pub fn encode(&self, frames: &Tensor, modality: Modality) -> Result<LatentGrid> {
        if frames.rank() != 4 || frames.shape()[3] != 3 {
            return Err(Error::shape(format!("frames must be T×H×W×3, got {:?}", frames.shape())));
        }
        let (t, h, w) = (frames.shape()[0], frames.shape()[1], frames.shape()[2]);
        let [tl, cl, hl, wl] = self.latent_shape(t, h, w)?;
        let (tf, s) = (self.config.temporal, self.config.spatial);
        let src = frames.data();
        let mut out = vec![0.0f32; tl * cl * hl * wl];
        let mut x = vec![0.0f64; self.rows * self.cols];
        for g in 0..tl {
            for bi in 0..hl {
                for bj in 0..wl {
                    for k in 0..tf {
                        let f = self.source_frame(g, k);
                        for dy in 0..s {
                            for dx in 0..s {
                                let p = ((f * h + bi * s + dy) * w + bj * s + dx) * 3;
                                for c in 0..3 {
                                    x[(k * 3 + c) * self.cols + dy * s + dx] = src[p + c] as f64;
                                }
                            }
                        }
                    }
                    let y = self.mix(&x, false);
                    for (ch, v) in y.iter().enumerate() {
                        out[((g * cl + ch) * hl + bi) * wl + bj] = *v as f32;
                    }
                }
            }
        }
        LatentGrid::new(Tensor::new(vec![tl, cl, hl, wl], out)?, modality)
    }

    /// Decodes to `T×H×W×3`. The replicated leading group is averaged.
    pub fn decode(&self, latent: &LatentGrid) -> Result<Tensor> {
        let [t, h, w] = self.video_shape(latent.shape())?;
        let (tl, cl, hl, wl) = (latent.shape()[0], latent.shape()[1], latent.shape()[2], latent.shape()[3]);
        let (tf, s) = (self.config.temporal, self.config.spatial);
        let src = latent.tensor().data();
        let mut out = vec![0.0f64; t * h * w * 3];
        let mut y = vec![0.0f64; self.rows * self.cols];
        for g in 0..tl {
            let weight = if g == 0 { 1.0 / tf as f64 } else { 1.0 };
            for bi in 0..hl {
                for bj in 0..wl {
                    for (ch, v) in y.iter_mut().enumerate() {
                        *v = src[((g * cl + ch) * hl + bi) * wl + bj] as f64;
                    }
                    let x = self.mix(&y, true);
                    for k in 0..tf {
                        let f = self.source_frame(g, k);
                        for dy in 0..s {
                            for dx in 0..s {
                                let p = ((f * h + bi * s + dy) * w + bj * s + dx) * 3;
                                for c in 0..3 {
                                    out[p + c] += weight * x[(k * 3 + c) * self.cols + dy * s + dx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![t, h, w, 3], out.into_iter().map(|v| v as f32).collect())
    }
}
