use super::{CodecConfig, Modality};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const KNOWN: f32 = 1.0;
pub const SOFT: f32 = 0.5;
pub const UNKNOWN: f32 = 0.0;

/// Per-pixel conditioning masks, `T×H×W` for each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedMask {
    rgb: Tensor,
    xyz: Tensor,
}

/// Frame 0 RGB is known, frame 0 XYZ is the soft initial plane, every later
/// frame is generated.
pub fn build_guided_mask(frames: usize, height: usize, width: usize) -> Result<GuidedMask> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!("mask extents must be positive, got {frames}×{height}×{width}")));
    }
    let plane = |first: f32| Tensor::from_fn(&[frames, height, width], |i| if i[0] == 0 { first } else { UNKNOWN });
    Ok(GuidedMask { rgb: plane(KNOWN)?, xyz: plane(SOFT)? })
}

impl GuidedMask {
    pub fn get(&self, modality: Modality) -> &Tensor {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Xyz => &self.xyz,
        }
    }

    /// Average-pools one modality's mask onto the latent grid of `codec`:
    /// `T_l×temporal×H_l×W_l`, one channel per source frame of each group.
    pub fn pooled(&self, modality: Modality, codec: &CodecConfig) -> Result<Tensor> {
        let m = self.get(modality);
        let (t, h, w) = (m.shape()[0], m.shape()[1], m.shape()[2]);
        let (tf, s) = (codec.temporal, codec.spatial);
        if (t - 1) % tf != 0 || h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!("mask {t}×{h}×{w} does not fit codec factors ({tf}, {s})")));
        }
        let (tl, hl, wl) = (1 + (t - 1) / tf, h / s, w / s);
        let src = m.data();
        let area = (s * s) as f64;
        Tensor::from_fn(&[tl, tf, hl, wl], |i| {
            let f = if i[0] == 0 { 0 } else { 1 + (i[0] - 1) * tf + i[1] };
            let mut acc = 0.0f64;
            for dy in 0..s {
                let row = (f * h + i[2] * s + dy) * w + i[3] * s;
                acc += src[row..row + s].iter().map(|&v| v as f64).sum::<f64>();
            }
            (acc / area) as f32
        })
    }
}
