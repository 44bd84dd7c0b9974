use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Which half of a 6D video a plane, latent or token belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Xyz,
}

/// Paired, pixel-aligned RGB and XYZ frame sequences, each stored as a
/// `T×H×W×3` tensor. RGB lies in `[0, 1]`; XYZ is in scene units with
/// x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct SixDVideo {
    rgb: Tensor,
    xyz: Tensor,
}

impl SixDVideo {
    pub fn new(rgb: Tensor, xyz: Tensor) -> Result<Self> {
        if rgb.rank() != 4 || rgb.shape()[3] != 3 {
            return Err(Error::shape(format!("rgb must be T×H×W×3, got {:?}", rgb.shape())));
        }
        if rgb.shape() != xyz.shape() {
            return Err(Error::shape(format!("rgb {:?} and xyz {:?} are not pixel-aligned", rgb.shape(), xyz.shape())));
        }
        if !rgb.all_finite() || !xyz.all_finite() {
            return Err(Error::NonFinite("6D video frames".into()));
        }
        if rgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("rgb values must lie in [0, 1]"));
        }
        Ok(Self { rgb, xyz })
    }

    pub fn frames(&self) -> usize {
        self.rgb.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }

    pub fn rgb(&self) -> &Tensor {
        &self.rgb
    }

    pub fn xyz(&self) -> &Tensor {
        &self.xyz
    }

    pub fn plane(&self, modality: Modality) -> &Tensor {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Xyz => &self.xyz,
        }
    }

    /// The conditioning image (RGB frame 0) as `H×W×3`.
    pub fn first_frame(&self) -> Tensor {
        let f = self.rgb.narrow(0, 0, 1).expect("video has at least one frame");
        f.reshape(&f.shape()[1..]).expect("same element count")
    }
}

/// Sloped-plane XYZ initialization over a normalized `[-1, 1]²` grid:
/// pixel `(i, j)` maps to `(2j/(W-1) - 1, 2i/(H-1) - 1, 2i/(H-1) - 1)`.
pub fn init_xyz(height: usize, width: usize) -> Result<Tensor> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(format!("init_xyz needs H, W >= 2, got {height}×{width}")));
    }
    let (hm, wm) = ((height - 1) as f64, (width - 1) as f64);
    Tensor::from_fn(&[height, width, 3], |idx| {
        let (i, j, c) = (idx[0] as f64, idx[1] as f64, idx[2]);
        let v = if c == 0 { 2.0 * j / wm - 1.0 } else { 2.0 * i / hm - 1.0 };
        v as f32
    })
}

/// Isotropic scaling applied by [`normalize_scene_extent`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTransform {
    pub scale: f64,
}

impl SceneTransform {
    pub const IDENTITY: SceneTransform = SceneTransform { scale: 1.0 };

    pub fn apply(&self, xyz: &Tensor) -> Tensor {
        let s = self.scale;
        xyz.map(|v| (v as f64 * s) as f32)
    }

    pub fn invert(&self, xyz: &Tensor) -> Tensor {
        let s = self.scale;
        xyz.map(|v| (v as f64 / s) as f32)
    }
}

pub const EXTENT_PERCENTILE: f64 = 95.0;

/// Linear-interpolation percentile of an unsorted sample (`q` in `[0, 100]`).
pub(crate) fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(values[lo] + (values[hi] - values[lo]) * frac)
}

/// Scales XYZ frames (any tensor whose last axis is 3) so that the 95th
/// percentile of absolute finite coordinates becomes 1. A cloud whose points
/// are all identical is returned unchanged with the identity transform.
pub fn normalize_scene_extent(xyz: &Tensor) -> Result<(Tensor, SceneTransform)> {
    if xyz.shape().last() != Some(&3) {
        return Err(Error::shape(format!("xyz frames must end in 3 channels, got {:?}", xyz.shape())));
    }
    let finite_points: Vec<&[f32]> = xyz.data().chunks_exact(3).filter(|p| p.iter().all(|v| v.is_finite())).collect();
    let Some(first) = finite_points.first() else {
        return Err(Error::invalid("normalize_scene_extent needs at least one finite point"));
    };
    if finite_points.iter().all(|p| p == first) {
        return Ok((xyz.clone(), SceneTransform::IDENTITY));
    }
    let mut abs: Vec<f64> = finite_points.iter().flat_map(|p| p.iter().map(|v| v.abs() as f64)).collect();
    let p = percentile(&mut abs, EXTENT_PERCENTILE).unwrap_or(0.0);
    if p <= 0.0 {
        return Ok((xyz.clone(), SceneTransform::IDENTITY));
    }
    let tf = SceneTransform { scale: 1.0 / p };
    Ok((tf.apply(xyz), tf))
}

/// Colored points in row-major pixel order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    /// RGB in `[0, 1]`, parallel to `points`.
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn xyz_to_pointcloud(video: &SixDVideo, frame: usize) -> Result<PointCloud> {
    if frame >= video.frames() {
        return Err(Error::invalid(format!("frame {frame} out of range for {} frames", video.frames())));
    }
    let n = video.height() * video.width();
    let xyz = &video.xyz.data()[frame * n * 3..(frame + 1) * n * 3];
    let rgb = &video.rgb.data()[frame * n * 3..(frame + 1) * n * 3];
    Ok(PointCloud {
        points: xyz.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        colors: rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}
