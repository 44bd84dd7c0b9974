//! Lossless RGB/XYZ latent fusion layouts and the token interaction distance
//! each layout induces.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::sixd::{LatentGrid, Modality};
use crate::{Error, Result};

/// Axis along which the two `T×C×H×W` latents are joined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Channel,
    Batch,
    Frame,
    Height,
    Width,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [Self::Channel, Self::Batch, Self::Frame, Self::Height, Self::Width];

    pub fn name(self) -> &'static str {
        match self {
            Self::Channel => "channel",
            Self::Batch => "batch",
            Self::Frame => "frame",
            Self::Height => "height",
            Self::Width => "width",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion strategy '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionStrategy {
    pub kind: FusionKind,
    pub rgb_first: bool,
}

impl FusionStrategy {
    pub fn new(kind: FusionKind) -> Self {
        Self { kind, rgb_first: true }
    }

    /// Axis of the fused tensor that holds the two blocks.
    pub fn axis(&self) -> usize {
        match self.kind {
            FusionKind::Batch | FusionKind::Frame => 0,
            FusionKind::Channel => 1,
            FusionKind::Height => 2,
            FusionKind::Width => 3,
        }
    }

    fn order(&self) -> [Modality; 2] {
        if self.rgb_first {
            [Modality::Rgb, Modality::Xyz]
        } else {
            [Modality::Xyz, Modality::Rgb]
        }
    }
}

/// Fused tensor plus the record needed to split it again. Serialized (without
/// the tensor) as the JSON sidecar of a fused TNSR file.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedLatent {
    pub tensor: Tensor,
    pub strategy: FusionStrategy,
    /// Shape of each input latent.
    pub source_shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    strategy: FusionKind,
    rgb_first: bool,
    source_shape: [usize; 4],
}

impl FusedLatent {
    pub fn sidecar_json(&self) -> String {
        let s = Sidecar {
            strategy: self.strategy.kind,
            rgb_first: self.strategy.rgb_first,
            source_shape: self.source_shape,
        };
        serde_json::to_string_pretty(&s).expect("sidecar serializes")
    }

    pub fn from_sidecar(tensor: Tensor, json: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(json)?;
        Ok(Self {
            tensor,
            strategy: FusionStrategy { kind: s.strategy, rgb_first: s.rgb_first },
            source_shape: s.source_shape,
        })
    }

    pub fn save(&self, tensor_path: &Path, sidecar_path: &Path) -> Result<()> {
        crate::numerics::save_tensor(tensor_path, &self.tensor)?;
        std::fs::write(sidecar_path, self.sidecar_json()).map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load(tensor_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let t = crate::numerics::load_tensor(tensor_path)?;
        let json = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
        Self::from_sidecar(t, &json)
    }

    /// Shape `fuse` produces from the recorded source shape.
    pub fn expected_shape(&self) -> Vec<usize> {
        fused_shape(&self.source_shape, self.strategy)
    }
}

fn fused_shape(src: &[usize; 4], strategy: FusionStrategy) -> Vec<usize> {
    if strategy.kind == FusionKind::Batch {
        let mut s = vec![2];
        s.extend_from_slice(src);
        return s;
    }
    let mut s = src.to_vec();
    s[strategy.axis()] *= 2;
    s
}

pub fn fuse(rgb: &LatentGrid, xyz: &LatentGrid, strategy: FusionStrategy) -> Result<FusedLatent> {
    if rgb.shape() != xyz.shape() {
        return Err(Error::shape(format!("cannot fuse rgb {:?} with xyz {:?}", rgb.shape(), xyz.shape())));
    }
    if rgb.modality() != Modality::Rgb || xyz.modality() != Modality::Xyz {
        return Err(Error::invalid("fuse expects an rgb latent and an xyz latent"));
    }
    let source_shape: [usize; 4] = rgb.shape().try_into().expect("latents are rank 4");
    let [a, b] = strategy.order().map(|m| if m == Modality::Rgb { rgb.tensor() } else { xyz.tensor() });
    let tensor = if strategy.kind == FusionKind::Batch {
        let mut data = Vec::with_capacity(2 * a.numel());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        Tensor::new(fused_shape(&source_shape, strategy), data)?
    } else {
        Tensor::concat(&[a, b], strategy.axis())?
    };
    Ok(FusedLatent { tensor, strategy, source_shape })
}

/// Splits a fused latent into `(rgb, xyz)`.
pub fn unfuse(fused: &FusedLatent) -> Result<(LatentGrid, LatentGrid)> {
    let expected = fused.expected_shape();
    if fused.tensor.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "fused tensor {:?} does not match its record (expected {expected:?})",
            fused.tensor.shape()
        )));
    }
    let strategy = fused.strategy;
    let (axis, len) = match strategy.kind {
        FusionKind::Batch => (0, 1),
        _ => (strategy.axis(), fused.source_shape[strategy.axis()]),
    };
    let parts = fused.tensor.split(axis, &[len, len])?;
    let mut out = parts.into_iter().map(|p| p.reshape(&fused.source_shape));
    let (first, second) = (out.next().unwrap()?, out.next().unwrap()?);
    let [m0, _] = strategy.order();
    let (rgb, xyz) = if m0 == Modality::Rgb { (first, second) } else { (second, first) };
    Ok((LatentGrid::new(rgb, Modality::Rgb)?, LatentGrid::new(xyz, Modality::Xyz)?))
}

/// Mean flattened-raster distance between each RGB token and its XYZ partner
/// in the fused token grid (frame-major, then row, then column). `Channel`
/// merges partners into one token (distance 0); `Batch` never places them in
/// the same sequence (`f64::INFINITY`).
pub fn interaction_distance(strategy: FusionStrategy, frames: usize, rows: usize, cols: usize) -> Result<f64> {
    if frames == 0 || rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("token grid {frames}×{rows}×{cols} must be non-empty")));
    }
    let (t, h, w) = (frames as f64, rows as f64, cols as f64);
    Ok(match strategy.kind {
        FusionKind::Channel => 0.0,
        FusionKind::Batch => f64::INFINITY,
        FusionKind::Width => w,
        FusionKind::Height => h * w,
        FusionKind::Frame => t * h * w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(shape: [usize; 4], seed: u32) -> (LatentGrid, LatentGrid) {
        let mk = |off: f32| {
            Tensor::from_fn(&shape, |i| {
                let k = ((i[0] * 31 + i[1] * 17 + i[2] * 7 + i[3]) as u32).wrapping_mul(2654435761) ^ seed;
                (k % 1000) as f32 / 37.0 + off
            })
            .unwrap()
        };
        (LatentGrid::new(mk(0.0), Modality::Rgb).unwrap(), LatentGrid::new(mk(0.5), Modality::Xyz).unwrap())
    }

    #[test]
    fn fused_shapes() {
        let (a, b) = pair([2, 4, 8, 8], 0);
        let shape = |k| fuse(&a, &b, FusionStrategy::new(k)).unwrap().tensor.shape().to_vec();
        assert_eq!(shape(FusionKind::Width), vec![2, 4, 8, 16]);
        assert_eq!(shape(FusionKind::Channel), vec![2, 8, 8, 8]);
        assert_eq!(shape(FusionKind::Frame), vec![4, 4, 8, 8]);
        assert_eq!(shape(FusionKind::Height), vec![2, 4, 16, 8]);
        assert_eq!(shape(FusionKind::Batch), vec![2, 2, 4, 8, 8]);
    }

    #[test]
    fn mismatch_rejected() {
        let (a, _) = pair([2, 4, 8, 8], 0);
        let (_, b) = pair([2, 4, 8, 4], 0);
        assert!(fuse(&a, &b, FusionStrategy::new(FusionKind::Width)).is_err());
        assert!(fuse(&a, &a, FusionStrategy::new(FusionKind::Width)).is_err());
    }

    #[test]
    fn unfuse_hand_built() {
        let left = Tensor::full(&[1, 1, 2, 2], 1.0f32).unwrap();
        let right = Tensor::full(&[1, 1, 2, 2], 2.0f32).unwrap();
        let fused = FusedLatent {
            tensor: Tensor::concat(&[&left, &right], 3).unwrap(),
            strategy: FusionStrategy::new(FusionKind::Width),
            source_shape: [1, 1, 2, 2],
        };
        let (r, x) = unfuse(&fused).unwrap();
        assert_eq!(r.tensor(), &left);
        assert_eq!(x.tensor(), &right);
    }

    #[test]
    fn corrupted_record_rejected() {
        let (a, b) = pair([2, 3, 4, 4], 1);
        let mut f = fuse(&a, &b, FusionStrategy::new(FusionKind::Height)).unwrap();
        f.source_shape[2] = 3;
        assert!(unfuse(&f).is_err());
    }

    #[test]
    fn sidecar_roundtrip() {
        let (a, b) = pair([1, 2, 2, 2], 3);
        let f = fuse(&a, &b, FusionStrategy { kind: FusionKind::Frame, rgb_first: false }).unwrap();
        let json = f.sidecar_json();
        assert!(json.contains("\"frame\""));
        let g = FusedLatent::from_sidecar(f.tensor.clone(), &json).unwrap();
        assert_eq!(g, f);
        assert!(FusedLatent::from_sidecar(f.tensor, "{\"strategy\":\"diagonal\"}").is_err());
    }

    #[test]
    fn width_equals_transposed_height() {
        let (a, b) = pair([2, 3, 4, 5], 9);
        let swap = |g: &LatentGrid| LatentGrid::new(g.tensor().permute(&[0, 1, 3, 2]).unwrap(), g.modality()).unwrap();
        let w = fuse(&a, &b, FusionStrategy::new(FusionKind::Width)).unwrap();
        let h = fuse(&swap(&a), &swap(&b), FusionStrategy::new(FusionKind::Height)).unwrap();
        assert_eq!(w.tensor, h.tensor.permute(&[0, 1, 3, 2]).unwrap());
    }

    #[test]
    fn distance_sentinels_and_examples() {
        let d = |k| interaction_distance(FusionStrategy::new(k), 2, 2, 2).unwrap();
        assert_eq!(d(FusionKind::Width), 2.0);
        assert_eq!(d(FusionKind::Height), 4.0);
        assert_eq!(d(FusionKind::Frame), 8.0);
        assert_eq!(d(FusionKind::Channel), 0.0);
        assert_eq!(d(FusionKind::Batch), f64::INFINITY);
        assert!(interaction_distance(FusionStrategy::new(FusionKind::Width), 0, 1, 1).is_err());
    }

    #[test]
    fn kind_parse() {
        for k in FusionKind::ALL {
            assert_eq!(k.name().parse::<FusionKind>().unwrap(), k);
        }
        assert!("depth".parse::<FusionKind>().is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(t in 1usize..4, c in 1usize..5, h in 1usize..6, w in 1usize..6,
                               seed in any::<u32>(), k in 0usize..5, rgb_first in any::<bool>()) {
            let (a, b) = pair([t, c, h, w], seed);
            let s = FusionStrategy { kind: FusionKind::ALL[k], rgb_first };
            let (ra, rb) = unfuse(&fuse(&a, &b, s).unwrap()).unwrap();
            prop_assert_eq!(ra, a);
            prop_assert_eq!(rb, b);
        }

        #[test]
        fn distance_ordering(t in 1usize..9, h in 1usize..17, w in 1usize..17) {
            let d = |k| interaction_distance(FusionStrategy::new(k), t, h, w).unwrap();
            prop_assert!(d(FusionKind::Width) <= d(FusionKind::Height));
            prop_assert!(d(FusionKind::Height) <= d(FusionKind::Frame));
            if h > 1 && t > 1 {
                prop_assert!(d(FusionKind::Width) < d(FusionKind::Height));
                prop_assert!(d(FusionKind::Height) < d(FusionKind::Frame));
            }
        }
    }
}
