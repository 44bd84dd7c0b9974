use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

/// Mean of `0.299R + 0.587G + 0.114B` over an `H×W×3` frame in `[0, 255]`.
pub fn mean_luma(frame: &Tensor) -> Result<f64> {
    if frame.rank() != 3 || frame.shape()[2] != 3 {
        return Err(Error::shape(format!("frame must be H×W×3, got {:?}", frame.shape())));
    }
    let sum: f64 =
        frame.data().chunks_exact(3).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).sum();
    Ok(sum / (frame.numel() / 3) as f64)
}

/// Mean confidence value (MCV) and high-confidence pixel ratio (HCPR) of
/// `T×H×W` confidence maps. HCPR counts entries strictly above `tau`.
pub fn confidence_metrics(maps: &Tensor, tau: f64) -> Result<(f64, f64)> {
    if maps.rank() != 3 {
        return Err(Error::shape(format!("confidence maps must be T×H×W, got {:?}", maps.shape())));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("confidence threshold must be positive, got {tau}")));
    }
    let mut sum = 0.0;
    let mut above = 0usize;
    for &c in maps.data() {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::invalid(format!("confidence values must be finite and non-negative, got {c}")));
        }
        sum += c as f64;
        above += usize::from(c as f64 > tau);
    }
    let n = maps.numel() as f64;
    Ok((sum / n, above as f64 / n))
}

/// Trajectory statistics: mean speed, mean acceleration magnitude and mean
/// local curvature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub v_mean: f64,
    pub a_mean: f64,
    pub kappa_mean: f64,
}

/// Local curvature `‖v₂ − v₁‖ / (‖v₂‖² + ‖v₁‖² + ε)` between consecutive
/// velocities.
pub fn curvature(v1: &Vector3<f64>, v2: &Vector3<f64>, epsilon: f64) -> f64 {
    (v2 - v1).norm() / (v2.norm_squared() + v1.norm_squared() + epsilon)
}

pub fn camera_smoothness(translations: &[Vector3<f64>], epsilon: f64) -> Result<Smoothness> {
    if translations.len() < 3 {
        return Err(Error::invalid(format!(
            "camera smoothness needs at least 3 positions, got {}",
            translations.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if translations.iter().any(|t| !t.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("camera trajectory".into()));
    }
    let v: Vec<Vector3<f64>> = translations.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| xs.sum::<f64>() / n as f64;
    let n_a = v.len() - 1;
    Ok(Smoothness {
        v_mean: mean(&mut v.iter().map(|x| x.norm()), v.len()),
        a_mean: mean(&mut v.windows(2).map(|w| (w[1] - w[0]).norm()), n_a),
        kappa_mean: mean(&mut v.windows(2).map(|w| curvature(&w[0], &w[1], epsilon)), n_a),
    })
}

/// Reads a `T×3` tensor as a list of positions.
pub fn trajectory_from_tensor(t: &Tensor) -> Result<Vec<Vector3<f64>>> {
    if t.rank() != 2 || t.shape()[1] != 3 {
        return Err(Error::shape(format!("trajectory must be T×3, got {:?}", t.shape())));
    }
    Ok(t.data().chunks_exact(3).map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn uniform(h: usize, w: usize, rgb: [f32; 3]) -> Tensor {
        Tensor::new(vec![h, w, 3], rgb.iter().copied().cycle().take(h * w * 3).collect()).unwrap()
    }

    #[test]
    fn luma_examples() {
        assert!((mean_luma(&uniform(4, 5, [100.0; 3])).unwrap() - 100.0).abs() < 1e-9);
        assert!((mean_luma(&uniform(3, 3, [255.0, 0.0, 0.0])).unwrap() - 76.245).abs() < 1e-9);
        assert_eq!(mean_luma(&uniform(2, 2, [0.0; 3])).unwrap(), 0.0);
        assert!(mean_luma(&Tensor::zeros(&[4, 4]).unwrap()).is_err());
    }

    #[test]
    fn confidence_examples() {
        let c = Tensor::full(&[2, 3, 3], 2.0).unwrap();
        assert_eq!(confidence_metrics(&c, 1.0).unwrap(), (2.0, 1.0));
        let m = Tensor::new(vec![1, 2, 2], vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        assert_eq!(confidence_metrics(&m, 2.0).unwrap(), (2.0, 0.5));
        // Strictly above: entries equal to τ do not count.
        assert_eq!(confidence_metrics(&m, 2.5).unwrap().1, 0.25);
        assert!(confidence_metrics(&m, 0.0).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let still = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        let s = camera_smoothness(&still, 1e-6).unwrap();
        assert_eq!((s.v_mean, s.a_mean, s.kappa_mean), (0.0, 0.0, 0.0));

        let line: Vec<_> = (0..6).map(|k| Vector3::new(0.5 * k as f64, -0.25 * k as f64, 0.0)).collect();
        let s = camera_smoothness(&line, 1e-6).unwrap();
        assert!((s.v_mean - (0.3125f64).sqrt()).abs() < 1e-12);
        assert_eq!((s.a_mean, s.kappa_mean), (0.0, 0.0));

        let eps = 1e-3;
        let back = [Vector3::zeros(), Vector3::x(), Vector3::zeros()];
        let s = camera_smoothness(&back, eps).unwrap();
        assert!((s.kappa_mean - 2.0 / (2.0 + eps)).abs() < 1e-15);
        assert_eq!(s.a_mean, 2.0);

        assert!(camera_smoothness(&back[..2], eps).is_err());
        assert!(camera_smoothness(&back, 0.0).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-5.0f64..5.0).prop_map(Vector3::from)
    }

    proptest! {
        #[test]
        fn curvature_is_nonnegative_and_rotation_invariant(
            path in prop::collection::vec(vec3(), 3..12),
            axis in vec3(),
            angle in -3.0f64..3.0,
        ) {
            let eps = 1e-4;
            let rot = Rotation3::from_scaled_axis(axis.normalize() * angle);
            for w in path.windows(3) {
                let (v1, v2) = (w[1] - w[0], w[2] - w[1]);
                let k = curvature(&v1, &v2, eps);
                prop_assert!(k >= 0.0);
                prop_assert_eq!(k == 0.0, v1 == v2);
            }
            let a = camera_smoothness(&path, eps).unwrap();
            let rotated: Vec<_> = path.iter().map(|p| rot * p).collect();
            let b = camera_smoothness(&rotated, eps).unwrap();
            prop_assert!((a.kappa_mean - b.kappa_mean).abs() <= 1e-9 * (1.0 + a.kappa_mean));
            prop_assert!((a.v_mean - b.v_mean).abs() <= 1e-9 * (1.0 + a.v_mean));
        }

        #[test]
        fn hcpr_is_monotone_and_mcv_ignores_tau(
            data in prop::collection::vec(0.0f32..5.0, 1..64),
            t1 in 0.01f64..5.0,
            t2 in 0.01f64..5.0,
        ) {
            let maps = Tensor::new(vec![1, 1, data.len()], data).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (m1, h1) = confidence_metrics(&maps, lo).unwrap();
            let (m2, h2) = confidence_metrics(&maps, hi).unwrap();
            prop_assert!(h2 <= h1);
            prop_assert_eq!(m1, m2);
        }
    }
}
