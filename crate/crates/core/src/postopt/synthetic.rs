//! Ground-truth scenes for validating camera recovery: a smooth height
//! field seen through a known pinhole camera, ray-cast into an XYZ frame.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::camera::{image_center, CameraModel};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// World surface `z = a·sin(fx·x + px)·cos(fy·y + py)`; a plane when `a = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub amplitude: f64,
    pub freq: [f64; 2],
    pub phase: [f64; 2],
}

impl Surface {
    pub fn plane() -> Self {
        Self { amplitude: 0.0, freq: [1.0, 1.0], phase: [0.0, 0.0] }
    }

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            amplitude: rng.random_range(0.08..0.15),
            freq: [rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)],
            phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)],
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.amplitude * (self.freq[0] * x + self.phase[0]).sin() * (self.freq[1] * y + self.phase[1]).cos()
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, cx) = (self.freq[0] * x + self.phase[0]).sin_cos();
        let (sy, cy) = (self.freq[1] * y + self.phase[1]).sin_cos();
        (self.amplitude * self.freq[0] * cx * cy, -self.amplitude * self.freq[1] * sx * sy)
    }
}

/// Camera at `center` looking at the world origin, world `+y` pointing down
/// in the image.
pub fn look_at_camera(center: Vector3<f64>, f: f64, height: usize, width: usize) -> Result<CameraModel> {
    let z = (-center).normalize();
    let x = Vector3::y().cross(&z);
    if x.norm() < 1e-9 {
        return Err(Error::Degenerate("viewing direction is parallel to the down axis".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let (cx, cy) = image_center(height, width);
    CameraModel::new(f, cx, cy, r, -(r * center))
}

/// A camera 2.5 to 4 units from the origin on the `−z` side, tilted 10° to
/// 30° off the axis, with a 40° to 65° horizontal field of view.
pub fn random_camera(rng: &mut ChaCha8Rng, height: usize, width: usize) -> CameraModel {
    let dist = rng.random_range(2.5..4.0);
    let tilt = rng.random_range(10.0f64..30.0).to_radians();
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let center = dist * Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), -tilt.cos());
    let fov = rng.random_range(40.0f64..65.0).to_radians();
    let f = 0.5 * width as f64 / (0.5 * fov).tan();
    look_at_camera(center, f, height, width).expect("camera is off the down axis")
}

/// XYZ frame (`H×W×3`) of the surface as seen through `cam`.
pub fn render_xyz(cam: &CameraModel, height: usize, width: usize, surface: &Surface) -> Result<Tensor> {
    let c = cam.center();
    let rt = cam.r.transpose();
    let mut data = Vec::with_capacity(height * width * 3);
    for i in 0..height {
        for j in 0..width {
            let d = rt * Vector3::new((j as f64 - cam.cx) / cam.f, (i as f64 - cam.cy) / cam.f, 1.0);
            let p = intersect(&c, &d, surface)
                .ok_or_else(|| Error::Degenerate(format!("ray through pixel ({i}, {j}) misses the surface")))?;
            data.extend(p.iter().map(|&v| v as f32));
        }
    }
    Tensor::new(vec![height, width, 3], data)
}

/// Newton's method on the ray parameter, started from the `z = 0` plane.
fn intersect(c: &Vector3<f64>, d: &Vector3<f64>, surface: &Surface) -> Option<Vector3<f64>> {
    if d.z.abs() < 1e-9 {
        return None;
    }
    let mut s = -c.z / d.z;
    for _ in 0..50 {
        let p = c + s * d;
        let residual = p.z - surface.height(p.x, p.y);
        let (gx, gy) = surface.gradient(p.x, p.y);
        let slope = d.z - gx * d.x - gy * d.y;
        if residual.abs() < 1e-14 {
            break;
        }
        s -= residual / slope;
    }
    let p = c + s * d;
    ((p.z - surface.height(p.x, p.y)).abs() < 1e-10 && s > 0.0).then_some(p)
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every coordinate.
pub fn add_point_noise(xyz: &Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let data = xyz.data().iter().map(|&v| (v as f64 + normal.sample(rng)) as f32).collect();
    Tensor::new(xyz.shape().to_vec(), data)
}

/// `frames` cameras on a horizontal arc of radius `radius` sweeping
/// `sweep_deg` degrees, elevated by `elevation_deg`, all looking at the origin.
pub fn orbit_cameras(
    frames: usize,
    height: usize,
    width: usize,
    f: f64,
    radius: f64,
    sweep_deg: f64,
    elevation_deg: f64,
) -> Result<Vec<CameraModel>> {
    let el = elevation_deg.to_radians();
    (0..frames)
        .map(|k| {
            let frac = if frames > 1 { k as f64 / (frames - 1) as f64 - 0.5 } else { 0.0 };
            let az = (frac * sweep_deg).to_radians();
            let center = radius * Vector3::new(el.cos() * az.sin(), -el.sin(), -el.cos() * az.cos());
            look_at_camera(center, f, height, width)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postopt::camera::project;
    use rand::SeedableRng;

    #[test]
    fn rendered_points_reproject_to_their_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = random_camera(&mut rng, 12, 20);
        let xyz = render_xyz(&cam, 12, 20, &Surface::random(&mut rng)).unwrap();
        for (k, p) in xyz.data().chunks(3).enumerate() {
            let q = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            let pr = project(&q, &cam).unwrap();
            assert!((pr.u - (k % 20) as f64).abs() < 1e-4 && (pr.v - (k / 20) as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn orbit_looks_at_origin() {
        let cams = orbit_cameras(5, 16, 16, 20.0, 3.0, 40.0, 15.0).unwrap();
        for cam in &cams {
            let p = project(&Vector3::zeros(), cam).unwrap();
            assert!((p.u - cam.cx).abs() < 1e-9 && (p.v - cam.cy).abs() < 1e-9);
            assert!((p.depth - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_has_requested_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zero = Tensor::zeros(&[50, 50, 3]).unwrap();
        let noisy = add_point_noise(&zero, 0.005, &mut rng).unwrap();
        let std = (noisy.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / 7500.0).sqrt();
        assert!((std - 0.005).abs() < 3e-4, "{std}");
    }
}
