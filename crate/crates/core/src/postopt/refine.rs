use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{rotate_left, CameraModel};
use super::dlt::Correspondences;
use crate::numerics::{gauss_newton, LeastSquaresProblem, SolverOptions, Tensor, Termination};
use crate::{Error, Result};

/// Depth written for pixels that are invalid or behind the camera.
pub const DEPTH_SENTINEL: f32 = 0.0;

/// Residual assigned to points that fall behind a trial camera, so that the
/// solver rejects such steps.
const BEHIND_PENALTY: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct RefineOptions {
    pub solver: SolverOptions,
    /// RMSE below which a frame counts as converged regardless of how the
    /// solver terminated.
    pub rmse_tolerance: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), rmse_tolerance: 1e-3 }
    }
}

/// Outcome of refining one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub rmse_px: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub converged: bool,
    /// Set when the frame could not be solved at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Pixel residuals over `(f, ω, t)`, or `(ω, t)` when the focal length is
/// held fixed. `ω` is a left increment on `base`.
struct Reprojection<'a> {
    points: &'a [Vector3<f64>],
    pixels: &'a [Vector2<f64>],
    base: Matrix3<f64>,
    cx: f64,
    cy: f64,
    fixed_f: Option<f64>,
}

impl Reprojection<'_> {
    fn unpack(&self, p: &[f64]) -> (f64, Vector3<f64>, Vector3<f64>) {
        let (f, rest) = match self.fixed_f {
            Some(f) => (f, p),
            None => (p[0], &p[1..]),
        };
        (f, Vector3::new(rest[0], rest[1], rest[2]), Vector3::new(rest[3], rest[4], rest[5]))
    }

    fn rotation(&self, omega: &Vector3<f64>) -> Matrix3<f64> {
        if omega.iter().all(|&w| w == 0.0) {
            self.base
        } else {
            rotate_left(omega, &self.base)
        }
    }
}

impl LeastSquaresProblem for Reprojection<'_> {
    fn num_params(&self) -> usize {
        if self.fixed_f.is_some() {
            6
        } else {
            7
        }
    }

    fn num_residuals(&self) -> usize {
        2 * self.points.len()
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let (f, omega, t) = self.unpack(p);
        let r = self.rotation(&omega);
        let mut out = Vec::with_capacity(self.num_residuals());
        for (x, uv) in self.points.iter().zip(self.pixels) {
            let q = r * x + t;
            if q.z <= 1e-12 {
                out.extend([BEHIND_PENALTY, BEHIND_PENALTY]);
            } else {
                out.push(f * q.x / q.z + self.cx - uv.x);
                out.push(f * q.y / q.z + self.cy - uv.y);
            }
        }
        out
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (f, omega, t) = self.unpack(p);
        let r = self.rotation(&omega);
        let off = usize::from(self.fixed_f.is_none());
        let mut jac = DMatrix::zeros(self.num_residuals(), self.num_params());
        for (k, x) in self.points.iter().enumerate() {
            let rx = r * x;
            let q = rx + t;
            if q.z <= 1e-12 {
                continue;
            }
            let iz = 1.0 / q.z;
            // d(u, v)/dq, and dq/dω = −[Rx]× for a left increment.
            let du = Vector3::new(f * iz, 0.0, -f * q.x * iz * iz);
            let dv = Vector3::new(0.0, f * iz, -f * q.y * iz * iz);
            let dq_dw = -rx.cross_matrix();
            for (row, d) in [(2 * k, du), (2 * k + 1, dv)] {
                if off == 1 {
                    jac[(row, 0)] = if row % 2 == 0 { q.x * iz } else { q.y * iz };
                }
                let dw = d.transpose() * dq_dw;
                for a in 0..3 {
                    jac[(row, off + a)] = dw[a];
                    jac[(row, off + 3 + a)] = d[a];
                }
            }
        }
        jac
    }

    fn retract(&mut self, p: &mut [f64]) {
        let off = usize::from(self.fixed_f.is_none());
        let omega = Vector3::new(p[off], p[off + 1], p[off + 2]);
        self.base = self.rotation(&omega);
        p[off..off + 3].fill(0.0);
    }
}

fn rmse(residuals: &[f64]) -> f64 {
    let n = residuals.len() / 2;
    (residuals.iter().map(|r| r * r).sum::<f64>() / n.max(1) as f64).sqrt()
}

/// Camera-frame depth of every pixel; invalid or behind-camera pixels get
/// [`DEPTH_SENTINEL`].
pub fn depth_map(xyz: &Tensor, cam: &CameraModel) -> Result<Tensor> {
    let c = Correspondences::from_frame(xyz)?;
    let mut depth = vec![DEPTH_SENTINEL; c.height * c.width];
    for (x, &k) in c.points.iter().zip(&c.index) {
        let z = cam.to_camera(x).z;
        if z > 0.0 {
            depth[k] = z as f32;
        }
    }
    Tensor::new(vec![c.height, c.width], depth)
}

/// Reprojection RMSE (pixels) of the finite points of `xyz` under `cam`,
/// counting only points in front of the camera.
pub fn reprojection_rmse(xyz: &Tensor, cam: &CameraModel) -> Result<f64> {
    let c = Correspondences::from_frame(xyz)?;
    let (mut acc, mut n) = (0.0, 0usize);
    for (x, uv) in c.points.iter().zip(&c.pixels) {
        let q = cam.to_camera(x);
        if q.z > 0.0 {
            acc += (cam.f * q.x / q.z + cam.cx - uv.x).powi(2) + (cam.f * q.y / q.z + cam.cy - uv.y).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no point lies in front of the camera"));
    }
    Ok((acc / n as f64).sqrt())
}

/// Minimizes pixel reprojection error over focal length, rotation and
/// translation starting from `init`. Only points in front of `init` take
/// part. With `fixed_f` the focal length is held at that value.
pub fn refine_camera_with(
    xyz: &Tensor,
    init: &CameraModel,
    fixed_f: Option<f64>,
    opts: &RefineOptions,
) -> Result<(CameraModel, Tensor, FrameReport)> {
    init.validate()?;
    let c = Correspondences::from_frame(xyz)?;
    let front: Vec<usize> = (0..c.points.len()).filter(|&k| init.to_camera(&c.points[k]).z > 0.0).collect();
    if c.points.is_empty() || 2 * front.len() < c.points.len() || front.len() < 4 {
        return Err(Error::invalid(format!("insufficient in-front points: {} of {}", front.len(), c.points.len())));
    }
    let points: Vec<Vector3<f64>> = front.iter().map(|&k| c.points[k]).collect();
    let pixels: Vec<Vector2<f64>> = front.iter().map(|&k| c.pixels[k]).collect();
    let f = fixed_f.unwrap_or(init.f);
    let mut problem =
        Reprojection { points: &points, pixels: &pixels, base: init.r, cx: init.cx, cy: init.cy, fixed_f };
    let mut x0 = Vec::with_capacity(7);
    if fixed_f.is_none() {
        x0.push(f);
    }
    x0.extend([0.0, 0.0, 0.0, init.t.x, init.t.y, init.t.z]);
    let sol = gauss_newton(&mut problem, &x0, &opts.solver)?;
    let (f, omega, t) = problem.unpack(&sol.params);
    let cam = CameraModel::new(f, init.cx, init.cy, problem.rotation(&omega), t)?;
    let err = rmse(&problem.residuals(&sol.params));
    let solver_ok =
        matches!(sol.termination, Termination::ZeroResidual | Termination::Converged | Termination::Stationary);
    let report = FrameReport {
        frame: 0,
        rmse_px: err,
        iterations: sol.iterations,
        accepted_steps: sol.accepted_steps,
        converged: err <= opts.rmse_tolerance || (solver_ok && err.is_finite()),
        error: None,
    };
    Ok((cam, depth_map(xyz, &cam)?, report))
}

pub fn refine_camera(xyz: &Tensor, init: &CameraModel) -> Result<(CameraModel, Tensor, FrameReport)> {
    refine_camera_with(xyz, init, None, &RefineOptions::default())
}
