use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance for the orthonormality and determinant checks on `R`.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Pinhole camera with square pixels and zero skew. `r`, `t` map world
/// points into the camera frame (x right, y down, z forward).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

/// Pixel position and camera-frame depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Principal point at the center of an `H×W` image whose pixel centers sit
/// at integer `(column, row)` positions.
pub fn image_center(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

impl CameraModel {
    pub fn new(f: f64, cx: f64, cy: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let cam = Self { f, cx, cy, r, t };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.f, self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.r.iter().all(|v| v.is_finite())
            && self.t.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("camera parameters".into()));
        }
        if self.f <= 0.0 {
            return Err(Error::invalid(format!("focal length must be positive, got {}", self.f)));
        }
        let ortho = (self.r.transpose() * self.r - Matrix3::identity()).amax();
        let det = self.r.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!("R is not a rotation (‖RᵀR − I‖∞ = {ortho:.2e}, det = {det})")));
        }
        Ok(())
    }

    /// World position of the camera center, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.r * point + self.t
    }
}

pub fn project(point: &Vector3<f64>, cam: &CameraModel) -> Result<Projection> {
    let q = cam.to_camera(point);
    if !(q.z > 0.0) {
        return Err(Error::invalid(format!("point is behind the camera (z = {})", q.z)));
    }
    Ok(Projection { u: cam.f * q.x / q.z + cam.cx, v: cam.f * q.y / q.z + cam.cy, depth: q.z })
}

/// World point at pixel `(u, v)` with camera-frame depth `depth`.
pub fn backproject(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    let q = Vector3::new((u - cam.cx) * depth / cam.f, (v - cam.cy) * depth / cam.f, depth);
    Ok(cam.r.transpose() * (q - cam.t))
}

/// Angle of `Raᵀ·Rb` in degrees.
pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    // atan2 keeps precision for tiny angles where acos of the trace does not.
    let skew = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    let s = 0.5 * skew.norm();
    let c = 0.5 * (rel.trace() - 1.0);
    s.atan2(c).to_degrees()
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// `exp([ω]×)·R`, re-orthonormalized.
pub fn rotate_left(omega: &Vector3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    orthonormalize(&(Rotation3::from_scaled_axis(*omega).into_inner() * r))
}

/// JSON form of one recovered camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub frame: usize,
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub rmse_px: f64,
    /// Pixel coordinate convention: `u` is the column, `v` the row.
    pub convention: String,
}

pub const PIXEL_CONVENTION: &str = "u=column,v=row;x_cam=R*x_world+t";

impl CameraRecord {
    pub fn new(frame: usize, cam: &CameraModel, rmse_px: f64) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = cam.r[(i, j)];
            }
        }
        Self {
            frame,
            f: cam.f,
            cx: cam.cx,
            cy: cam.cy,
            r,
            t: [cam.t.x, cam.t.y, cam.t.z],
            rmse_px,
            convention: PIXEL_CONVENTION.into(),
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(
            self.f,
            self.cx,
            self.cy,
            Matrix3::from_row_slice(&self.r),
            Vector3::from_column_slice(&self.t),
        )
    }
}
