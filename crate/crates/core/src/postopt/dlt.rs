use nalgebra::{DMatrix, Matrix3, Matrix3x4, SymmetricEigen, Vector2, Vector3};

use super::camera::{image_center, orthonormalize, CameraModel};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Ratio below which a singular value counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;
/// Relative out-of-plane variance below which points are treated as planar.
const PLANAR_TOLERANCE: f64 = 1e-9;

/// Finite pixel/point pairs of an XYZ frame.
#[derive(Clone, Debug)]
pub(crate) struct Correspondences {
    pub height: usize,
    pub width: usize,
    pub points: Vec<Vector3<f64>>,
    /// `(u, v)` = (column, row).
    pub pixels: Vec<Vector2<f64>>,
    /// Flat `row * W + column` index of every pair.
    pub index: Vec<usize>,
}

impl Correspondences {
    pub fn from_frame(xyz: &Tensor) -> Result<Self> {
        let s = xyz.shape();
        if xyz.rank() != 3 || s[2] != 3 {
            return Err(Error::shape(format!("XYZ frame must be H×W×3, got {s:?}")));
        }
        let (height, width) = (s[0], s[1]);
        let mut out = Self { height, width, points: Vec::new(), pixels: Vec::new(), index: Vec::new() };
        for (k, p) in xyz.data().chunks(3).enumerate() {
            if p.iter().all(|v| v.is_finite()) {
                out.points.push(Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                out.pixels.push(Vector2::new((k % width) as f64, (k / width) as f64));
                out.index.push(k);
            }
        }
        Ok(out)
    }
}

/// Similarity that centers points and scales their mean distance to `√d`.
fn normalizer<const D: usize>(pts: impl Iterator<Item = [f64; D]> + Clone) -> ([f64; D], f64) {
    let n = pts.clone().count() as f64;
    let mut mean = [0.0; D];
    for p in pts.clone() {
        for i in 0..D {
            mean[i] += p[i] / n;
        }
    }
    let spread = pts.map(|p| (0..D).map(|i| (p[i] - mean[i]).powi(2)).sum::<f64>().sqrt()).sum::<f64>() / n;
    let scale = if spread > 0.0 { (D as f64).sqrt() / spread } else { 1.0 };
    (mean, scale)
}

/// Unit null vector of `a` via SVD, failing when the null space is not
/// one-dimensional.
fn null_vector(a: DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    let n = a.ncols();
    let svd = a.svd(false, true);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    if !(s(n - 2) > RANK_TOLERANCE * s(0)) {
        return Err(Error::Degenerate(format!("rank-deficient {what} design matrix")));
    }
    let vt = svd.v_t.expect("requested");
    Ok(vt.row(order[n - 1]).iter().copied().collect())
}

fn center_matrix(cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0)
}

/// Initial camera from an XYZ frame by a direct linear solve. Non-planar
/// points give the full projection matrix, which is split into intrinsics
/// and pose by RQ decomposition; coplanar points go through a plane
/// homography. Either way the result is projected onto a single focal
/// length with the principal point at the image center.
pub fn estimate_camera_dlt(xyz: &Tensor) -> Result<CameraModel> {
    let c = Correspondences::from_frame(xyz)?;
    if c.points.len() < 6 {
        return Err(Error::Degenerate(format!("need at least 6 finite points, got {}", c.points.len())));
    }
    let n = c.points.len() as f64;
    let centroid = c.points.iter().sum::<Vector3<f64>>() / n;
    let scatter = c.points.iter().map(|p| (p - centroid) * (p - centroid).transpose()).sum::<Matrix3<f64>>() / n;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lam = order.map(|i| eig.eigenvalues[i].max(0.0));
    if !(lam[1] > RANK_TOLERANCE * lam[0]) {
        return Err(Error::Degenerate("world points are collinear".into()));
    }
    let (cx, cy) = image_center(c.height, c.width);
    if lam[2] <= PLANAR_TOLERANCE * lam[0] {
        let axes = order.map(|i| eig.eigenvectors.column(i).into_owned());
        return from_plane(&c, centroid, [axes[0], axes[1]], cx, cy);
    }
    from_projection(&c, cx, cy)
}

fn from_projection(c: &Correspondences, cx: f64, cy: f64) -> Result<CameraModel> {
    let (pm, ps) = normalizer(c.pixels.iter().map(|p| [p.x, p.y]));
    let (wm, ws) = normalizer(c.points.iter().map(|p| [p.x, p.y, p.z]));
    let mut a = DMatrix::zeros(2 * c.points.len(), 12);
    for (k, (x, uv)) in c.points.iter().zip(&c.pixels).enumerate() {
        let xh = [(x.x - wm[0]) * ws, (x.y - wm[1]) * ws, (x.z - wm[2]) * ws, 1.0];
        let (u, v) = ((uv.x - pm[0]) * ps, (uv.y - pm[1]) * ps);
        for j in 0..4 {
            a[(2 * k, j)] = xh[j];
            a[(2 * k, 8 + j)] = -u * xh[j];
            a[(2 * k + 1, 4 + j)] = xh[j];
            a[(2 * k + 1, 8 + j)] = -v * xh[j];
        }
    }
    let p = null_vector(a, "projection")?;
    let pn = Matrix3x4::from_row_slice(&p);
    let t_img = Matrix3::new(ps, 0.0, -ps * pm[0], 0.0, ps, -ps * pm[1], 0.0, 0.0, 1.0);
    let mut t_world = nalgebra::Matrix4::identity() * ws;
    t_world[(3, 3)] = 1.0;
    for i in 0..3 {
        t_world[(i, 3)] = -ws * wm[i];
    }
    let t_img_inv = t_img.try_inverse().expect("similarity is invertible");
    let mut proj = t_img_inv * pn * t_world;
    let mut m = proj.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        proj = -proj;
        m = -m;
    }
    let (k, r) = rq(&m);
    let scale = k[(2, 2)];
    let k = k / scale;
    let t = k.try_inverse().ok_or_else(|| Error::Singular("intrinsics".into()))? * proj.column(3) / scale;
    let f = 0.5 * (k[(0, 0)] + k[(1, 1)]);
    CameraModel::new(f, cx, cy, orthonormalize(&r), t)
}

/// `m = K·R` with `K` upper triangular with positive diagonal and `R` a
/// rotation (requires `det m > 0`).
fn rq(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            rot.row_mut(i).neg_mut();
        }
    }
    (k, rot)
}

fn from_plane(
    c: &Correspondences,
    origin: Vector3<f64>,
    axes: [Vector3<f64>; 2],
    cx: f64,
    cy: f64,
) -> Result<CameraModel> {
    let plane: Vec<[f64; 2]> =
        c.points.iter().map(|p| [(p - origin).dot(&axes[0]), (p - origin).dot(&axes[1])]).collect();
    let (qm, qs) = normalizer(plane.iter().copied());
    let (pm, ps) = normalizer(c.pixels.iter().map(|p| [p.x, p.y]));
    let mut a = DMatrix::zeros(2 * plane.len(), 9);
    for (k, (q, uv)) in plane.iter().zip(&c.pixels).enumerate() {
        let xh = [(q[0] - qm[0]) * qs, (q[1] - qm[1]) * qs, 1.0];
        let (u, v) = ((uv.x - pm[0]) * ps, (uv.y - pm[1]) * ps);
        for j in 0..3 {
            a[(2 * k, j)] = xh[j];
            a[(2 * k, 6 + j)] = -u * xh[j];
            a[(2 * k + 1, 3 + j)] = xh[j];
            a[(2 * k + 1, 6 + j)] = -v * xh[j];
        }
    }
    let hn = Matrix3::from_row_slice(&null_vector(a, "homography")?);
    let t_img = Matrix3::new(ps, 0.0, -ps * pm[0], 0.0, ps, -ps * pm[1], 0.0, 0.0, 1.0);
    let t_plane = Matrix3::new(qs, 0.0, -qs * qm[0], 0.0, qs, -qs * qm[1], 0.0, 0.0, 1.0);
    let h = center_matrix(cx, cy) * t_img.try_inverse().expect("similarity is invertible") * hn * t_plane;

    // Orthonormal, equal-length first two columns of K⁻¹H pin down f².
    let a1 = h[(0, 0)] * h[(0, 1)] + h[(1, 0)] * h[(1, 1)];
    let b1 = h[(2, 0)] * h[(2, 1)];
    let a2 = h[(0, 0)].powi(2) + h[(1, 0)].powi(2) - h[(0, 1)].powi(2) - h[(1, 1)].powi(2);
    let b2 = h[(2, 0)].powi(2) - h[(2, 1)].powi(2);
    let f2 = -(a1 * b1 + a2 * b2) / (b1 * b1 + b2 * b2);
    if !(f2.is_finite() && f2 > 0.0) {
        return Err(Error::Degenerate("plane is fronto-parallel; focal length is unobservable".into()));
    }
    let f = f2.sqrt();
    let kinv = Matrix3::from_diagonal(&Vector3::new(1.0 / f, 1.0 / f, 1.0));
    let g = kinv * h;
    let lambda = 0.5 * (g.column(0).norm() + g.column(1).norm());
    let sign = if g[(2, 2)] < 0.0 { -1.0 } else { 1.0 };
    let g = g * (sign / lambda);
    let (r1, r2) = (g.column(0).into_owned(), g.column(1).into_owned());
    let r_plane = orthonormalize(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let e = Matrix3::from_columns(&[axes[0], axes[1], axes[0].cross(&axes[1])]);
    let r = orthonormalize(&(r_plane * e.transpose()));
    let t = g.column(2) - r * origin;
    CameraModel::new(f, cx, cy, r, t)
}
