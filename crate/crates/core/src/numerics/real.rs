use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating element type usable by [`Tensor`](super::Tensor) and the
/// differentiation engine. Implemented for `f32` (training, storage) and
/// `f64` (gradient checking).
pub trait Real:
    num_traits::Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    /// `c[m×n] += op(a)[m×k] · op(b)[k×n]` on contiguous row-major storage,
    /// where `op` transposes when the flag is set.
    #[allow(clippy::too_many_arguments)]
    fn gemm(a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self], m: usize, k: usize, n: usize);
}

impl Real for f32 {
    fn gemm(a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self], m: usize, k: usize, n: usize) {
        assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: every index reachable through these strides lies inside the
        // slices whose lengths were checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn gemm(a: &[Self], ta: bool, b: &[Self], tb: bool, c: &mut [Self], m: usize, k: usize, n: usize) {
        assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: every index reachable through these strides lies inside the
        // slices whose lengths were checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
