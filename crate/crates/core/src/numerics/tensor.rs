use super::Real;
use crate::{Error, Result};

/// Dense row-major tensor. Every extent is at least one and the element
/// count always equals the product of the shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {} elements, got {}", numel(&shape), data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Shape is trusted by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(shape.iter().all(|&e| e > 0));
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self::from_parts(shape.to_vec(), vec![value; numel(shape)]))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() {
            return Err(Error::shape(format!("index rank {} for tensor of rank {}", index.len(), self.rank())));
        }
        let mut off = 0;
        for (ax, (&i, &e)) in index.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(Error::shape(format!("index {i} out of range on axis {ax} (extent {e})")));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], v: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = v;
        Ok(())
    }

    /// Element value for a scalar (single-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|v| U::of(v.f64())).collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self::from_parts(self.shape.clone(), self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a.f64() - b.f64()).abs()).fold(0.0, f64::max))
    }

    /// Sum of all entries, accumulated in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.numel() as f64
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("invalid permutation {perm:?} for rank {r}")));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        // Drop unit axes and merge neighbours that stay contiguous in the source.
        let mut dims: Vec<(usize, usize)> = Vec::with_capacity(r);
        for (&p, &len) in perm.iter().zip(&out_shape) {
            if len == 1 {
                continue;
            }
            match dims.last_mut() {
                Some((plen, pstride)) if *pstride == in_strides[p] * len => {
                    *plen *= len;
                    *pstride = in_strides[p];
                }
                _ => dims.push((len, in_strides[p])),
            }
        }
        let n = self.numel();
        let (inner, inner_stride) = dims.pop().unwrap_or((1, 1));
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        let mut src = 0usize;
        for _ in 0..n / inner {
            if inner_stride == 1 {
                data.extend_from_slice(&self.data[src..src + inner]);
            } else {
                data.extend((0..inner).map(|i| self.data[src + i * inner_stride]));
            }
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                src += dims[ax].1;
                if idx[ax] < dims[ax].0 {
                    break;
                }
                src -= dims[ax].1 * dims[ax].0;
                idx[ax] = 0;
            }
        }
        Ok(Self::from_parts(out_shape, data))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[&Self], axis: usize) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| Error::invalid("concat of no tensors"))?;
        let r = first.rank();
        if axis >= r {
            return Err(Error::shape(format!("axis {axis} out of range for rank {r}")));
        }
        for t in tensors {
            if t.rank() != r || t.shape.iter().zip(&first.shape).enumerate().any(|(ax, (a, b))| ax != axis && a != b) {
                return Err(Error::shape(format!("concat along {axis}: {:?} vs {:?}", first.shape, t.shape)));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for t in tensors {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::shape(format!("axis {axis} out of range for rank {}", self.rank())));
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow [{start}, {}) out of extent {} on axis {axis}",
                start + len,
                self.shape[axis]
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let ext = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Self::from_parts(shape, data))
    }

    /// Splits along `axis` into consecutive blocks of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.rank() {
            return Err(Error::shape(format!("axis {axis} out of range for rank {}", self.rank())));
        }
        if sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::shape(format!("split sizes {sizes:?} do not cover extent {}", self.shape[axis])));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let t = self.narrow(axis, start, len);
                start += len;
                t
            })
            .collect()
    }

    /// Batched matrix product. `self` is `[.., m, k]`; `rhs` is either
    /// `[k, n]` (shared across the batch) or `[.., k, n]` with identical
    /// leading extents.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        self.matmul_ex(false, rhs, false)
    }

    /// [`matmul`](Self::matmul) with either operand's last two axes swapped
    /// first, without materializing the transpose.
    pub fn matmul_ex(&self, ta: bool, rhs: &Self, tb: bool) -> Result<Self> {
        if self.rank() < 2 || rhs.rank() < 2 {
            return Err(Error::shape("matmul needs rank >= 2 operands"));
        }
        let last2 = |t: &Self, tr: bool| {
            let (r, c) = (t.shape[t.rank() - 2], t.shape[t.rank() - 1]);
            if tr {
                (c, r)
            } else {
                (r, c)
            }
        };
        let ((m, k), (k2, n)) = (last2(self, ta), last2(rhs, tb));
        let batch_a = &self.shape[..self.rank() - 2];
        let batch_b = &rhs.shape[..rhs.rank() - 2];
        if k != k2 || !(batch_b.is_empty() || batch_a == batch_b) {
            return Err(Error::shape(format!("matmul {:?} @ {:?}", self.shape, rhs.shape)));
        }
        let batches: usize = batch_a.iter().product();
        let mut out = vec![T::zero(); batches * m * n];
        if batch_b.is_empty() && !ta {
            // Fold the batch into rows for one large product.
            T::gemm(&self.data, false, &rhs.data, tb, &mut out, batches * m, k, n);
        } else {
            for b in 0..batches {
                let a = &self.data[b * m * k..(b + 1) * m * k];
                let bm = if batch_b.is_empty() { &rhs.data[..] } else { &rhs.data[b * k * n..(b + 1) * k * n] };
                T::gemm(a, ta, bm, tb, &mut out[b * m * n..(b + 1) * m * n], m, k, n);
            }
        }
        let mut shape = batch_a.to_vec();
        shape.extend([m, n]);
        Ok(Self::from_parts(shape, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor {
        let n = numel(shape);
        Tensor::new(shape.to_vec(), (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn concat_shape_arithmetic() {
        let a = seq(&[2, 3]);
        let b = seq(&[2, 5]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(c.get(&[1, 0]).unwrap(), 3.0);
        assert_eq!(c.get(&[1, 3]).unwrap(), 5.0);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = seq(&[4]);
        assert_eq!(Tensor::concat(&[&a], 0).unwrap(), a);
    }

    #[test]
    fn concat_errors() {
        let a = seq(&[2, 3]);
        let b = seq(&[3, 3]);
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
        assert!(Tensor::concat(&[&a, &a], 2).is_err());
    }

    #[test]
    fn permute_matches_index_map() {
        let a = seq(&[2, 3, 4]);
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.get(&[k, i, j]).unwrap(), a.get(&[i, j, k]).unwrap());
                }
            }
        }
        assert!(a.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn matmul_transposed_operands() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i[0] * 12 + i[1] * 4 + i[2]) as f64 * 0.1).unwrap();
        let b = Tensor::<f64>::from_fn(&[4, 5], |i| (i[0] as f64 - i[1] as f64).sin()).unwrap();
        let c = Tensor::<f64>::from_fn(&[2, 3, 5], |i| (i[0] + i[1] * i[2]) as f64).unwrap();
        let expect = a.matmul(&b).unwrap();
        assert!(a.matmul_ex(false, &b.transpose().unwrap(), true).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        let at = a.transpose().unwrap();
        assert!(at.matmul_ex(true, &b, false).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        let expect = at.matmul(&c).unwrap();
        assert!(a.matmul_ex(true, &c, false).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        assert!(a.matmul_ex(true, &b, false).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0f32, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn from_fn_row_major() {
        let t = Tensor::<f32>::from_fn(&[2, 3], |i| (i[0] * 10 + i[1]) as f32).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
    }
}
