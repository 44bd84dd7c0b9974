//! Tape-based reverse-mode differentiation over a small fixed operation set.
//!
//! Nodes are appended in evaluation order, so the tape is its own topological
//! order. The tape can be replayed after changing leaf values, which is what
//! the finite-difference checker relies on.

use std::collections::BTreeMap;

use super::tensor::{numel, strides};
use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    /// tanh approximation of GELU
    Gelu,
    Silu,
    Exp,
    Rsqrt,
    Square,
    Neg,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Unary::Silu => x / (1.0 + (-x).exp()),
            Unary::Exp => x.exp(),
            Unary::Rsqrt => 1.0 / x.sqrt(),
            Unary::Square => x * x,
            Unary::Neg => -x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Gelu => {
                let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Unary::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Exp => y,
            Unary::Rsqrt => -0.5 * y * y * y,
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `x · wᵀ` with `w` of shape `[out, in]`.
    Linear(NodeId, NodeId),
    Unary(NodeId, Unary),
    Softmax(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis(NodeId, usize),
    MeanAxis(NodeId, usize),
    Reshape(NodeId, Vec<usize>),
    Permute(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Narrow(NodeId, usize, usize, usize),
}

struct Node<T: Real> {
    op: Op,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Recorded computation with named parameter leaves.
pub struct DiffGraph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
}

impl<T: Real> Default for DiffGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

impl<T: Real> DiffGraph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<NodeId> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::invalid(format!("parameter '{name}' registered twice")));
        }
        let id = self.leaf(value, true);
        self.params.push((name, id));
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op)?;
        let needs_grad = inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::AddScalar(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> Result<NodeId> {
        self.push(Op::Unary(a, f))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumAll(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::MeanAll(a))
    }

    /// Sum along `axis`, keeping it with extent one.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::MeanAxis(a, axis))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        self.push(Op::Permute(a, perm.to_vec()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.push(Op::Concat(parts.to_vec(), axis))
    }

    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::Narrow(a, axis, start, len))
    }

    pub fn split(&mut self, a: NodeId, axis: usize, sizes: &[usize]) -> Result<Vec<NodeId>> {
        let ext = self.value(a).shape().get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != ext {
            return Err(Error::shape(format!("split sizes {sizes:?} do not cover extent {ext}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(a, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Tanh)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Gelu)
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Silu)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Square)
    }

    /// `x · Wᵀ + b` with `W` stored as `[out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let y = self.push(Op::Linear(x, w))?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn eval(&self, op: &Op) -> Result<Tensor<T>> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        Ok(match op {
            Op::Leaf => return Err(Error::invalid("leaf nodes carry their own value")),
            Op::Add(a, b) => broadcast_binary(v(a), v(b), |x, y| x + y)?,
            Op::Sub(a, b) => broadcast_binary(v(a), v(b), |x, y| x - y)?,
            Op::Mul(a, b) => broadcast_binary(v(a), v(b), |x, y| x * y)?,
            Op::Scale(a, c) => {
                let c = T::of(*c);
                v(a).map(|x| x * c)
            }
            Op::AddScalar(a, c) => {
                let c = T::of(*c);
                v(a).map(|x| x + c)
            }
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::Linear(x, w) => v(x).matmul_ex(false, v(w), true)?,
            Op::Unary(a, f) => v(a).map(|x| T::of(f.apply(x.f64()))),
            Op::Softmax(a) => softmax_last(v(a)),
            Op::SumAll(a) => Tensor::scalar(T::of(v(a).sum_f64())),
            Op::MeanAll(a) => Tensor::scalar(T::of(v(a).mean_f64())),
            Op::SumAxis(a, axis) => reduce_axis(v(a), *axis, false)?,
            Op::MeanAxis(a, axis) => reduce_axis(v(a), *axis, true)?,
            Op::Reshape(a, shape) => v(a).reshape(shape)?,
            Op::Permute(a, perm) => v(a).permute(perm)?,
            Op::Concat(parts, axis) => {
                let ts: Vec<&Tensor<T>> = parts.iter().map(v).collect();
                Tensor::concat(&ts, *axis)?
            }
            Op::Narrow(a, axis, start, len) => v(a).narrow(*axis, *start, *len)?,
        })
    }

    /// Overwrites a leaf value; call [`recompute`](Self::recompute) afterwards.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid("set_leaf on a non-leaf node"));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(format!("leaf shape {:?} cannot take {:?}", node.value.shape(), value.shape())));
        }
        node.value = value;
        Ok(())
    }

    /// Re-evaluates every non-leaf node from the current leaf values.
    pub fn recompute(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse pass from a scalar node. Every registered parameter receives a
    /// gradient of its own shape (zeros when it does not reach `loss`).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::shape(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one())?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, g, &mut grads)?;
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = match grads.get_mut(id.0).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.value(*id).shape())?,
            };
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, sum_to(&g, val(*a).shape())?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, sum_to(&g, val(*b).shape())?)?;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, sum_to(&g, val(*a).shape())?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, sum_to(&g, val(*b).shape())?.map(|x| -x))?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let ga = broadcast_binary(&g, val(*b), |x, y| x * y)?;
                    accumulate(grads, *a, sum_to(&ga, val(*a).shape())?)?;
                }
                if wants(*b) {
                    let gb = broadcast_binary(&g, val(*a), |x, y| x * y)?;
                    accumulate(grads, *b, sum_to(&gb, val(*b).shape())?)?;
                }
            }
            Op::Scale(a, c) => {
                let c = T::of(*c);
                accumulate(grads, *a, g.map(|x| x * c))?;
            }
            Op::AddScalar(a, _) => accumulate(grads, *a, g)?,
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, *a, g.matmul_ex(false, bv, true)?)?;
                }
                if wants(*b) {
                    let gb = if bv.rank() == 2 && av.rank() > 2 {
                        let (a2, g2) = (flatten_rows(av)?, flatten_rows(&g)?);
                        a2.matmul_ex(true, &g2, false)?
                    } else {
                        av.matmul_ex(true, &g, false)?
                    };
                    accumulate(grads, *b, gb)?;
                }
            }
            Op::Linear(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                if wants(*x) {
                    accumulate(grads, *x, g.matmul(wv)?)?;
                }
                if wants(*w) {
                    accumulate(grads, *w, flatten_rows(&g)?.matmul_ex(true, &flatten_rows(xv)?, false)?)?;
                }
            }
            Op::Unary(a, f) => {
                let x = val(*a);
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gi, (&xi, &yi))| gi * T::of(f.derivative(xi.f64(), yi.f64())))
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), data))?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut data = Vec::with_capacity(y.numel());
                for (gr, yr) in g.data().chunks(n).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a.f64() * b.f64()).sum();
                    let dot = T::of(dot);
                    data.extend(gr.iter().zip(yr).map(|(&gi, &yi)| yi * (gi - dot)));
                }
                accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), data))?;
            }
            Op::SumAll(a) => {
                let s = g.item()?;
                accumulate(grads, *a, Tensor::full(val(*a).shape(), s)?)?;
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let s = T::of(g.item()?.f64() / x.numel() as f64);
                accumulate(grads, *a, Tensor::full(x.shape(), s)?)?;
            }
            Op::SumAxis(a, _) | Op::MeanAxis(a, _) => {
                let x = val(*a);
                let mut ga = broadcast_binary(&Tensor::zeros(x.shape())?, &g, |_, y| y)?;
                if let Op::MeanAxis(_, axis) = node.op {
                    let c = T::of(1.0 / x.shape()[axis] as f64);
                    ga = ga.map(|v| v * c);
                }
                accumulate(grads, *a, ga)?;
            }
            Op::Reshape(a, _) => accumulate(grads, *a, g.reshape(val(*a).shape())?)?,
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                accumulate(grads, *a, g.permute(&inv)?)?;
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if wants(p) {
                        accumulate(grads, p, g.narrow(*axis, start, len)?)?;
                    }
                    start += len;
                }
            }
            Op::Narrow(a, axis, start, len) => {
                let shape = val(*a).shape();
                let mut parts = Vec::new();
                if *start > 0 {
                    let mut s = shape.to_vec();
                    s[*axis] = *start;
                    parts.push(Tensor::zeros(&s)?);
                }
                parts.push(g);
                let tail = shape[*axis] - start - len;
                if tail > 0 {
                    let mut s = shape.to_vec();
                    s[*axis] = tail;
                    parts.push(Tensor::zeros(&s)?);
                }
                let refs: Vec<&Tensor<T>> = parts.iter().collect();
                accumulate(grads, *a, Tensor::concat(&refs, *axis)?)?;
            }
        }
        Ok(())
    }
}

/// Collapses every leading axis into rows: `[.., n]` to `[N, n]`.
fn flatten_rows<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *t.shape().last().expect("rank >= 1");
    t.reshape(&[t.numel() / n, n])
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Linear(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Unary(a, _)
        | Op::Softmax(a)
        | Op::SumAll(a)
        | Op::MeanAll(a)
        | Op::SumAxis(a, _)
        | Op::MeanAxis(a, _)
        | Op::Reshape(a, _)
        | Op::Permute(a, _)
        | Op::Narrow(a, _, _, _) => vec![*a],
        Op::Concat(parts, _) => parts.clone(),
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    let slot = &mut grads[id.0];
    match slot {
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(Error::shape(format!("gradient shape {:?} vs {:?}", acc.shape(), g.shape())));
            }
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
    Ok(())
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` right-aligned into `out_shape`, zero on broadcast axes.
fn aligned_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out_shape.len() - shape.len();
    (0..out_shape.len()).map(|i| if i < off || shape[i - off] == 1 { 0 } else { s[i - off] }).collect()
}

pub(crate) fn broadcast_binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = aligned_strides(a.shape(), &out_shape);
    let sb = aligned_strides(b.shape(), &out_shape);
    let n = numel(&out_shape);
    let r = out_shape.len();
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        data.push(f(ad[oa], bd[ob]));
        for ax in (0..r).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sums `g` down to `shape` over broadcast axes, accumulating in `f64`.
fn sum_to<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    let out_shape = g.shape();
    if broadcast_shape(shape, out_shape)? != out_shape {
        return Err(Error::shape(format!("cannot reduce {out_shape:?} to {shape:?}")));
    }
    let st = aligned_strides(shape, out_shape);
    let r = out_shape.len();
    let mut acc = vec![0.0f64; numel(shape)];
    let mut idx = vec![0usize; r];
    let mut ot = 0usize;
    for &v in g.data() {
        acc[ot] += v.f64();
        for ax in (0..r).rev() {
            idx[ax] += 1;
            ot += st[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            ot -= st[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), acc.into_iter().map(T::of).collect()))
}

fn softmax_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().unwrap();
    let mut data = Vec::with_capacity(x.numel());
    for row in x.data().chunks(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let e: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.into_iter().map(|v| T::of(v / s)));
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn reduce_axis<T: Real>(x: &Tensor<T>, axis: usize, mean: bool) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!("axis {axis} out of range for rank {}", x.rank())));
    }
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let ext = shape[axis];
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let s: f64 = (0..ext).map(|k| x.data()[(o * ext + k) * inner + i].f64()).sum();
            out.push(T::of(if mean { s / ext as f64 } else { s }));
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    Ok(Tensor::from_parts(out_shape, out))
}
