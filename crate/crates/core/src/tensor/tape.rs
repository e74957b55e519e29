use std::cell::{Ref, RefCell};

use super::kernels;
use super::{ShapeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceLast(Var, usize, usize),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskMul(Var, Vec<f64>),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    SumLast(Var),
    Sum(Var),
    Sqrt(Var),
    Recip(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order for reverse-mode differentiation.
///
/// A tape is single-threaded. Every method that combines values checks shapes
/// and returns a [`ShapeError`] naming both operands on mismatch; apart from
/// [`Tape::scale`] nothing broadcasts implicitly.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), ShapeError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(ShapeError::new(op, a.shape(), b.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn unary(&self, a: Var, f: impl FnOnce(&Tensor) -> Result<(Tensor, Op), ShapeError>) -> Result<Var, ShapeError> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value)?
        };
        let g = self.needs(&[a]);
        Ok(self.push(value, op, g))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op), ShapeError>,
    ) -> Result<Var, ShapeError> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)?
        };
        let g = self.needs(&[a, b]);
        Ok(self.push(value, op, g))
    }

    fn zip(op: &'static str, x: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, ShapeError> {
        same_shape(op, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::new(x.shape(), data).expect("same shape"))
    }

    fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, |x, y| Ok((Self::zip("add", x, y, |p, q| p + q)?, Op::Add(a, b))))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, |x, y| Ok((Self::zip("sub", x, y, |p, q| p - q)?, Op::Sub(a, b))))
    }

    /// Element-wise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, |x, y| Ok((Self::zip("mul", x, y, |p, q| p * q)?, Op::Mul(a, b))))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| Ok((Self::map(x, |v| v * c), Op::Scale(a, c))))
            .expect("scale is shape-preserving")
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, |x, y| {
            let (xs, ys) = (x.shape(), y.shape());
            if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[0] {
                return Err(ShapeError::new("matmul", xs, ys));
            }
            let (m, k, n) = (xs[0], xs[1], ys[1]);
            let data = kernels::matmul(x.data(), y.data(), m, k, n);
            Ok((Tensor::new(&[m, n], data)?, Op::MatMul(a, b)))
        })
    }

    /// `[B,m,k] x [B,k,n] -> [B,m,n]`
    pub fn batch_matmul(&self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(a, b, |x, y| {
            let (xs, ys) = (x.shape(), y.shape());
            if xs.len() != 3 || ys.len() != 3 || xs[0] != ys[0] || xs[2] != ys[1] {
                return Err(ShapeError::new("batch_matmul", xs, ys));
            }
            let (bsz, m, k, n) = (xs[0], xs[1], xs[2], ys[2]);
            let mut data = Vec::with_capacity(bsz * m * n);
            for i in 0..bsz {
                data.extend(kernels::matmul(
                    &x.data()[i * m * k..(i + 1) * m * k],
                    &y.data()[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            Ok((Tensor::new(&[bsz, m, n], data)?, Op::BatchMatMul(a, b)))
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var, ShapeError> {
        let axes = axes.to_vec();
        self.unary(a, |x| {
            let mut sorted = axes.clone();
            sorted.sort_unstable();
            if sorted != (0..x.rank()).collect::<Vec<_>>() {
                return Err(ShapeError::new("permute", x.shape(), &axes));
            }
            let (shape, data) = kernels::permute(x.data(), x.shape(), &axes);
            Ok((Tensor::new(&shape, data)?, Op::Permute(a, axes.clone())))
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose(&self, a: Var) -> Result<Var, ShapeError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(ShapeError::new("transpose", &self.shape(a), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        self.unary(a, |x| Ok((x.clone().reshaped(shape)?, Op::Reshape(a))))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var, ShapeError> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts.first().ok_or_else(|| ShapeError::new("concat", &[], &[]))?.0].value;
            let shape0 = first.shape().to_vec();
            if axis >= shape0.len() {
                return Err(ShapeError::new("concat", &shape0, &[axis]));
            }
            let outer: usize = shape0[..axis].iter().product();
            let inner: usize = shape0[axis + 1..].iter().product();
            let mut total = 0;
            for p in parts {
                let s = nodes[p.0].value.shape();
                if s.len() != shape0.len() || s[..axis] != shape0[..axis] || s[axis + 1..] != shape0[axis + 1..] {
                    return Err(ShapeError::new("concat", &shape0, s));
                }
                total += s[axis];
            }
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let t = &nodes[p.0].value;
                    let w = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                }
            }
            let mut shape = shape0;
            shape[axis] = total;
            Tensor::new(&shape, data)?
        };
        let g = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), g))
    }

    /// Row lookup: `table[idx[i], ..]` for each `i`.
    pub fn gather(&self, table: Var, idx: &[usize]) -> Result<Var, ShapeError> {
        let idx = idx.to_vec();
        self.unary(table, |t| {
            let n = t.shape().first().copied().unwrap_or(0);
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(ShapeError::new("gather", t.shape(), &[bad]));
            }
            let w = t.len() / n.max(1);
            let mut data = Vec::with_capacity(idx.len() * w);
            for &i in &idx {
                data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Ok((Tensor::new(&shape, data)?, Op::Gather(table, idx.clone())))
        })
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        self.unary(a, |t| {
            let n = t.shape().first().copied().unwrap_or(0);
            if start > end || end > n {
                return Err(ShapeError::new("slice_rows", t.shape(), &[start, end]));
            }
            let w = t.len() / n.max(1);
            let mut shape = t.shape().to_vec();
            shape[0] = end - start;
            Ok((Tensor::new(&shape, t.data()[start * w..end * w].to_vec())?, Op::SliceRows(a, start)))
        })
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&self, a: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        self.unary(a, |t| {
            let w = t.last_dim();
            if start > end || end > w || t.rank() == 0 {
                return Err(ShapeError::new("slice_last", t.shape(), &[start, end]));
            }
            let data = t.data().chunks(w).flat_map(|r| r[start..end].iter().copied()).collect();
            let mut shape = t.shape().to_vec();
            *shape.last_mut().expect("rank checked") = end - start;
            Ok((Tensor::new(&shape, data)?, Op::SliceLast(a, start, end)))
        })
    }

    /// Averages rows of `[n, d]` into `n_segments` groups; empty groups are zero rows.
    pub fn segment_mean(&self, a: Var, segments: &[usize], n_segments: usize) -> Result<Var, ShapeError> {
        let segments = segments.to_vec();
        self.unary(a, |t| {
            if t.rank() != 2 || t.shape()[0] != segments.len() {
                return Err(ShapeError::new("segment_mean", t.shape(), &[segments.len()]));
            }
            if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
                return Err(ShapeError::new("segment_mean", t.shape(), &[bad, n_segments]));
            }
            let d = t.shape()[1];
            let mut counts = vec![0usize; n_segments];
            let mut out = vec![0.0; n_segments * d];
            for (i, &s) in segments.iter().enumerate() {
                counts[s] += 1;
                for (o, v) in out[s * d..(s + 1) * d].iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            for (s, &c) in counts.iter().enumerate() {
                if c > 1 {
                    let inv = 1.0 / c as f64;
                    out[s * d..(s + 1) * d].iter_mut().for_each(|v| *v *= inv);
                }
            }
            Ok((Tensor::new(&[n_segments, d], out)?, Op::SegmentMean(a, segments.clone(), counts)))
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| Ok((Self::map(x, |v| v.max(0.0)), Op::Relu(a))))
            .expect("relu is shape-preserving")
    }

    /// Softmax over the last axis. `-inf` entries get probability exactly 0.
    pub fn softmax(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let w = x.last_dim();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(w) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            Ok((Tensor::new(x.shape(), data)?, Op::Softmax(a)))
        })
        .expect("softmax is shape-preserving")
    }

    pub fn log_softmax(&self, a: Var) -> Var {
        self.unary(a, |x| {
            let w = x.last_dim();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(w) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Ok((Tensor::new(x.shape(), data)?, Op::LogSoftmax(a)))
        })
        .expect("log_softmax is shape-preserving")
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, ShapeError> {
        let (value, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let (t, g, b) = (&nodes[x.0].value, &nodes[gain.0].value, &nodes[bias.0].value);
            let d = t.last_dim();
            if g.shape() != [d] || b.shape() != [d] {
                return Err(ShapeError::new("layer_norm", t.shape(), g.shape()));
            }
            let rows = t.len() / d.max(1);
            let mut xhat = Vec::with_capacity(t.len());
            let mut inv_std = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(t.len());
            for row in t.data().chunks(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std.push(inv);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * inv;
                    xhat.push(h);
                    out.push(h * g.data()[j] + b.data()[j]);
                }
            }
            (Tensor::new(t.shape(), out)?, xhat, inv_std)
        };
        let g = self.needs(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            g,
        ))
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-p)` for dropout).
    pub fn dropout(&self, a: Var, mask: &Tensor) -> Result<Var, ShapeError> {
        self.unary(a, |x| {
            same_shape("dropout", x, mask)?;
            let data = x.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
            Ok((Tensor::new(x.shape(), data)?, Op::MaskMul(a, mask.data().to_vec())))
        })
    }

    /// Adds a vector `b[n]` to every length-`n` row of `x[.., n]`.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary(x, b, |t, bias| {
            let n = t.last_dim();
            if bias.shape() != [n] {
                return Err(ShapeError::new("add_bias", t.shape(), bias.shape()));
            }
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, c) in row.iter_mut().zip(bias.data()) {
                    *v += c;
                }
            }
            Ok((Tensor::new(t.shape(), data)?, Op::AddBias(x, b)))
        })
    }

    /// Multiplies row `i` of `x[r, n]` by `c[i]`, with `c` of shape `[r]`.
    pub fn scale_rows(&self, x: Var, c: Var) -> Result<Var, ShapeError> {
        self.binary(x, c, |t, s| {
            let n = t.last_dim();
            if t.rank() == 0 || s.shape() != &t.shape()[..t.rank() - 1] {
                return Err(ShapeError::new("scale_rows", t.shape(), s.shape()));
            }
            let mut data = t.data().to_vec();
            for (row, &k) in data.chunks_mut(n).zip(s.data()) {
                row.iter_mut().for_each(|v| *v *= k);
            }
            Ok((Tensor::new(t.shape(), data)?, Op::ScaleRows(x, c)))
        })
    }

    /// Sums the last axis away.
    pub fn sum_last(&self, a: Var) -> Result<Var, ShapeError> {
        self.unary(a, |t| {
            if t.rank() == 0 {
                return Err(ShapeError::new("sum_last", t.shape(), &[]));
            }
            let n = t.last_dim();
            let data = t.data().chunks(n.max(1)).map(|r| r.iter().sum()).collect();
            Ok((Tensor::new(&t.shape()[..t.rank() - 1], data)?, Op::SumLast(a)))
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |t| Ok((Tensor::scalar(t.sum()), Op::Sum(a))))
            .expect("sum accepts any shape")
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| Ok((Self::map(x, f64::sqrt), Op::Sqrt(a))))
            .expect("sqrt is shape-preserving")
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, |x| Ok((Self::map(x, f64::recip), Op::Recip(a))))
            .expect("recip is shape-preserving")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads, ShapeError> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if nodes[loss.0].value.len() != 1 {
            return Err(ShapeError::new("backward (loss must be scalar)", nodes[loss.0].value.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(nodes[loss.0].value.shape(), 1.0));

        let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, Self::map(&g, |v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = Self::zip("mul", &g, val(*b), |p, q| p * q).expect("shape");
                    let gb = Self::zip("mul", &g, val(*a), |p, q| p * q).expect("shape");
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, Self::map(&g, |v| v * c)),
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                    if nodes[a.0].requires_grad {
                        let ga = kernels::matmul_bt(g.data(), y.data(), m, n, k);
                        acc(&mut grads, *a, Tensor::new(&[m, k], ga).expect("shape"));
                    }
                    if nodes[b.0].requires_grad {
                        let gb = kernels::matmul_at(x.data(), g.data(), m, k, n);
                        acc(&mut grads, *b, Tensor::new(&[k, n], gb).expect("shape"));
                    }
                }
                Op::BatchMatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let (bsz, m, k, n) = (x.shape()[0], x.shape()[1], x.shape()[2], y.shape()[2]);
                    let mut ga = Vec::with_capacity(bsz * m * k);
                    let mut gb = Vec::with_capacity(bsz * k * n);
                    for i in 0..bsz {
                        let gi = &g.data()[i * m * n..(i + 1) * m * n];
                        let xi = &x.data()[i * m * k..(i + 1) * m * k];
                        let yi = &y.data()[i * k * n..(i + 1) * k * n];
                        ga.extend(kernels::matmul_bt(gi, yi, m, n, k));
                        gb.extend(kernels::matmul_at(xi, gi, m, k, n));
                    }
                    acc(&mut grads, *a, Tensor::new(&[bsz, m, k], ga).expect("shape"));
                    acc(&mut grads, *b, Tensor::new(&[bsz, k, n], gb).expect("shape"));
                }
                Op::Permute(a, axes) => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    let (shape, data) = kernels::permute(g.data(), g.shape(), &inverse);
                    acc(&mut grads, *a, Tensor::new(&shape, data).expect("shape"));
                }
                Op::Reshape(a) => acc(&mut grads, *a, g.reshaped(&shapes[a.0]).expect("shape")),
                Op::Concat(parts, axis) => {
                    let outer: usize = g.shape()[..*axis].iter().product();
                    let inner: usize = g.shape()[axis + 1..].iter().product();
                    let mut pieces: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(val(*p).len())).collect();
                    let mut off = 0;
                    for _ in 0..outer {
                        for (j, p) in parts.iter().enumerate() {
                            let w = shapes[p.0][*axis] * inner;
                            pieces[j].extend_from_slice(&g.data()[off..off + w]);
                            off += w;
                        }
                    }
                    for (p, data) in parts.iter().zip(pieces) {
                        acc(&mut grads, *p, Tensor::new(&shapes[p.0], data).expect("shape"));
                    }
                }
                Op::Gather(t, idx) => {
                    if nodes[t.0].requires_grad {
                        let mut gt = Tensor::zeros(&shapes[t.0]);
                        let w = g.len() / idx.len().max(1);
                        for (r, &i) in idx.iter().enumerate() {
                            for (d, s) in gt.data_mut()[i * w..(i + 1) * w].iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                                *d += s;
                            }
                        }
                        acc(&mut grads, *t, gt);
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Tensor::zeros(&shapes[a.0]);
                    let w = g.len() / g.shape()[0].max(1);
                    ga.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::SliceLast(a, start, end) => {
                    let mut ga = Tensor::zeros(&shapes[a.0]);
                    let w = ga.last_dim();
                    let k = end - start;
                    for (dst, src) in ga.data_mut().chunks_mut(w).zip(g.data().chunks(k.max(1))) {
                        dst[*start..*end].copy_from_slice(src);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentMean(a, segs, counts) => {
                    let d = g.shape()[1];
                    let mut data = Vec::with_capacity(segs.len() * d);
                    for &s in segs {
                        let inv = 1.0 / counts[s] as f64;
                        data.extend(g.data()[s * d..(s + 1) * d].iter().map(|v| v * inv));
                    }
                    acc(&mut grads, *a, Tensor::new(&shapes[a.0], data).expect("shape"));
                }
                Op::Relu(a) => {
                    let ga = Self::zip("relu", &g, val(*a), |p, x| if x > 0.0 { p } else { 0.0 }).expect("shape");
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let w = y.last_dim();
                    let mut data = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(w).zip(g.data().chunks(w)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        data.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), data).expect("shape"));
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let w = y.last_dim();
                    let mut data = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(w).zip(g.data().chunks(w)) {
                        let total: f64 = gr.iter().sum();
                        data.extend(yr.iter().zip(gr).map(|(p, q)| q - p.exp() * total));
                    }
                    acc(&mut grads, *a, Tensor::new(y.shape(), data).expect("shape"));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gain).data();
                    let d = gv.len();
                    let mut gx = Vec::with_capacity(g.len());
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for ((gr, hr), inv) in g.data().chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            gg[j] += gr[j] * hr[j];
                            gb[j] += gr[j];
                        }
                        let n = d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gx.push(inv / n * (n * dh - sum_dh - hr[j] * sum_dh_h));
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(&shapes[x.0], gx).expect("shape"));
                    acc(&mut grads, *gain, Tensor::new(&[d], gg).expect("shape"));
                    acc(&mut grads, *bias, Tensor::new(&[d], gb).expect("shape"));
                }
                Op::MaskMul(a, mask) => {
                    let data = g.data().iter().zip(mask).map(|(p, m)| p * m).collect();
                    acc(&mut grads, *a, Tensor::new(g.shape(), data).expect("shape"));
                }
                Op::AddBias(x, b) => {
                    let n = g.last_dim();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *b, Tensor::new(&[n], gb).expect("shape"));
                    acc(&mut grads, *x, g);
                }
                Op::ScaleRows(x, c) => {
                    let n = g.last_dim();
                    let (xv, cv) = (val(*x), val(*c));
                    let gc: Vec<f64> = g
                        .data()
                        .chunks(n)
                        .zip(xv.data().chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(p, q)| p * q).sum())
                        .collect();
                    let mut gx = g.data().to_vec();
                    for (row, &k) in gx.chunks_mut(n).zip(cv.data()) {
                        row.iter_mut().for_each(|v| *v *= k);
                    }
                    acc(&mut grads, *c, Tensor::new(&shapes[c.0], gc).expect("shape"));
                    acc(&mut grads, *x, Tensor::new(&shapes[x.0], gx).expect("shape"));
                }
                Op::SumLast(a) => {
                    let n = shapes[a.0].last().copied().unwrap_or(1);
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                    acc(&mut grads, *a, Tensor::new(&shapes[a.0], data).expect("shape"));
                }
                Op::Sum(a) => acc(&mut grads, *a, Tensor::filled(&shapes[a.0], g.item())),
                Op::Sqrt(a) => {
                    let ga = Self::zip("sqrt", &g, &node.value, |p, y| p * 0.5 / y).expect("shape");
                    acc(&mut grads, *a, ga);
                }
                Op::Recip(a) => {
                    let ga = Self::zip("recip", &g, &node.value, |p, y| -p * y * y).expect("shape");
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(Grads { grads, shapes })
    }
}
