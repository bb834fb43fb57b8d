//! Forward primitives and their exact adjoints.
//!
//! Every primitive validates shapes, checks its output for non-finite
//! values, and (when any input is tracked) records itself on the graph.
//! Reductions run in a single fixed order so repeated executions are
//! bit-identical.

use crate::error::{invalid, shape_err, TensorError, TensorResult};
use crate::scalar::Scalar;
use crate::tensor::{numel_of, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { lhs: Tensor<T>, rhs: Tensor<T> },
    Sub { lhs: Tensor<T>, rhs: Tensor<T> },
    Mul { lhs: Tensor<T>, rhs: Tensor<T> },
    Div { lhs: Tensor<T>, rhs: Tensor<T> },
    Affine { input: Tensor<T>, a: T },
    Matmul { lhs: Tensor<T>, rhs: Tensor<T> },
    Reshape { input: Tensor<T> },
    Transpose { input: Tensor<T>, a: usize, b: usize },
    Narrow { input: Tensor<T>, axis: usize, start: usize },
    Concat { inputs: Vec<Tensor<T>>, axis: usize },
    Gelu { input: Tensor<T> },
    Sigmoid { input: Tensor<T> },
    Exp { input: Tensor<T> },
    Log { input: Tensor<T> },
    Sqrt { input: Tensor<T> },
    SoftmaxLast { input: Tensor<T> },
    LayerNorm { input: Tensor<T>, gamma: Tensor<T>, beta: Tensor<T>, mean: Vec<T>, rstd: Vec<T> },
    L2NormalizeLast { input: Tensor<T>, inv_norm: Vec<T> },
    NormLast { input: Tensor<T> },
    MeanAll { input: Tensor<T> },
    MeanAxis { input: Tensor<T>, axis: usize },
    CrossEntropy { logits: Tensor<T>, targets: Vec<usize>, probs: Vec<T> },
    Embed { table: Tensor<T>, ids: Vec<usize> },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add { lhs, rhs }
            | Op::Sub { lhs, rhs }
            | Op::Mul { lhs, rhs }
            | Op::Div { lhs, rhs }
            | Op::Matmul { lhs, rhs } => vec![lhs, rhs],
            Op::Affine { input, .. }
            | Op::Reshape { input }
            | Op::Transpose { input, .. }
            | Op::Narrow { input, .. }
            | Op::Gelu { input }
            | Op::Sigmoid { input }
            | Op::Exp { input }
            | Op::Log { input }
            | Op::Sqrt { input }
            | Op::SoftmaxLast { input }
            | Op::L2NormalizeLast { input, .. }
            | Op::NormLast { input }
            | Op::MeanAll { input }
            | Op::MeanAxis { input, .. } => vec![input],
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::LayerNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Embed { table, .. } => vec![table],
        }
    }
}

fn ensure_finite<T: Scalar>(op: &'static str, data: &[T]) -> TensorResult<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op });
    }
    Ok(())
}

/// Suffix broadcast: rhs shape must equal lhs shape, be a suffix of it,
/// or be a single element.
fn check_broadcast<T: Scalar>(op: &'static str, lhs: &Tensor<T>, rhs: &Tensor<T>) -> TensorResult<()> {
    let ls = lhs.shape();
    let rs = rhs.shape();
    if rhs.numel() == 1 || ls == rs {
        return Ok(());
    }
    if rs.len() <= ls.len() && ls[ls.len() - rs.len()..] == *rs {
        return Ok(());
    }
    Err(shape_err(op, &format!("broadcastable against {ls:?}"), rs))
}

fn binary_elementwise<T: Scalar>(
    name: &'static str,
    lhs: &Tensor<T>,
    rhs: &Tensor<T>,
    f: impl Fn(T, T) -> T,
    op: impl FnOnce(Tensor<T>, Tensor<T>) -> Op<T>,
) -> TensorResult<Tensor<T>> {
    check_broadcast(name, lhs, rhs)?;
    let ld = lhs.data();
    let rd = rhs.data();
    let rn = rd.len();
    let out: Vec<T> = ld.iter().enumerate().map(|(i, &l)| f(l, rd[i % rn])).collect();
    drop(ld);
    drop(rd);
    ensure_finite(name, &out)?;
    let track = lhs.is_tracked() || rhs.is_tracked();
    let recorded = if track { op(lhs.clone(), rhs.clone()) } else { Op::Leaf };
    Ok(Tensor::make(lhs.shape().to_vec(), out, false, track, recorded))
}

fn unary_elementwise<T: Scalar>(
    name: &'static str,
    input: &Tensor<T>,
    f: impl Fn(T) -> T,
    op: impl FnOnce(Tensor<T>) -> Op<T>,
) -> TensorResult<Tensor<T>> {
    let out: Vec<T> = input.data().iter().map(|&v| f(v)).collect();
    ensure_finite(name, &out)?;
    let track = input.is_tracked();
    let recorded = if track { op(input.clone()) } else { Op::Leaf };
    Ok(Tensor::make(input.shape().to_vec(), out, false, track, recorded))
}

/// Accumulate `grad` into `target`, summing over broadcast repeats.
fn reduce_broadcast_grad<T: Scalar>(target: &Tensor<T>, grad: impl Iterator<Item = T>) {
    let rn = target.numel();
    let mut acc = vec![T::ZERO; rn];
    for (i, g) in grad.enumerate() {
        acc[i % rn] += g;
    }
    target.accumulate_grad(&acc);
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        binary_elementwise("add", self, rhs, |a, b| a + b, |lhs, rhs| Op::Add { lhs, rhs })
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        binary_elementwise("sub", self, rhs, |a, b| a - b, |lhs, rhs| Op::Sub { lhs, rhs })
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        binary_elementwise("mul", self, rhs, |a, b| a * b, |lhs, rhs| Op::Mul { lhs, rhs })
    }

    pub fn div(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        binary_elementwise("div", self, rhs, |a, b| a / b, |lhs, rhs| Op::Div { lhs, rhs })
    }

    /// `a * x`, with a host-side constant.
    pub fn scale(&self, a: f64) -> TensorResult<Tensor<T>> {
        let a = T::from_f64(a);
        unary_elementwise("scale", self, |v| a * v, |input| Op::Affine { input, a })
    }

    /// `x + c`, with a host-side constant.
    pub fn add_const(&self, c: f64) -> TensorResult<Tensor<T>> {
        let c = T::from_f64(c);
        unary_elementwise("add_const", self, |v| v + c, |input| Op::Affine { input, a: T::ONE })
    }

    pub fn neg(&self) -> TensorResult<Tensor<T>> {
        self.scale(-1.0)
    }

    /// Matrix product over the last two axes. `rhs` is either 2-D
    /// (shared across leading batch dims) or carries identical leading
    /// dims to `lhs`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.len() < 2 || rs.len() < 2 {
            return Err(shape_err("matmul", "at least 2-D operands", if ls.len() < 2 { ls } else { rs }));
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        if k != k2 {
            return Err(shape_err("matmul", &format!("inner dim {k}"), rs));
        }
        let batch = numel_of(&ls[..ls.len() - 2]);
        let rhs_batched = rs.len() > 2;
        if rhs_batched && ls[..ls.len() - 2] != rs[..rs.len() - 2] {
            return Err(shape_err("matmul", &format!("leading dims {:?}", &ls[..ls.len() - 2]), rs));
        }

        let mut out = vec![T::ZERO; batch * m * n];
        {
            let a = self.data();
            let b = rhs.data();
            for bi in 0..batch {
                let bslice = if rhs_batched { &b[bi * k * n..(bi + 1) * k * n] } else { &b[..] };
                T::gemm(
                    false,
                    false,
                    m,
                    k,
                    n,
                    T::ONE,
                    &a[bi * m * k..(bi + 1) * m * k],
                    bslice,
                    T::ZERO,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        ensure_finite("matmul", &out)?;

        let mut shape = ls[..ls.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let track = self.is_tracked() || rhs.is_tracked();
        let recorded = if track {
            Op::Matmul { lhs: self.clone(), rhs: rhs.clone() }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(shape, out, false, track, recorded))
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(shape_err("reshape", &format!("{} elements", self.numel()), shape));
        }
        let out = self.to_vec();
        let track = self.is_tracked();
        let recorded = if track { Op::Reshape { input: self.clone() } } else { Op::Leaf };
        Ok(Tensor::make(shape.to_vec(), out, false, track, recorded))
    }

    /// Swap two axes (materialized copy).
    pub fn transpose(&self, a: usize, b: usize) -> TensorResult<Tensor<T>> {
        let nd = self.shape().len();
        if a >= nd || b >= nd {
            return Err(invalid("transpose", format!("axes ({a},{b}) out of range for {nd}-D tensor")));
        }
        let mut shape = self.shape().to_vec();
        shape.swap(a, b);
        let out = permuted_swap(&self.data(), self.shape(), a, b);
        let track = self.is_tracked();
        let recorded = if track {
            Op::Transpose { input: self.clone(), a, b }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(shape, out, false, track, recorded))
    }

    /// Contiguous slice `['start', start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> TensorResult<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "narrow",
                format!("range {start}..{} out of bounds for axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let track = self.is_tracked();
        let recorded = if track {
            Op::Narrow { input: self.clone(), axis, start }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(out_shape, out, false, track, recorded))
    }

    /// Partition along `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> TensorResult<Vec<Tensor<T>>> {
        let total: usize = sizes.iter().sum();
        if axis >= self.shape().len() || total != self.shape()[axis] {
            return Err(invalid(
                "split",
                format!("sizes {sizes:?} do not tile axis {axis} of {:?}", self.shape()),
            ));
        }
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            parts.push(self.narrow(axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> TensorResult<Tensor<T>> {
        if parts.is_empty() {
            return Err(invalid("concat", "no inputs"));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(shape_err("concat", &format!("match {first:?} off-axis"), s));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let alen = p.shape()[axis];
                let src = p.data();
                out.extend_from_slice(&src[o * alen * inner..(o + 1) * alen * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = axis_total;
        let track = parts.iter().any(|p| p.is_tracked());
        let recorded = if track {
            Op::Concat { inputs: parts.to_vec(), axis }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(shape, out, false, track, recorded))
    }

    pub fn gelu(&self) -> TensorResult<Tensor<T>> {
        let c = T::from_f64(GELU_C);
        let a = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        unary_elementwise(
            "gelu",
            self,
            |x| {
                let u = c * (x + a * x * x * x);
                half * x * (T::ONE + u.tanh())
            },
            |input| Op::Gelu { input },
        )
    }

    pub fn sigmoid(&self) -> TensorResult<Tensor<T>> {
        unary_elementwise(
            "sigmoid",
            self,
            |x| T::ONE / (T::ONE + (-x).exp()),
            |input| Op::Sigmoid { input },
        )
    }

    pub fn exp(&self) -> TensorResult<Tensor<T>> {
        unary_elementwise("exp", self, |x| x.exp(), |input| Op::Exp { input })
    }

    pub fn log(&self) -> TensorResult<Tensor<T>> {
        unary_elementwise("log", self, |x| x.ln(), |input| Op::Log { input })
    }

    pub fn sqrt(&self) -> TensorResult<Tensor<T>> {
        unary_elementwise("sqrt", self, |x| x.sqrt(), |input| Op::Sqrt { input })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self) -> TensorResult<Tensor<T>> {
        let d = self.last_dim("softmax")?;
        let src = self.data();
        let mut out = vec![T::ZERO; src.len()];
        for r in 0..src.len() / d {
            let row = &src[r * d..(r + 1) * d];
            let mut m = row[0];
            for &v in row {
                m = m.maxv(v);
            }
            let mut sum = T::ZERO;
            for (i, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out[r * d + i] = e;
                sum += e;
            }
            for v in &mut out[r * d..(r + 1) * d] {
                *v = *v / sum;
            }
        }
        drop(src);
        ensure_finite("softmax", &out)?;
        let track = self.is_tracked();
        let recorded = if track { Op::SoftmaxLast { input: self.clone() } } else { Op::Leaf };
        Ok(Tensor::make(self.shape().to_vec(), out, false, track, recorded))
    }

    /// Layer normalization over the last axis with learnable scale and
    /// shift.
    pub fn layernorm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> TensorResult<Tensor<T>> {
        let d = self.last_dim("layernorm")?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err("layernorm", &format!("[{d}] scale/shift"), gamma.shape()));
        }
        let eps = T::from_f64(eps);
        let src = self.data();
        let g = gamma.data();
        let b = beta.data();
        let rows = src.len() / d;
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut out = vec![T::ZERO; src.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let rstd = T::ONE / (var + eps).sqrt();
            for i in 0..d {
                out[r * d + i] = (row[i] - mean) * rstd * g[i] + b[i];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        drop(src);
        drop(g);
        drop(b);
        ensure_finite("layernorm", &out)?;
        let track = self.is_tracked() || gamma.is_tracked() || beta.is_tracked();
        let recorded = if track {
            Op::LayerNorm {
                input: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                mean: means,
                rstd: rstds,
            }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(self.shape().to_vec(), out, false, track, recorded))
    }

    /// Project each last-axis vector onto the unit sphere.
    pub fn l2_normalize_last(&self, eps: f64) -> TensorResult<Tensor<T>> {
        let d = self.last_dim("l2_normalize")?;
        let eps = T::from_f64(eps);
        let src = self.data();
        let rows = src.len() / d;
        let mut out = vec![T::ZERO; src.len()];
        let mut invs = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut sq = T::ZERO;
            for &v in row {
                sq += v * v;
            }
            let inv = T::ONE / (sq + eps).sqrt();
            for i in 0..d {
                out[r * d + i] = row[i] * inv;
            }
            invs.push(inv);
        }
        drop(src);
        ensure_finite("l2_normalize", &out)?;
        let track = self.is_tracked();
        let recorded = if track {
            Op::L2NormalizeLast { input: self.clone(), inv_norm: invs }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(self.shape().to_vec(), out, false, track, recorded))
    }

    /// Euclidean norm over the last axis, keeping it as a size-1 dim.
    pub fn norm_last(&self) -> TensorResult<Tensor<T>> {
        let d = self.last_dim("norm_last")?;
        let src = self.data();
        let rows = src.len() / d;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut sq = T::ZERO;
            for &v in &src[r * d..(r + 1) * d] {
                sq += v * v;
            }
            out.push(sq.sqrt());
        }
        drop(src);
        ensure_finite("norm_last", &out)?;
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let track = self.is_tracked();
        let recorded = if track { Op::NormLast { input: self.clone() } } else { Op::Leaf };
        Ok(Tensor::make(shape, out, false, track, recorded))
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean_all(&self) -> TensorResult<Tensor<T>> {
        let src = self.data();
        let mut sum = T::ZERO;
        for &v in src.iter() {
            sum += v;
        }
        let out = vec![sum / T::from_f64(src.len() as f64)];
        drop(src);
        ensure_finite("mean_all", &out)?;
        let track = self.is_tracked();
        let recorded = if track { Op::MeanAll { input: self.clone() } } else { Op::Leaf };
        Ok(Tensor::make(vec![], out, false, track, recorded))
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&self, axis: usize) -> TensorResult<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(invalid("mean_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let alen = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::ONE / T::from_f64(alen as f64);
        let src = self.data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                let base = (o * alen + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        drop(src);
        ensure_finite("mean_axis", &out)?;
        let mut out_shape = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        let track = self.is_tracked();
        let recorded = if track { Op::MeanAxis { input: self.clone(), axis } } else { Op::Leaf };
        Ok(Tensor::make(out_shape, out, false, track, recorded))
    }

    /// Mean cross-entropy of `[N, V]` logits against class indices,
    /// fused with a stable log-softmax.
    pub fn cross_entropy(&self, targets: &[usize]) -> TensorResult<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(shape_err("cross_entropy", "[N, V] logits", shape));
        }
        let (n, v) = (shape[0], shape[1]);
        if targets.len() != n {
            return Err(invalid("cross_entropy", format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(invalid("cross_entropy", format!("target {bad} out of range for {v} classes")));
        }
        let src = self.data();
        let mut probs = vec![T::ZERO; n * v];
        let mut total = T::ZERO;
        for r in 0..n {
            let row = &src[r * v..(r + 1) * v];
            let mut m = row[0];
            for &x in row {
                m = m.maxv(x);
            }
            let mut sum = T::ZERO;
            for (i, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                probs[r * v + i] = e;
                sum += e;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p = *p / sum;
            }
            let lse = m + sum.ln();
            total += lse - row[targets[r]];
        }
        let out = vec![total / T::from_f64(n as f64)];
        drop(src);
        ensure_finite("cross_entropy", &out)?;
        let track = self.is_tracked();
        let recorded = if track {
            Op::CrossEntropy { logits: self.clone(), targets: targets.to_vec(), probs }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(vec![], out, false, track, recorded))
    }

    /// Row lookup into a `[V, D]` table; gradients scatter-add back.
    pub fn embed(&self, ids: &[usize]) -> TensorResult<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(shape_err("embed", "[V, D] table", shape));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(invalid("embed", format!("id {bad} out of range for table of {v}")));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        drop(src);
        let track = self.is_tracked();
        let recorded = if track {
            Op::Embed { table: self.clone(), ids: ids.to_vec() }
        } else {
            Op::Leaf
        };
        Ok(Tensor::make(vec![ids.len(), d], out, false, track, recorded))
    }

    fn last_dim(&self, op: &'static str) -> TensorResult<usize> {
        match self.shape().last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(shape_err(op, "non-empty last axis", self.shape())),
        }
    }
}

fn permuted_swap<T: Scalar>(src: &[T], shape: &[usize], a: usize, b: usize) -> Vec<T> {
    if a == b {
        return src.to_vec();
    }
    let nd = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = vec![src[0]; src.len()];
    let mut coords = vec![0usize; nd];
    for slot in out.iter_mut() {
        let mut src_idx = 0;
        for (i, &c) in coords.iter().enumerate() {
            // coords enumerate the output layout; map axis a<->b back.
            let src_axis = if i == a { b } else if i == b { a } else { i };
            src_idx += c * in_strides[src_axis];
        }
        *slot = src[src_idx];
        for i in (0..nd).rev() {
            coords[i] += 1;
            if coords[i] < out_shape[i] {
                break;
            }
            coords[i] = 0;
        }
    }
    out
}

/// One reverse step: route `grad` of `tensor` into its parents.
pub(crate) fn backward_step<T: Scalar>(tensor: &Tensor<T>, grad: &[T]) {
    match &tensor.node.op {
        Op::Leaf => {}
        Op::Add { lhs, rhs } => {
            if lhs.is_tracked() {
                lhs.accumulate_grad(grad);
            }
            if rhs.is_tracked() {
                reduce_broadcast_grad(rhs, grad.iter().copied());
            }
        }
        Op::Sub { lhs, rhs } => {
            if lhs.is_tracked() {
                lhs.accumulate_grad(grad);
            }
            if rhs.is_tracked() {
                reduce_broadcast_grad(rhs, grad.iter().map(|&g| -g));
            }
        }
        Op::Mul { lhs, rhs } => {
            let ld = lhs.data();
            let rd = rhs.data();
            let rn = rd.len();
            if lhs.is_tracked() {
                let contrib: Vec<T> = grad.iter().enumerate().map(|(i, &g)| g * rd[i % rn]).collect();
                lhs.accumulate_grad(&contrib);
            }
            if rhs.is_tracked() {
                reduce_broadcast_grad(rhs, grad.iter().enumerate().map(|(i, &g)| g * ld[i]));
            }
        }
        Op::Div { lhs, rhs } => {
            let ld = lhs.data();
            let rd = rhs.data();
            let rn = rd.len();
            if lhs.is_tracked() {
                let contrib: Vec<T> = grad.iter().enumerate().map(|(i, &g)| g / rd[i % rn]).collect();
                lhs.accumulate_grad(&contrib);
            }
            if rhs.is_tracked() {
                reduce_broadcast_grad(
                    rhs,
                    grad.iter().enumerate().map(|(i, &g)| {
                        let b = rd[i % rn];
                        -g * ld[i] / (b * b)
                    }),
                );
            }
        }
        Op::Affine { input, a } => {
            if input.is_tracked() {
                let contrib: Vec<T> = grad.iter().map(|&g| *a * g).collect();
                input.accumulate_grad(&contrib);
            }
        }
        Op::Matmul { lhs, rhs } => {
            let ls = lhs.shape();
            let rs = rhs.shape();
            let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
            let n = rs[rs.len() - 1];
            let batch = numel_of(&ls[..ls.len() - 2]);
            let rhs_batched = rs.len() > 2;
            let ld = lhs.data();
            let rd = rhs.data();
            if lhs.is_tracked() {
                // dL = g @ R^T per batch slice
                let mut contrib = vec![T::ZERO; ld.len()];
                for bi in 0..batch {
                    let bslice = if rhs_batched { &rd[bi * k * n..(bi + 1) * k * n] } else { &rd[..] };
                    T::gemm(
                        false,
                        true,
                        m,
                        n,
                        k,
                        T::ONE,
                        &grad[bi * m * n..(bi + 1) * m * n],
                        bslice,
                        T::ZERO,
                        &mut contrib[bi * m * k..(bi + 1) * m * k],
                    );
                }
                lhs.accumulate_grad(&contrib);
            }
            if rhs.is_tracked() {
                // dR = L^T @ g, accumulated over the batch when rhs is shared
                let mut contrib = vec![T::ZERO; rd.len()];
                for bi in 0..batch {
                    let cslice = if rhs_batched {
                        &mut contrib[bi * k * n..(bi + 1) * k * n]
                    } else {
                        &mut contrib[..]
                    };
                    T::gemm(
                        true,
                        false,
                        k,
                        m,
                        n,
                        T::ONE,
                        &ld[bi * m * k..(bi + 1) * m * k],
                        &grad[bi * m * n..(bi + 1) * m * n],
                        T::ONE,
                        cslice,
                    );
                }
                rhs.accumulate_grad(&contrib);
            }
        }
        Op::Reshape { input } => {
            if input.is_tracked() {
                input.accumulate_grad(grad);
            }
        }
        Op::Transpose { input, a, b } => {
            if input.is_tracked() {
                // The output shape is the input shape with a,b swapped;
                // swapping again restores the input layout.
                let contrib = permuted_swap(grad, tensor.shape(), *a, *b);
                input.accumulate_grad(&contrib);
            }
        }
        Op::Narrow { input, axis, start } => {
            if input.is_tracked() {
                let shape = input.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let alen = shape[*axis];
                let len = tensor.shape()[*axis];
                let mut contrib = vec![T::ZERO; input.numel()];
                for o in 0..outer {
                    let dst = o * alen * inner + start * inner;
                    let src = o * len * inner;
                    contrib[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
                }
                input.accumulate_grad(&contrib);
            }
        }
        Op::Concat { inputs, axis } => {
            let out_shape = tensor.shape();
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let total = out_shape[*axis];
            let mut offset = 0;
            for part in inputs {
                let alen = part.shape()[*axis];
                if part.is_tracked() {
                    let mut contrib = vec![T::ZERO; part.numel()];
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * alen * inner;
                        contrib[dst..dst + alen * inner].copy_from_slice(&grad[src..src + alen * inner]);
                    }
                    part.accumulate_grad(&contrib);
                }
                offset += alen;
            }
        }
        Op::Gelu { input } => {
            if input.is_tracked() {
                let c = T::from_f64(GELU_C);
                let a = T::from_f64(GELU_A);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let src = input.data();
                let contrib: Vec<T> = grad
                    .iter()
                    .zip(src.iter())
                    .map(|(&g, &x)| {
                        let u = c * (x + a * x * x * x);
                        let th = u.tanh();
                        let sech2 = T::ONE - th * th;
                        let du = c * (T::ONE + three * a * x * x);
                        g * (half * (T::ONE + th) + half * x * sech2 * du)
                    })
                    .collect();
                drop(src);
                input.accumulate_grad(&contrib);
            }
        }
        Op::Sigmoid { input } => {
            if input.is_tracked() {
                let out = tensor.data();
                let contrib: Vec<T> =
                    grad.iter().zip(out.iter()).map(|(&g, &y)| g * y * (T::ONE - y)).collect();
                drop(out);
                input.accumulate_grad(&contrib);
            }
        }
        Op::Exp { input } => {
            if input.is_tracked() {
                let out = tensor.data();
                let contrib: Vec<T> = grad.iter().zip(out.iter()).map(|(&g, &y)| g * y).collect();
                drop(out);
                input.accumulate_grad(&contrib);
            }
        }
        Op::Log { input } => {
            if input.is_tracked() {
                let src = input.data();
                let contrib: Vec<T> = grad.iter().zip(src.iter()).map(|(&g, &x)| g / x).collect();
                drop(src);
                input.accumulate_grad(&contrib);
            }
        }
        Op::Sqrt { input } => {
            if input.is_tracked() {
                let out = tensor.data();
                let half = T::from_f64(0.5);
                let contrib: Vec<T> = grad.iter().zip(out.iter()).map(|(&g, &y)| g * half / y).collect();
                drop(out);
                input.accumulate_grad(&contrib);
            }
        }
        Op::SoftmaxLast { input } => {
            if input.is_tracked() {
                let out = tensor.data();
                let d = *tensor.shape().last().unwrap();
                let mut contrib = vec![T::ZERO; out.len()];
                for r in 0..out.len() / d {
                    let y = &out[r * d..(r + 1) * d];
                    let g = &grad[r * d..(r + 1) * d];
                    let mut dot = T::ZERO;
                    for i in 0..d {
                        dot += g[i] * y[i];
                    }
                    for i in 0..d {
                        contrib[r * d + i] = y[i] * (g[i] - dot);
                    }
                }
                drop(out);
                input.accumulate_grad(&contrib);
            }
        }
        Op::LayerNorm { input, gamma, beta, mean, rstd } => {
            let d = *tensor.shape().last().unwrap();
            let rows = tensor.numel() / d;
            let src = input.data();
            let gm = gamma.data();
            let inv_d = T::ONE / T::from_f64(d as f64);
            let mut dx = vec![T::ZERO; src.len()];
            let mut dgamma = vec![T::ZERO; d];
            let mut dbeta = vec![T::ZERO; d];
            for r in 0..rows {
                let x = &src[r * d..(r + 1) * d];
                let g = &grad[r * d..(r + 1) * d];
                let (mu, rs) = (mean[r], rstd[r]);
                let mut sum_gx = T::ZERO;
                let mut sum_gxx = T::ZERO;
                for i in 0..d {
                    let xhat = (x[i] - mu) * rs;
                    let gx = g[i] * gm[i];
                    sum_gx += gx;
                    sum_gxx += gx * xhat;
                    dgamma[i] += g[i] * xhat;
                    dbeta[i] += g[i];
                }
                let mean_gx = sum_gx * inv_d;
                let mean_gxx = sum_gxx * inv_d;
                for i in 0..d {
                    let xhat = (x[i] - mu) * rs;
                    dx[r * d + i] = rs * (g[i] * gm[i] - mean_gx - xhat * mean_gxx);
                }
            }
            drop(src);
            drop(gm);
            if input.is_tracked() {
                input.accumulate_grad(&dx);
            }
            if gamma.is_tracked() {
                gamma.accumulate_grad(&dgamma);
            }
            if beta.is_tracked() {
                beta.accumulate_grad(&dbeta);
            }
        }
        Op::L2NormalizeLast { input, inv_norm } => {
            if input.is_tracked() {
                let out = tensor.data();
                let d = *tensor.shape().last().unwrap();
                let mut contrib = vec![T::ZERO; out.len()];
                for r in 0..out.len() / d {
                    let y = &out[r * d..(r + 1) * d];
                    let g = &grad[r * d..(r + 1) * d];
                    let inv = inv_norm[r];
                    let mut dot = T::ZERO;
                    for i in 0..d {
                        dot += g[i] * y[i];
                    }
                    for i in 0..d {
                        contrib[r * d + i] = inv * (g[i] - y[i] * dot);
                    }
                }
                drop(out);
                input.accumulate_grad(&contrib);
            }
        }
        Op::NormLast { input } => {
            if input.is_tracked() {
                let out = tensor.data();
                let src = input.data();
                let d = *input.shape().last().unwrap();
                let tiny = T::from_f64(1e-12);
                let mut contrib = vec![T::ZERO; src.len()];
                for r in 0..out.len() {
                    let denom = out[r].maxv(tiny);
                    for i in 0..d {
                        contrib[r * d + i] = grad[r] * src[r * d + i] / denom;
                    }
                }
                drop(out);
                drop(src);
                input.accumulate_grad(&contrib);
            }
        }
        Op::MeanAll { input } => {
            if input.is_tracked() {
                let n = input.numel();
                let g = grad[0] / T::from_f64(n as f64);
                input.accumulate_grad(&vec![g; n]);
            }
        }
        Op::MeanAxis { input, axis } => {
            if input.is_tracked() {
                let shape = input.shape();
                let outer: usize = shape[..*axis].iter().product();
                let alen = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = T::ONE / T::from_f64(alen as f64);
                let mut contrib = vec![T::ZERO; input.numel()];
                for o in 0..outer {
                    for a in 0..alen {
                        let base = (o * alen + a) * inner;
                        for i in 0..inner {
                            contrib[base + i] = grad[o * inner + i] * inv;
                        }
                    }
                }
                input.accumulate_grad(&contrib);
            }
        }
        Op::CrossEntropy { logits, targets, probs } => {
            if logits.is_tracked() {
                let v = logits.shape()[1];
                let n = targets.len();
                let g = grad[0] / T::from_f64(n as f64);
                let mut contrib: Vec<T> = probs.iter().map(|&p| g * p).collect();
                for (r, &t) in targets.iter().enumerate() {
                    contrib[r * v + t] = contrib[r * v + t] - g;
                }
                logits.accumulate_grad(&contrib);
            }
        }
        Op::Embed { table, ids } => {
            if table.is_tracked() {
                let d = table.shape()[1];
                let mut contrib = vec![T::ZERO; table.numel()];
                for (n, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        contrib[id * d + j] += grad[n * d + j];
                    }
                }
                table.accumulate_grad(&contrib);
            }
        }
    }
}

/// Mean squared error between two same-shape tensors.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err("mse", &format!("{:?}", a.shape()), b.shape()));
    }
    let d = a.sub(b)?;
    d.mul(&d)?.mean_all()
}

/// `[S, D] -> [H, S, D/H]` for multi-head attention.
pub fn split_heads<T: Scalar>(x: &Tensor<T>, heads: usize) -> TensorResult<Tensor<T>> {
    let s = x.shape();
    if s.len() != 2 || s[1] % heads != 0 {
        return Err(shape_err("split_heads", &format!("[S, D] with D % {heads} == 0"), s));
    }
    x.reshape(&[s[0], heads, s[1] / heads])?.transpose(0, 1)
}

/// Inverse of [`split_heads`].
pub fn merge_heads<T: Scalar>(x: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(shape_err("merge_heads", "[H, S, Dh]", s));
    }
    x.transpose(0, 1)?.reshape(&[s[1], s[0] * s[2]])
}

/// Scaled dot-product attention over `[H, S, Dh]` heads with an
/// optional additive mask broadcast over heads (`[Sq, Sk]`). Mask
/// entries of about `-1e9` zero out a key exactly after softmax.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> TensorResult<Tensor<T>> {
    let qs = q.shape();
    let ks = k.shape();
    if qs.len() != 3 || ks.len() != 3 || qs[2] != ks[2] || qs[0] != ks[0] {
        return Err(shape_err("attention", &format!("[H, S, Dh] matching {qs:?}"), ks));
    }
    let dh = qs[2];
    let mut scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (dh as f64).sqrt())?;
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    scores.softmax_last()?.matmul(v)
}

/// `[H, W, C]` image to `[(H/p)*(W/p), p*p*C]` patch tokens, expressed
/// through reshape and transpose so gradients flow through.
pub fn patchify<T: Scalar>(img: &Tensor<T>, p: usize) -> TensorResult<Tensor<T>> {
    let s = img.shape();
    if s.len() != 3 || s[0] % p != 0 || s[1] % p != 0 {
        return Err(shape_err("patchify", &format!("[H, W, C] divisible by {p}"), s));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    img.reshape(&[h / p, p, w / p, p, c])?
        .transpose(1, 2)?
        .reshape(&[(h / p) * (w / p), p * p * c])
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    tokens: &Tensor<T>,
    grid_h: usize,
    grid_w: usize,
    p: usize,
    c: usize,
) -> TensorResult<Tensor<T>> {
    let s = tokens.shape();
    if s.len() != 2 || s[0] != grid_h * grid_w || s[1] != p * p * c {
        return Err(shape_err("unpatchify", &format!("[{}, {}]", grid_h * grid_w, p * p * c), s));
    }
    tokens
        .reshape(&[grid_h, grid_w, p, p, c])?
        .transpose(1, 2)?
        .reshape(&[grid_h * p, grid_w * p, c])
}
