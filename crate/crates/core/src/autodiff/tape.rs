//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value and the handles of its
//! inputs. [`Tape::backward`] walks the nodes in reverse creation order,
//! which is a valid topological order since inputs always precede outputs.

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    DivScalar(Var, Var),
    Exp(Var),
    Relu(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Gather { src: Var, index: Vec<usize> },
    Pick { src: Var, index: Vec<usize> },
    Mean(Var),
    Sum(Var),
    MeanAxis { src: Var, axis: usize },
    L1Norm(Var),
    L2Norm(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Slice { src: Var, axis: usize, start: usize },
    Softmax { src: Var, axis: usize },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every node of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` did not influence the root.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Discrete choices made by the forward pass: graph size, relu and L1
    /// input signs, and gather/pick indices. Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = vec![self.nodes.len()];
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) | Op::L1Norm(a) => {
                    sig.extend(self.value(*a).data().iter().map(|&x| (x > T::zero()) as usize + (x < T::zero()) as usize * 2));
                }
                Op::Gather { index, .. } | Op::Pick { index, .. } => sig.extend_from_slice(index),
                _ => {}
            }
        }
        sig
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { op: name.into() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, (self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var> {
        let k = T::from_f64(s);
        let v = self.value(a).map(|x| x * k);
        self.push("scalar_mul", v, Op::ScalarMul(a, s), &[a])
    }

    /// Divides every element of `a` by the single-element tensor `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("div_scalar", (self.shape(a), self.shape(s))));
        }
        let d = self.value(s).item();
        let v = self.value(a).map(|x| x / d);
        self.push("div_scalar", v, Op::DivScalar(a, s), &[a, s])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.exp());
        self.push("exp", v, Op::Exp(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a), &[a])
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", (&base, axis)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(d, &n)| d == axis || n == base[d]);
            if !compatible {
                return Err(Error::shape("concat", (&base, s)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(out_shape, data)?;
        self.push("concat", v, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Selects rows of a 2-D tensor: `out[k] = src[index[k]]`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(src).dims2("gather")?;
        if index.is_empty() {
            return Err(Error::shape("gather", "empty index"));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(&self.value(src).data()[i * cols..(i + 1) * cols]);
        }
        let v = Tensor::new(vec![index.len(), cols], data)?;
        self.push("gather", v, Op::Gather { src, index: index.to_vec() }, &[src])
    }

    /// Picks one element per row of a 2-D tensor: `out[i] = src[i, index[i]]`.
    pub fn pick(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(src).dims2("pick")?;
        if index.len() != rows {
            return Err(Error::shape("pick", (rows, index.len())));
        }
        let mut data = Vec::with_capacity(rows);
        for (i, &j) in index.iter().enumerate() {
            if j >= cols {
                return Err(Error::IndexOutOfRange { index: j, len: cols });
            }
            data.push(self.value(src).data()[i * cols + j]);
        }
        let v = Tensor::new(vec![rows], data)?;
        self.push("pick", v, Op::Pick { src, index: index.to_vec() }, &[src])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let v = Tensor::scalar(s / T::from_f64(t.len() as f64));
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean_axis", (&shape, axis)));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let scale = T::from_f64(1.0 / len as f64);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d = *d + x;
                }
            }
        }
        data.iter_mut().for_each(|d| *d = *d * scale);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let v = Tensor::new(out_shape, data)?;
        self.push("mean_axis", v, Op::MeanAxis { src: a, axis }, &[a])
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        self.push("l1_norm", Tensor::scalar(s), Op::L1Norm(a), &[a])
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().map(|&x| x * x).sum();
        self.push("l2_norm", Tensor::scalar(s.sqrt()), Op::L2Norm(a), &[a])
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", (self.shape(a), self.shape(b))));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let v = Tensor::new(vec![m, n], out)?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose2()?;
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", (&shape, axis, start, len)));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, data)?;
        self.push("slice", v, Op::Slice { src: a, axis, start }, &[a])
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", (&shape, axis)));
        }
        let v = softmax_forward(self.value(a), axis);
        self.push("softmax", v, Op::Softmax { src: a, axis }, &[a])
    }

    /// 2-D convolution of one `(c_in, h, w)` image with `(c_out, c_in, k, k)`
    /// weights and `(c_out)` bias, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let bad = || Error::shape("conv2d", (&xs, &ws, &bs));
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(bad());
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ws[2], stride, pad).ok_or_else(bad)?;
        let c_out = ws[0];
        let cols = im2col(&geom, self.value(x).data());
        let n_out = geom.out_len();
        let mut out = vec![T::zero(); c_out * n_out];
        for (o, &bias) in self.value(b).data().iter().enumerate() {
            out[o * n_out..(o + 1) * n_out].fill(bias);
        }
        gemm_nn(c_out, geom.patch_len(), n_out, self.value(w).data(), &cols, &mut out);
        let v = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        self.push("conv2d", v, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    /// Affine map of rows: `x (n×in) · wᵀ (in×out) + b`. A 1-D `x` is one row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (out_dim, in_dim) = self.value(w).dims2("linear")?;
        let (rows, one_d) = match xs[..] {
            [d] if d == in_dim => (1, true),
            [r, d] if d == in_dim => (r, false),
            _ => return Err(Error::shape("linear", (&xs, self.shape(w)))),
        };
        if self.shape(b) != [out_dim] {
            return Err(Error::shape("linear", (self.shape(w), self.shape(b))));
        }
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        gemm_nt(rows, in_dim, out_dim, self.value(x).data(), self.value(w).data(), &mut out);
        let shape = if one_d { vec![out_dim] } else { vec![rows, out_dim] };
        let v = Tensor::new(shape, out)?;
        self.push("linear", v, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Normalizes each row of `x (n×C)` over its channels, then applies
    /// per-channel `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, ch) = self.value(x).dims2("layer_norm")?;
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::shape("layer_norm", (self.shape(x), self.shape(gamma), self.shape(beta))));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; rows * ch];
        let mut rstd = vec![0.0; rows];
        let mut out = Vec::with_capacity(rows * ch);
        for r in 0..rows {
            let row = &src[r * ch..(r + 1) * ch];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / ch as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / ch as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..ch {
                let xh = (row[c].as_f64() - mean) * rs;
                xhat[r * ch + c] = xh;
                out.push(T::from_f64(xh) * g[c] + bt[c]);
            }
        }
        let v = Tensor::new(vec![rows, ch], out)?;
        self.push(
            "layer_norm",
            v,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            &[x, gamma, beta],
        )
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.shape(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_shape, T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, zip(g, vb, |x, y| x * y));
                acc(*b, zip(g, va, |x, y| x * y));
            }
            Op::ScalarMul(a, s) => {
                let k = T::from_f64(*s);
                acc(*a, g.map(|x| x * k));
            }
            Op::DivScalar(a, s) => {
                let d = val(*s).item();
                acc(*a, g.map(|x| x / d));
                let dot: T = gd.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
                acc(*s, Tensor::full(val(*s).shape(), -dot / (d * d)));
            }
            Op::Exp(a) => acc(*a, zip(g, &node.value, |x, y| x * y)),
            Op::Relu(a) => acc(
                *a,
                zip(g, val(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
            ),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    offset += len;
                    acc(p, Tensor::new(val(p).shape().to_vec(), data)?);
                }
            }
            Op::Gather { src, index } => {
                let cols = val(*src).shape()[1];
                let mut out = Tensor::zeros(val(*src).shape());
                let od = out.data_mut();
                for (k, &i) in index.iter().enumerate() {
                    for c in 0..cols {
                        od[i * cols + c] = od[i * cols + c] + gd[k * cols + c];
                    }
                }
                acc(*src, out);
            }
            Op::Pick { src, index } => {
                let cols = val(*src).shape()[1];
                let mut out = Tensor::zeros(val(*src).shape());
                let od = out.data_mut();
                for (i, &j) in index.iter().enumerate() {
                    od[i * cols + j] = od[i * cols + j] + gd[i];
                }
                acc(*src, out);
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), gd[0])),
            Op::Mean(a) => {
                let n = T::from_f64(val(*a).len() as f64);
                acc(*a, Tensor::full(val(*a).shape(), gd[0] / n));
            }
            Op::MeanAxis { src, axis } => {
                let shape = val(*src).shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let scale = T::from_f64(1.0 / len as f64);
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        out.extend(gd[o * inner..(o + 1) * inner].iter().map(|&x| x * scale));
                    }
                }
                acc(*src, Tensor::new(shape.to_vec(), out)?);
            }
            Op::L1Norm(a) => {
                let s = gd[0];
                acc(
                    *a,
                    val(*a).map(|x| {
                        if x > T::zero() {
                            s
                        } else if x < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::L2Norm(a) => {
                let norm = node.value.item();
                let s = gd[0];
                if norm > T::zero() {
                    acc(*a, val(*a).map(|x| s * x / norm));
                } else {
                    acc(*a, Tensor::zeros(val(*a).shape()));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = va.dims2("matmul")?;
                let n = vb.shape()[1];
                let mut ga = vec![T::zero(); m * k];
                gemm_nt(m, n, k, gd, vb.data(), &mut ga);
                let mut gb = vec![T::zero(); k * n];
                gemm_tn(m, k, n, va.data(), gd, &mut gb);
                acc(*a, Tensor::new(vec![m, k], ga)?);
                acc(*b, Tensor::new(vec![k, n], gb)?);
            }
            Op::Transpose(a) => acc(*a, g.transpose2()?),
            Op::Reshape(a) => acc(*a, g.clone().reshaped(val(*a).shape())?),
            Op::Slice { src, axis, start } => {
                let shape = val(*src).shape();
                let (outer, full, inner) = split_axis(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut out = Tensor::zeros(shape);
                let od = out.data_mut();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    od[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*src, out);
            }
            Op::Softmax { src, axis } => {
                let y = &node.value;
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let yd = y.data();
                let mut out = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| gd[at(k)] * yd[at(k)]).sum();
                        for k in 0..len {
                            out[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                acc(*src, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::Conv2d { x, w, b, geom } => {
                let (vx, vw) = (val(*x), val(*w));
                let c_out = vw.shape()[0];
                let n_out = geom.out_len();
                let patch = geom.patch_len();
                let gb: Vec<T> = (0..c_out)
                    .map(|o| gd[o * n_out..(o + 1) * n_out].iter().copied().sum())
                    .collect();
                acc(*b, Tensor::new(vec![c_out], gb)?);
                if self.nodes[w.0].requires_grad {
                    let cols = im2col(geom, vx.data());
                    let mut gw = vec![T::zero(); c_out * patch];
                    gemm_nt(c_out, n_out, patch, gd, &cols, &mut gw);
                    acc(*w, Tensor::new(vw.shape().to_vec(), gw)?);
                }
                if self.nodes[x.0].requires_grad {
                    let mut gcols = vec![T::zero(); patch * n_out];
                    gemm_tn(c_out, patch, n_out, vw.data(), gd, &mut gcols);
                    let mut gx = vec![T::zero(); vx.len()];
                    col2im(geom, &gcols, &mut gx);
                    acc(*x, Tensor::new(vx.shape().to_vec(), gx)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (out_dim, in_dim) = vw.dims2("linear")?;
                let rows = vx.len() / in_dim;
                let mut gb = vec![T::zero(); out_dim];
                for r in 0..rows {
                    for (o, acc_b) in gb.iter_mut().enumerate() {
                        *acc_b = *acc_b + gd[r * out_dim + o];
                    }
                }
                acc(*b, Tensor::new(vec![out_dim], gb)?);
                let mut gw = vec![T::zero(); out_dim * in_dim];
                gemm_tn(rows, out_dim, in_dim, gd, vx.data(), &mut gw);
                acc(*w, Tensor::new(vec![out_dim, in_dim], gw)?);
                let mut gx = vec![T::zero(); rows * in_dim];
                gemm_nn(rows, out_dim, in_dim, gd, vw.data(), &mut gx);
                acc(*x, Tensor::new(vx.shape().to_vec(), gx)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (rows, ch) = node.value.dims2("layer_norm")?;
                let gam = val(*gamma).data();
                let mut ggamma = vec![0.0; ch];
                let mut gbeta = vec![0.0; ch];
                let mut gx = Vec::with_capacity(rows * ch);
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..ch {
                        let go = gd[r * ch + c].as_f64();
                        let xh = xhat[r * ch + c];
                        ggamma[c] += go * xh;
                        gbeta[c] += go;
                        let d = go * gam[c].as_f64();
                        mean_d += d;
                        mean_dx += d * xh;
                    }
                    mean_d /= ch as f64;
                    mean_dx /= ch as f64;
                    for c in 0..ch {
                        let d = gd[r * ch + c].as_f64() * gam[c].as_f64();
                        let xh = xhat[r * ch + c];
                        gx.push(T::from_f64(rstd[r] * (d - mean_d - xh * mean_dx)));
                    }
                }
                acc(*x, Tensor::new(vec![rows, ch], gx)?);
                acc(*gamma, Tensor::from_f64(&[ch], &ggamma)?);
                acc(*beta, Tensor::from_f64(&[ch], &gbeta)?);
            }
        }
        Ok(())
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - max).exp();
                out[at(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
