//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records operations in evaluation order; every node's inputs
//! precede it, so the backward pass is a single reverse sweep that visits each
//! node once. Values are checked for finiteness as they are produced.

use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::tensor::{axpy, dot, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Conv2d { input: Var, filter: Var, pad: usize },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Abs(Var),
    Log(Var),
    Gather { input: Var, index: Vec<usize> },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Log(_) => "log",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank<T: Real>(t: &Tensor<T>, rank: usize, op: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(format!(
            "{op} expects rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        if !value.all_finite() {
            return Err(Error::NonFinite { node: id, op: op.name() });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(id))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient (inputs, targets).
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank(ta, 2, "matmul")?;
        expect_rank(tb, 2, "matmul")?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(da[i * k + p], &db[p * n..(p + 1) * n], row);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng)
    }

    /// `[m,k] x [n,k]ᵀ -> [m,n]`; the dense-layer product `x Wᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank(ta, 2, "matmul_nt")?;
        expect_rank(tb, 2, "matmul_nt")?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (n, k2) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt {:?} x {:?}ᵀ", ta.shape(), tb.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            let ra = &da[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ra, &db[j * k..(j + 1) * k]);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        expect_rank(ta, 2, "transpose")?;
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let out = transpose_data(ta.data(), m, n);
        let ng = self.needs(a);
        self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), ng)
    }

    /// Stride-1 cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,kh,kw]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, input: Var, filter: Var, pad: usize) -> Result<Var> {
        let (ti, tf) = (self.value(input), self.value(filter));
        expect_rank(ti, 4, "conv2d input")?;
        expect_rank(tf, 4, "conv2d filter")?;
        let g = ConvGeom::new(ti.shape(), tf.shape(), pad)?;
        let mut out = vec![T::zero(); g.b * g.cout * g.ho * g.wo];
        let (xi, xf) = (ti.data(), tf.data());
        for b in 0..g.b {
            for co in 0..g.cout {
                let oplane = (b * g.cout + co) * g.ho * g.wo;
                for ci in 0..g.cin {
                    let iplane = (b * g.cin + ci) * g.h * g.w;
                    for ki in 0..g.kh {
                        for kj in 0..g.kw {
                            let wv = xf[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                            let (ow0, ow1) = g.ow_range(kj);
                            if ow0 >= ow1 {
                                continue;
                            }
                            for oh in 0..g.ho {
                                let Some(ih) = g.ih(oh, ki) else { continue };
                                let irow = iplane + ih * g.w;
                                let iw0 = ow0 + kj - g.pad;
                                let n = ow1 - ow0;
                                let orow = oplane + oh * g.wo;
                                axpy(
                                    wv,
                                    &xi[irow + iw0..irow + iw0 + n],
                                    &mut out[orow + ow0..orow + ow1],
                                );
                            }
                        }
                    }
                }
            }
        }
        let ng = self.needs(input) || self.needs(filter);
        self.push(
            Tensor::from_parts(vec![g.b, g.cout, g.ho, g.wo], out),
            Op::Conv2d { input, filter, pad },
            ng,
        )
    }

    /// 2x2 max-pool with stride 2 over the last two axes of `[B,C,H,W]`.
    /// Ties go to the first position in row-major scan order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let ti = self.value(input);
        expect_rank(ti, 4, "max_pool2")?;
        let s = ti.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::shape(format!("max_pool2 on spatial size {h}x{w}")));
        }
        let x = ti.data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let cands = [
                        base + 2 * oh * w + 2 * ow,
                        base + 2 * oh * w + 2 * ow + 1,
                        base + (2 * oh + 1) * w + 2 * ow,
                        base + (2 * oh + 1) * w + 2 * ow + 1,
                    ];
                    let mut best = cands[0];
                    for &idx in &cands[1..] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let ng = self.needs(input);
        self.push(Tensor::from_parts(vec![b, c, ho, wo], out), Op::MaxPool2 { input, argmax }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "{} of {:?} and {:?}",
                op.name(),
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds `bias[C]` along axis 1 of `[B,C]` or `[B,C,H,W]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let s = tx.shape();
        if tb.rank() != 1 || s.len() < 2 || s[1] != tb.len() {
            return Err(Error::shape(format!("add_bias {:?} + {:?}", s, tb.shape())));
        }
        let c = s[1];
        let inner: usize = s[2..].iter().product();
        let mut data = tx.data().to_vec();
        let bv = tb.data();
        for (i, chunk) in data.chunks_mut(inner).enumerate() {
            let add = bv[i % c];
            for v in chunk {
                *v = *v + add;
            }
        }
        let t = Tensor::from_parts(s.to_vec(), data);
        let ng = self.needs(x) || self.needs(bias);
        self.push(t, Op::AddBias(x, bias), ng)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Result<Var> {
        let t = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let s = T::from_f64(alpha);
        self.unary(a, Op::Scale(a, alpha), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let s = T::from_f64(c);
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// Row-wise log-softmax of `[B,C]`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        expect_rank(ta, 2, "log_softmax")?;
        let c = ta.shape()[1];
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            for v in row {
                *v = *v - lse;
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(t, Op::LogSoftmax(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s = ta.sum() / T::from_f64(ta.len() as f64);
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// `out[i] = x[i, index[i]]` for `x: [B,C]`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        expect_rank(ta, 2, "gather")?;
        let (b, c) = (ta.shape()[0], ta.shape()[1]);
        if index.len() != b {
            return Err(Error::shape(format!("gather: {} indices for {} rows", index.len(), b)));
        }
        let mut out = Vec::with_capacity(b);
        for (i, &k) in index.iter().enumerate() {
            if k >= c {
                return Err(Error::contract(format!("gather index {k} out of range {c}")));
            }
            out.push(ta.data()[i * c + k]);
        }
        let ng = self.needs(a);
        self.push(Tensor::from_parts(vec![b], out), Op::Gather { input: a, index: index.to_vec() }, ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        self.push(t, Op::Reshape(a), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e = *e + *x;
                    }
                }
                slot => *slot = Some(g),
            }
        };
        let shaped = |like: &Tensor<T>, data: Vec<T>| Tensor::from_parts(like.shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let g = dy.data();
                if self.needs(*a) {
                    // dA = dC Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            da[i * k + p] = dot(&g[i * n..(i + 1) * n], &tb.data()[p * n..(p + 1) * n]);
                        }
                    }
                    acc(*a, shaped(ta, da));
                }
                if self.needs(*b) {
                    // dB = Aᵀ dC
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            axpy(ta.data()[i * k + p], &g[i * n..(i + 1) * n], &mut db[p * n..(p + 1) * n]);
                        }
                    }
                    acc(*b, shaped(tb, db));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                let g = dy.data();
                if self.needs(*a) {
                    // dA = dC B
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let row = &mut da[i * k..(i + 1) * k];
                        for j in 0..n {
                            axpy(g[i * n + j], &tb.data()[j * k..(j + 1) * k], row);
                        }
                    }
                    acc(*a, shaped(ta, da));
                }
                if self.needs(*b) {
                    // dB = dCᵀ A
                    let mut db = vec![T::zero(); n * k];
                    for i in 0..m {
                        let ra = &ta.data()[i * k..(i + 1) * k];
                        for j in 0..n {
                            axpy(g[i * n + j], ra, &mut db[j * k..(j + 1) * k]);
                        }
                    }
                    acc(*b, shaped(tb, db));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (out.shape()[0], out.shape()[1]);
                acc(*a, Tensor::from_parts(vec![m, n], transpose_data(dy.data(), n, m)));
            }
            Op::Conv2d { input, filter, pad } => {
                let (ti, tf) = (self.value(*input), self.value(*filter));
                let g = ConvGeom::new(ti.shape(), tf.shape(), *pad).expect("validated in forward");
                let (xi, xf, gy) = (ti.data(), tf.data(), dy.data());
                let want_i = self.needs(*input);
                let want_f = self.needs(*filter);
                let mut di = if want_i { vec![T::zero(); xi.len()] } else { Vec::new() };
                let mut df = if want_f { vec![T::zero(); xf.len()] } else { Vec::new() };
                for b in 0..g.b {
                    for co in 0..g.cout {
                        let oplane = (b * g.cout + co) * g.ho * g.wo;
                        for ci in 0..g.cin {
                            let iplane = (b * g.cin + ci) * g.h * g.w;
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let fidx = ((co * g.cin + ci) * g.kh + ki) * g.kw + kj;
                                    let wv = xf[fidx];
                                    let (ow0, ow1) = g.ow_range(kj);
                                    if ow0 >= ow1 {
                                        continue;
                                    }
                                    let n = ow1 - ow0;
                                    let iw0 = ow0 + kj - g.pad;
                                    let mut fsum = T::zero();
                                    for oh in 0..g.ho {
                                        let Some(ih) = g.ih(oh, ki) else { continue };
                                        let irow = iplane + ih * g.w + iw0;
                                        let orow = oplane + oh * g.wo + ow0;
                                        let gslice = &gy[orow..orow + n];
                                        if want_i {
                                            axpy(wv, gslice, &mut di[irow..irow + n]);
                                        }
                                        if want_f {
                                            fsum = fsum + dot(&xi[irow..irow + n], gslice);
                                        }
                                    }
                                    if want_f {
                                        df[fidx] = df[fidx] + fsum;
                                    }
                                }
                            }
                        }
                    }
                }
                if want_i {
                    acc(*input, shaped(ti, di));
                }
                if want_f {
                    acc(*filter, shaped(tf, df));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let ti = self.value(*input);
                let mut di = vec![T::zero(); ti.len()];
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    di[src] = di[src] + g;
                }
                acc(*input, shaped(ti, di));
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = dy.data().iter().zip(tb.data()).map(|(&g, &y)| g * y).collect();
                let db = dy.data().iter().zip(ta.data()).map(|(&g, &x)| g * x).collect();
                acc(*a, shaped(ta, da));
                acc(*b, shaped(tb, db));
            }
            Op::AddBias(x, bias) => {
                acc(*x, dy.clone());
                let tb = self.value(*bias);
                let c = tb.len();
                let inner: usize = out.shape()[2..].iter().product();
                let mut db = vec![T::zero(); c];
                for (i, chunk) in dy.data().chunks(inner).enumerate() {
                    db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
                }
                acc(*bias, shaped(tb, db));
            }
            Op::Scale(a, alpha) => {
                let s = T::from_f64(*alpha);
                acc(*a, dy.map(|g| g * s));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ta = self.value(*a);
                acc(*a, shaped(ta, dy.data().to_vec()));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = dy
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                acc(*a, shaped(ta, d));
            }
            Op::Tanh(a) => {
                let d = dy.data().iter().zip(out.data()).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                acc(*a, shaped(out, d));
            }
            Op::Sigmoid(a) => {
                let d = dy.data().iter().zip(out.data()).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                acc(*a, shaped(out, d));
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                let two = T::from_f64(2.0);
                let d = dy.data().iter().zip(ta.data()).map(|(&g, &x)| g * two * x).collect();
                acc(*a, shaped(ta, d));
            }
            Op::Abs(a) => {
                let ta = self.value(*a);
                let d = dy.data().iter().zip(ta.data()).map(|(&g, &x)| g * sign(x)).collect();
                acc(*a, shaped(ta, d));
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                let d = dy.data().iter().zip(ta.data()).map(|(&g, &x)| g / x).collect();
                acc(*a, shaped(ta, d));
            }
            Op::LogSoftmax(a) => {
                let c = out.shape()[1];
                let mut d = vec![T::zero(); out.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(dy.data().chunks(c)) {
                    let gs: T = grow.iter().copied().sum();
                    for k in 0..c {
                        drow[k] = grow[k] - yrow[k].exp() * gs;
                    }
                }
                acc(*a, shaped(out, d));
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                acc(*a, Tensor::full(ta.shape(), dy.data()[0]));
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let g = dy.data()[0] / T::from_f64(ta.len() as f64);
                acc(*a, Tensor::full(ta.shape(), g));
            }
            Op::Gather { input, index } => {
                let ta = self.value(*input);
                let c = ta.shape()[1];
                let mut d = vec![T::zero(); ta.len()];
                for (i, (&k, &g)) in index.iter().zip(dy.data()).enumerate() {
                    d[i * c + k] = g;
                }
                acc(*input, shaped(ta, d));
            }
        }
    }
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn transpose_data<T: Real>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(input: &[usize], filter: &[usize], pad: usize) -> Result<Self> {
        let (b, cin, h, w) = (input[0], input[1], input[2], input[3]);
        let (cout, cin2, kh, kw) = (filter[0], filter[1], filter[2], filter[3]);
        if cin != cin2 {
            return Err(Error::shape(format!("conv2d input {input:?} vs filter {filter:?}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!("conv2d kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        Ok(Self { b, cin, h, w, cout, kh, kw, pad, ho: h + 2 * pad - kh + 1, wo: w + 2 * pad - kw + 1 })
    }

    /// Output columns whose input column `ow + kj - pad` is in bounds.
    fn ow_range(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.wo);
        (lo, hi)
    }

    fn ih(&self, oh: usize, ki: usize) -> Option<usize> {
        let r = (oh + ki).checked_sub(self.pad)?;
        (r < self.h).then_some(r)
    }
}

pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros are not materialized, so an
    /// unreached node yields `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

/// Loss closures receive a fresh graph and the leaf handles of the parameter
/// tree, in tree order.
pub trait LossFn<T: Real>: Fn(&mut Graph<T>, &[Var]) -> Result<Var> {}

impl<T: Real, F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>> LossFn<T> for F {}

fn build<T: Real>(params: &ParamTree, f: &impl LossFn<T>) -> Result<(Graph<T>, Vec<Var>, Var)> {
    let mut g = Graph::<T>::new();
    let mut leaves = Vec::with_capacity(params.len());
    for e in params.iter() {
        leaves.push(g.param(e.tensor.cast::<T>())?);
    }
    let loss = f(&mut g, &leaves)?;
    if g.value(loss).len() != 1 {
        return Err(Error::contract(format!(
            "loss must be scalar, got shape {:?}",
            g.value(loss).shape()
        )));
    }
    Ok((g, leaves, loss))
}

/// Forward evaluation only.
pub fn eval<T: Real>(params: &ParamTree, f: &impl LossFn<T>) -> Result<f64> {
    let (g, _, loss) = build(params, f)?;
    Ok(g.value(loss).data()[0].to_f64())
}

/// Loss value and its exact reverse-mode gradient, computed in precision `T`.
pub fn value_and_grad<T: Real>(params: &ParamTree, f: &impl LossFn<T>) -> Result<(f64, ParamTree)> {
    let (g, leaves, loss) = build(params, f)?;
    let grads = g.backward(loss)?;
    let mut out = params.zeros_like();
    for (entry, leaf) in out.entries_mut().iter_mut().zip(&leaves) {
        if let Some(gt) = grads.get(*leaf) {
            for (d, &s) in entry.tensor.data_mut().iter_mut().zip(gt.data()) {
                *d = s.to_f64();
            }
        }
    }
    Ok((g.value(loss).data()[0].to_f64(), out))
}

pub fn grad<T: Real>(params: &ParamTree, f: &impl LossFn<T>) -> Result<ParamTree> {
    value_and_grad(params, f).map(|(_, g)| g)
}

/// Central differences, one forward pair per scalar parameter.
pub fn finite_diff_grad(
    params: &ParamTree,
    eps: f64,
    f: impl Fn(&ParamTree) -> Result<f64>,
) -> Result<ParamTree> {
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, e)| (0..e.tensor.len()).map(move |i| (t, i)))
        .collect();
    let vals = finite_diff_at(params, eps, &coords, f)?;
    params.unflatten(&vals)
}

/// Central differences at selected `(tensor index, element index)` coordinates.
pub fn finite_diff_at(
    params: &ParamTree,
    eps: f64,
    coords: &[(usize, usize)],
    f: impl Fn(&ParamTree) -> Result<f64>,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::contract(format!("finite difference step must be positive, got {eps}")));
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &(t, i) in coords {
        let orig = work.entries()[t].tensor.data()[i];
        work.entries_mut()[t].tensor.data_mut()[i] = orig + eps;
        let up = f(&work)?;
        work.entries_mut()[t].tensor.data_mut()[i] = orig - eps;
        let down = f(&work)?;
        work.entries_mut()[t].tensor.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}
