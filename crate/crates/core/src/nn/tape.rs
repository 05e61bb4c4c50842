//! Operation tape for reverse-mode differentiation.
//!
//! Every forward computation pushes a node holding its value and the
//! operation that produced it. [`Tape::backward`] walks the nodes in
//! reverse and propagates adjoints to the parents. Parameters enter the
//! tape once per name through [`Tape::param`], so repeated use (an LSTM
//! weight across time steps) accumulates into a single gradient.
//!
//! Primitive ops panic on shape misuse; the layer functions in
//! [`super::layers`] validate shapes up front and return [`NnError`].

use std::collections::HashMap;

use crate::tensor::Tensor;

use super::{NnError, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatVec(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Square(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Gather(usize, Vec<usize>),
    Reshape(usize),
    Sum(usize),
    CumsumRows(usize),
    BroadcastRows(usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` was reached.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// A value that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// An input whose gradient is tracked (used for sensitivity checks).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// The node bound to parameter `name`, created on first use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(&[a.0, b.0]);
        self.push(value, op, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// Matrix `[m, n]` times vector `[n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        assert_eq!(xt.len(), n, "matvec width mismatch");
        let (wd, xd) = (wt.data(), xt.data());
        let out: Vec<f64> = (0..m)
            .map(|i| wd[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let ng = self.ng(&[w.0, x.0]);
        self.push(Tensor::vector(out), Op::MatVec(w.0, x.0), ng)
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        self.push(Tensor::vector(data), Op::Concat(ids), ng)
    }

    /// Contiguous range `[start, start + len)` of the flattened input.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.nodes[a.0].value.data()[start..start + len].to_vec();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::vector(data), Op::Slice(a.0, start), ng)
    }

    /// Vector of flattened-input entries at `indices` (repeats allowed).
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let src = self.nodes[a.0].value.data();
        let data = indices.iter().map(|&i| src[i]).collect();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::vector(data), Op::Gather(a.0, indices), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.nodes[a.0]
            .value
            .clone()
            .reshaped(shape)
            .expect("reshape preserves length");
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, Op::Reshape(a.0), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::scalar(s), Op::Sum(a.0), ng)
    }

    /// Running sum down the rows of a `[rows, cols]` matrix.
    pub fn cumsum_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = t.data().to_vec();
        for i in 1..r {
            for j in 0..c {
                data[i * c + j] += data[(i - 1) * c + j];
            }
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(
            Tensor::matrix(r, c, data).expect("shape"),
            Op::CumsumRows(a.0),
            ng,
        )
    }

    /// Repeats a vector `[cols]` into a `[rows, cols]` matrix.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = self.nodes[a.0].value.data();
        let c = src.len();
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(src);
        }
        let ng = self.nodes[a.0].needs_grad;
        self.push(
            Tensor::matrix(rows, c, data).expect("shape"),
            Op::BroadcastRows(a.0),
            ng,
        )
    }

    /// Cross-correlation of an `[H, W, C]` input with `[O, K, K, C]`
    /// weights plus a `[O]` bias, giving `[H', W', O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let b = &self.nodes[bias.0].value;
        let out = conv2d_values(x, w, b, stride, pad);
        let ng = self.ng(&[input.0, weight.0, bias.0]);
        self.push(
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
                pad,
            },
            ng,
        )
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::State(
                "backward called on an empty tape; run a forward pass first".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |k: usize| &self.nodes[k].value;
        let ng = |k: usize| self.nodes[k].needs_grad;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                acc(grads, *a, ng(*a), || g.clone());
                acc(grads, *b, ng(*b), || g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, ng(*a), || g.clone());
                acc(grads, *b, ng(*b), || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, ng(*a), || zip_map(g, val(*b), |g, y| g * y));
                acc(grads, *b, ng(*b), || zip_map(g, val(*a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                acc(grads, *a, ng(*a), || zip_map(g, val(*b), |g, y| g / y));
                acc(grads, *b, ng(*b), || {
                    // d(x/y)/dy = -(x/y)/y
                    let out = &node.value;
                    let y = val(*b);
                    let data = g
                        .data()
                        .iter()
                        .zip(out.data())
                        .zip(y.data())
                        .map(|((g, q), y)| -g * q / y)
                        .collect();
                    Tensor::new(y.shape().to_vec(), data).expect("shape")
                });
            }
            Op::Scale(a, c) => acc(grads, *a, ng(*a), || g.map(|x| c * x)),
            Op::Offset(a) => acc(grads, *a, ng(*a), || g.clone()),
            Op::Sigmoid(a) => acc(grads, *a, ng(*a), || {
                zip_map(g, &node.value, |g, s| g * s * (1.0 - s))
            }),
            Op::Tanh(a) => acc(grads, *a, ng(*a), || {
                zip_map(g, &node.value, |g, t| g * (1.0 - t * t))
            }),
            Op::Relu(a) => acc(grads, *a, ng(*a), || {
                zip_map(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })
            }),
            Op::Softplus(a) => acc(grads, *a, ng(*a), || zip_map(g, val(*a), |g, x| g * sigmoid(x))),
            Op::Square(a) => acc(grads, *a, ng(*a), || zip_map(g, val(*a), |g, x| 2.0 * g * x)),
            Op::MatVec(w, x) => {
                let (wt, xt) = (val(*w), val(*x));
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                acc(grads, *w, ng(*w), || {
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = g.data()[r];
                        if gr != 0.0 {
                            for (dst, xv) in d[r * n..(r + 1) * n].iter_mut().zip(xt.data()) {
                                *dst = gr * xv;
                            }
                        }
                    }
                    Tensor::matrix(m, n, d).expect("shape")
                });
                acc(grads, *x, ng(*x), || {
                    let mut d = vec![0.0; n];
                    for r in 0..m {
                        let gr = g.data()[r];
                        for (dst, wv) in d.iter_mut().zip(&wt.data()[r * n..(r + 1) * n]) {
                            *dst += gr * wv;
                        }
                    }
                    Tensor::new(xt.shape().to_vec(), d).expect("shape")
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let t = val(p);
                    let len = t.len();
                    acc(grads, p, ng(p), || {
                        Tensor::new(t.shape().to_vec(), g.data()[off..off + len].to_vec())
                            .expect("shape")
                    });
                    off += len;
                }
            }
            Op::Slice(a, start) => acc(grads, *a, ng(*a), || {
                let mut t = Tensor::zeros(val(*a).shape());
                t.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                t
            }),
            Op::Gather(a, idx) => acc(grads, *a, ng(*a), || {
                let mut t = Tensor::zeros(val(*a).shape());
                let d = t.data_mut();
                for (gv, &k) in g.data().iter().zip(idx) {
                    d[k] += gv;
                }
                t
            }),
            Op::Reshape(a) => acc(grads, *a, ng(*a), || {
                g.clone().reshaped(val(*a).shape()).expect("shape")
            }),
            Op::Sum(a) => acc(grads, *a, ng(*a), || Tensor::filled(val(*a).shape(), g.item())),
            Op::CumsumRows(a) => acc(grads, *a, ng(*a), || {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let mut d = g.data().to_vec();
                for i in (0..r.saturating_sub(1)).rev() {
                    for j in 0..c {
                        d[i * c + j] += d[(i + 1) * c + j];
                    }
                }
                Tensor::matrix(r, c, d).expect("shape")
            }),
            Op::BroadcastRows(a) => acc(grads, *a, ng(*a), || {
                let c = val(*a).len();
                let mut d = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (dst, v) in d.iter_mut().zip(row) {
                        *dst += v;
                    }
                }
                Tensor::new(val(*a).shape().to_vec(), d).expect("shape")
            }),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (gi, gw, gb) = conv2d_backward(val(*input), val(*weight), g, *stride, *pad);
                acc(grads, *input, ng(*input), || gi);
                acc(grads, *weight, ng(*weight), || gw);
                acc(grads, *bias, ng(*bias), || gb);
            }
        }
    }

    /// Parameter gradients from a backward pass, in name order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                (name.clone(), g)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Adds `scale` times every parameter gradient into `store`. Parameters
    /// never touched by the forward pass receive nothing (their
    /// accumulators stay as they were, zero after an optimizer step).
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients,
        store: &mut ParamStore,
        scale: f64,
    ) -> Result<(), NnError> {
        for (name, g) in self.param_grads(grads) {
            store.add_grad(&name, &g, scale)?;
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], k: usize, needs: bool, f: impl FnOnce() -> Tensor) {
    if !needs {
        return;
    }
    let add = f();
    match &mut grads[k] {
        Some(existing) => existing.axpy(1.0, &add),
        slot @ None => *slot = Some(add),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("shape")
}

pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

fn conv2d_values(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(w.shape()[3], c, "conv channel mismatch");
    let oh = conv_out_dim(h, kh, stride, pad).expect("kernel fits");
    let ow = conv_out_dim(wd, kw, stride, pad).expect("kernel fits");
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; oh * ow * o];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * o..(oy * ow + ox + 1) * o];
            dst.copy_from_slice(bd);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xin = &xd[((iy as usize) * wd + ix as usize) * c..][..c];
                    for (oc, d) in dst.iter_mut().enumerate() {
                        let wk = &wdat[((oc * kh + ky) * kw + kx) * c..][..c];
                        *d += xin.iter().zip(wk).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, o], out).expect("shape")
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (oh, ow) = (g.shape()[0], g.shape()[1]);
    let mut gi = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[o]);
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &gd[(oy * ow + ox) * o..][..o];
            for (b, v) in gb.data_mut().iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let base = ((iy as usize) * wd + ix as usize) * c;
                    for (oc, &gv) in go.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let wbase = ((oc * kh + ky) * kw + kx) * c;
                        for ch in 0..c {
                            gw.data_mut()[wbase + ch] += gv * xd[base + ch];
                            gi.data_mut()[base + ch] += gv * wdat[wbase + ch];
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}
