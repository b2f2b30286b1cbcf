//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation in creation order. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and fills
//! the gradient slot of every node that depends on a trainable leaf.
//!
//! The tape is single-threaded. Independent graphs may be evaluated on
//! separate threads, but nothing inside one graph is shared.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: usize,
}

/// Elementwise non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Identity,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: usize },
    Act { kind: Activation, x: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Square(usize),
    Softplus(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    SumRows(usize),
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(
                "tensor was not recorded on this differentiation tape".into(),
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Trainable leaf: receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.index(v).expect("var from another graph")].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index(v).map(|i| self.rg(i)).unwrap_or(false)
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.index(v).ok().and_then(|i| self.nodes[i].value.grad())
    }

    /// `out[i, j] = Σ_k w[j, k] · x[i, k] + b[j]`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let (xt, wt, bt) = (
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            &self.nodes[bi].value,
        );
        if xt.shape().len() != 2
            || wt.shape().len() != 2
            || xt.shape()[1] != wt.shape()[1]
            || bt.len() != wt.shape()[0]
        {
            return Err(Error::Shape {
                op: "affine",
                left: xt.shape().to_vec(),
                right: wt.shape().to_vec(),
            });
        }
        if !xt.is_finite() {
            return Err(Error::Numeric("non-finite input to affine layer".into()));
        }
        let value = affine_forward(xt, wt, bt);
        let rg = self.rg(xi) || self.rg(wi) || self.rg(bi);
        Ok(self.push(
            value,
            Op::Affine {
                x: xi,
                w: wi,
                b: bi,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let xt = &self.nodes[xi].value;
        if !xt.is_finite() {
            return Err(Error::Numeric(format!("non-finite input to {kind}")));
        }
        let data = xt.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Act { kind, x: xi }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let (at, bt) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if at.shape() != bt.shape() {
            return Err(Error::Shape {
                op: name,
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((ai, bi, Tensor::new(at.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, value) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, Op::Add(ai, bi), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, value) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, Op::Sub(ai, bi), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, value) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(value, Op::Mul(ai, bi), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Result<(usize, Tensor)> {
        let xi = self.index(x)?;
        let xt = &self.nodes[xi].value;
        let data = xt.data().iter().map(|&v| f(v)).collect();
        Ok((xi, Tensor::new(xt.shape().to_vec(), data)?))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let (xi, value) = self.unary(x, |v| c * v)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Scale(xi, c), rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let (xi, value) = self.unary(x, |v| v + c)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::AddScalar(xi), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let (xi, value) = self.unary(x, f64::exp)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Exp(xi), rg))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let (xi, value) = self.unary(x, |v| v * v)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Square(xi), rg))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let (xi, value) = self.unary(x, softplus)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Softplus(xi), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (xi, value) = self.unary(x, |v| v.clamp(lo, hi))?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::Clamp { x: xi, lo, hi }, rg))
    }

    /// Sums every row of a `[batch × n]` tensor into a `[batch]` vector.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let xt = &self.nodes[xi].value;
        let c = xt.cols();
        let data: Vec<f64> = xt.data().chunks(c).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![xt.rows()], data)?;
        let rg = self.rg(xi);
        Ok(self.push(value, Op::SumRows(xi), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let total = self.nodes[xi].value.data().iter().sum();
        let rg = self.rg(xi);
        Ok(self.push(Tensor::scalar(total), Op::Sum(xi), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Populates the gradient slot of every node the scalar `loss` depends on.
    ///
    /// Previous gradients are discarded, so repeated calls are idempotent.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.index(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::Usage(
                "loss does not depend on any trainable tensor".into(),
            ));
        }
        for n in &mut self.nodes {
            n.value.clear_grad();
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xt = &self.nodes[x].value;
                let wt = &self.nodes[w].value;
                let (batch, n_in) = (xt.rows(), xt.cols());
                let n_out = wt.rows();
                if self.rg(x) {
                    let dx = slot(grads, x, xt.len());
                    for r in 0..batch {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj != 0.0 {
                                axpy(gj, wt.row(j), dxr);
                            }
                        }
                    }
                }
                if self.rg(w) {
                    let dw = slot(grads, w, wt.len());
                    for r in 0..batch {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let xr = xt.row(r);
                        for (j, &gj) in gr.iter().enumerate() {
                            if gj != 0.0 {
                                axpy(gj, xr, &mut dw[j * n_in..(j + 1) * n_in]);
                            }
                        }
                    }
                }
                if self.rg(b) {
                    let db = slot(grads, b, n_out);
                    for gr in g.chunks(n_out) {
                        for (d, &gj) in db.iter_mut().zip(gr) {
                            *d += gj;
                        }
                    }
                }
            }
            Op::Act { kind, x } => {
                let xt = self.nodes[x].value.data();
                let yt = node.value.data();
                let dx = slot(grads, x, xt.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * kind.derivative(xt[k], yt[k]);
                }
            }
            Op::Add(a, b) => {
                if self.rg(a) {
                    add_into(slot(grads, a, g.len()), g, 1.0);
                }
                if self.rg(b) {
                    add_into(slot(grads, b, g.len()), g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(a) {
                    add_into(slot(grads, a, g.len()), g, 1.0);
                }
                if self.rg(b) {
                    add_into(slot(grads, b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                if self.rg(a) {
                    let da = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        da[k] += g[k] * bv[k];
                    }
                }
                if self.rg(b) {
                    let db = slot(grads, b, g.len());
                    for k in 0..g.len() {
                        db[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(x, c) => add_into(slot(grads, x, g.len()), g, c),
            Op::AddScalar(x) => add_into(slot(grads, x, g.len()), g, 1.0),
            Op::Exp(x) => {
                let y = node.value.data();
                let dx = slot(grads, x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * y[k];
                }
            }
            Op::Square(x) => {
                let xv = self.nodes[x].value.data();
                let dx = slot(grads, x, g.len());
                for k in 0..g.len() {
                    dx[k] += 2.0 * g[k] * xv[k];
                }
            }
            Op::Softplus(x) => {
                let xv = self.nodes[x].value.data();
                let dx = slot(grads, x, g.len());
                for k in 0..g.len() {
                    dx[k] += g[k] * sigmoid(xv[k]);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.nodes[x].value.data();
                let dx = slot(grads, x, g.len());
                for k in 0..g.len() {
                    if xv[k] >= lo && xv[k] <= hi {
                        dx[k] += g[k];
                    }
                }
            }
            Op::SumRows(x) => {
                let xt = &self.nodes[x].value;
                let c = xt.cols();
                let dx = slot(grads, x, xt.len());
                for (r, &gr) in g.iter().enumerate() {
                    for d in &mut dx[r * c..(r + 1) * c] {
                        *d += gr;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x].value.len();
                let dx = slot(grads, x, n);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, n: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (batch, n_out) = (x.rows(), w.rows());
    let mut out = Vec::with_capacity(batch * n_out);
    for r in 0..batch {
        let xr = x.row(r);
        for j in 0..n_out {
            out.push(dot(xr, w.row(j)) + b.data()[j]);
        }
    }
    Tensor::new(vec![batch, n_out], out).expect("affine output shape")
}
