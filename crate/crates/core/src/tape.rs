//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass in execution order.
//! Leaves are either constants or borrowed parameter tensors; only nodes that
//! depend on a tracked leaf receive gradients during [`Tape::backward`].

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    #[inline]
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    Square(Var),
    Huber(Var, f64),
    Clamp(Var, f64, f64),
    GatherRows(Var, Rc<[usize]>),
    ScatterRows(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    SumCols(Var),
    SumRows(Var),
    MulCol(Var, Var),
    SumAll(Var),
    Softmax(Var),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    tracked: bool,
}

/// Recording of one forward computation.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Borrowed leaf, tracked or not. Avoids copying parameter tensors.
    pub fn borrowed(&mut self, t: &'p Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v`'s value as a fresh constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let tr = self.tracked(&[a, b]);
        self.push(out, Op::MatMul(a, b), tr)
    }

    /// `a + b` with `b` a `1 x m` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row expects a single-row operand");
        assert_eq!(av.cols(), bv.cols(), "add_row column mismatch");
        let mut out = av.clone();
        let brow = bv.row(0).to_vec();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&brow) {
                *o += b;
            }
        }
        let tr = self.tracked(&[a, b]);
        self.push(out, Op::AddRow(a, b), tr)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let tr = self.tracked(&[a, b]);
        self.push(out, Op::Add(a, b), tr)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let tr = self.tracked(&[a, b]);
        self.push(out, Op::Sub(a, b), tr)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let tr = self.tracked(&[a, b]);
        self.push(out, Op::Mul(a, b), tr)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Affine(a, scale), tr)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let tr = self.tracked(&[a]);
        self.push(out, Op::Silu(a), tr)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Sigmoid(a), tr)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Log(a), tr)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Sqrt(a), tr)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / x);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Recip(a), tr)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Square(a), tr)
    }

    /// Elementwise Huber penalty with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let out = self.value(a).map(|x| huber_scalar(x, delta));
        let tr = self.tracked(&[a]);
        self.push(out, Op::Huber(a, delta), tr)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let tr = self.tracked(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), tr)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let out = self.value(a).gather_rows(&idx);
        let tr = self.tracked(&[a]);
        self.push(out, Op::GatherRows(a, idx), tr)
    }

    /// Sum rows of `a` into an `n`-row result at positions `idx`.
    pub fn scatter_rows(&mut self, a: Var, idx: Rc<[usize]>, n: usize) -> Var {
        let out = self.value(a).scatter_rows(&idx, n);
        let tr = self.tracked(&[a]);
        self.push(out, Op::ScatterRows(a, idx), tr)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let tr = self.tracked(parts);
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            tr,
        )
    }

    /// Per-row sums, `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |r, _| t.row(r).iter().sum());
        let tr = self.tracked(&[a]);
        self.push(out, Op::SumCols(a), tr)
    }

    /// Per-column sums, `n x m -> 1 x m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_rows();
        let tr = self.tracked(&[a]);
        self.push(out, Op::SumRows(a), tr)
    }

    /// Scales row `i` of `a` by `c[i]` where `c` is `n x 1`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert_eq!(cv.cols(), 1);
        assert_eq!(av.rows(), cv.rows());
        let mut out = av.clone();
        for r in 0..out.rows() {
            let s = cv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let tr = self.tracked(&[a, c]);
        self.push(out, Op::MulCol(a, c), tr)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let tr = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), tr)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Softmax over all entries of `a` (typically an `n x 1` column).
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = t.map(|x| (x - max).exp());
        let z = out.sum();
        out.data_mut().iter_mut().for_each(|v| *v /= z);
        let tr = self.tracked(&[a]);
        self.push(out, Op::Softmax(a), tr)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = node.value.get();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].tracked {
                    let ga = g.matmul_t(self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].tracked {
                    let gb = self.value(*a).t_matmul(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, g.sum_rows());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].tracked {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].tracked {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].tracked {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Affine(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Silu(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| {
                    let s = sigmoid(x);
                    gx * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, |gx, y| gx * y * (1.0 - y));
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| gx / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(out, |gx, y| 0.5 * gx / y);
                self.accumulate(grads, *a, ga);
            }
            Op::Recip(a) => {
                let ga = g.zip_map(out, |gx, y| -gx * y * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |gx, x| 2.0 * gx * x);
                self.accumulate(grads, *a, ga);
            }
            Op::Huber(a, delta) => {
                let d = *delta;
                let ga = g.zip_map(self.value(*a), |gx, x| gx * huber_grad(x, d));
                self.accumulate(grads, *a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let ga = g.zip_map(self.value(*a), |gx, x| {
                    if x > lo && x < hi {
                        gx
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, ix) => {
                let n = self.value(*a).rows();
                self.accumulate(grads, *a, g.scatter_rows(ix, n));
            }
            Op::ScatterRows(a, ix) => {
                self.accumulate(grads, *a, g.gather_rows(ix));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.nodes[p.0].tracked {
                        let gp =
                            Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let ga = Tensor::from_fn(av.rows(), av.cols(), |r, _| g.get(r, 0));
                self.accumulate(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let av = self.value(*a);
                let ga = Tensor::from_fn(av.rows(), av.cols(), |_, c| g.get(0, c));
                self.accumulate(grads, *a, ga);
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                if self.nodes[a.0].tracked {
                    let ga = Tensor::from_fn(av.rows(), av.cols(), |r, k| {
                        g.get(r, k) * cv.get(r, 0)
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[c.0].tracked {
                    let gc = Tensor::from_fn(cv.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum()
                    });
                    self.accumulate(grads, *c, gc);
                }
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                let s = g.item();
                self.accumulate(grads, *a, Tensor::from_vec(av.rows(), av.cols(), vec![s; av.len()]));
            }
            Op::Softmax(a) => {
                let dot: f64 = g.data().iter().zip(out.data()).map(|(x, y)| x * y).sum();
                let ga = g.zip_map(out, |gx, y| y * (gx - dot));
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    // exp overflows to inf for very negative x, which still gives 0
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn huber_scalar(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
pub(crate) fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}
