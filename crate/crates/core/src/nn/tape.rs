//! Reverse-mode differentiation over matrix-valued operations.
//!
//! Every value on the tape is a matrix whose rows are independent samples of a
//! batch. Leaves may borrow parameter storage so registering a network costs no
//! copies. Only scalar (`1 × 1`) results can be differentiated.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::linalg::Mat;
use crate::{Error, Real, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

/// Backward rule of a user-defined single-input operation: maps the output
/// gradient to the input gradient.
pub type BackwardFn<'p, T> = Box<dyn Fn(&Mat<T>) -> Mat<T> + 'p>;

enum Op<'p, T: Real> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Clamp { x: usize, lo: T, hi: T },
    Scale(usize, T),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    ConcatCols(usize, usize),
    SumSquares(usize),
    Custom { x: usize, backward: BackwardFn<'p, T> },
}

struct Node<'p, T: Real> {
    value: Cow<'p, Mat<T>>,
    op: Op<'p, T>,
}

/// Record of operations sufficient to differentiate a scalar loss with respect
/// to every leaf.
pub struct Tape<'p, T: Real> {
    id: u64,
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Mat<T>>, op: Op<'p, T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        v.idx
    }

    fn val(&self, i: usize) -> &Mat<T> {
        &self.nodes[i].value
    }

    /// Leaf borrowing existing storage (network parameters).
    pub fn leaf(&mut self, value: &'p Mat<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    /// Leaf owning its value (inputs, constants).
    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        let i = self.idx(v);
        self.val(i)
    }

    /// `x W^T + b` with `x: batch × in`, `W: out × in`, `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xi, wi, bi) = (self.idx(x), self.idx(w), self.idx(b));
        let bias = self.val(bi);
        let mut out = self.val(xi).matmul_t(self.val(wi));
        assert_eq!(bias.shape(), (1, out.cols()), "linear: bias shape");
        let bias = bias.as_slice();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(Cow::Owned(out), Op::Linear { x: xi, w: wi, b: bi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let out = self.val(ai).add(self.val(bi));
        self.push(Cow::Owned(out), Op::Add(ai, bi))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let out = self.val(ai).sub(self.val(bi));
        self.push(Cow::Owned(out), Op::Sub(ai, bi))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let out = self.val(ai).zip_map(self.val(bi), |x, y| x * y);
        self.push(Cow::Owned(out), Op::Mul(ai, bi))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let out = self.val(ai).zip_map(self.val(bi), |x, y| x / y);
        self.push(Cow::Owned(out), Op::Div(ai, bi))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).map(|v| v.max(T::zero()));
        self.push(Cow::Owned(out), Op::Relu(xi))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).map(|v| v.tanh());
        self.push(Cow::Owned(out), Op::Tanh(xi))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).map(|v| v.exp());
        self.push(Cow::Owned(out), Op::Exp(xi))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).map(|v| v.max(lo).min(hi));
        self.push(Cow::Owned(out), Op::Clamp { x: xi, lo, hi })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).scale(c);
        self.push(Cow::Owned(out), Op::Scale(xi, c))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).slice_cols(start, end);
        self.push(Cow::Owned(out), Op::SliceCols { x: xi, start })
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xi = self.idx(x);
        let out = self.val(xi).slice_rows(start, end);
        self.push(Cow::Owned(out), Op::SliceRows { x: xi, start })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let out = self.val(ai).hcat(self.val(bi));
        self.push(Cow::Owned(out), Op::ConcatCols(ai, bi))
    }

    /// Sum of squared entries as a `1 × 1` value.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let xi = self.idx(x);
        let s = self.val(xi).as_slice().iter().map(|&v| v * v).sum::<T>();
        self.push(Cow::Owned(Mat::from_vec(1, 1, vec![s])), Op::SumSquares(xi))
    }

    /// Records an operation computed outside the tape. `backward` maps the
    /// gradient of `value` to the gradient of `x`.
    pub fn custom(&mut self, x: Var, value: Mat<T>, backward: BackwardFn<'p, T>) -> Var {
        let xi = self.idx(x);
        self.push(Cow::Owned(value), Op::Custom { x: xi, backward })
    }

    /// Gradients of a scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::Usage("loss was not recorded on this tape".into()));
        }
        if self.val(loss.idx).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be a 1x1 scalar, got {:?}",
                self.val(loss.idx).shape()
            )));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Mat::from_vec(1, 1, vec![T::one()]));

        fn acc<T: Real>(slot: &mut Option<Mat<T>>, g: Mat<T>) {
            match slot {
                Some(existing) => {
                    for (e, v) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *e += *v;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => grads[i] = Some(g),
                Op::Linear { x, w, b } => {
                    let gx = g.matmul(self.val(*w));
                    let gw = g.t_matmul(self.val(*x));
                    let mut gb = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, &v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(&mut grads[*x], gx);
                    acc(&mut grads[*w], gw);
                    acc(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*b], g.clone());
                    acc(&mut grads[*a], g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*b], g.scale(-T::one()));
                    acc(&mut grads[*a], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.val(*b), |u, v| u * v);
                    let gb = g.zip_map(self.val(*a), |u, v| u * v);
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::Div(a, b) => {
                    let bv = self.val(*b);
                    let ga = g.zip_map(bv, |u, v| u / v);
                    let gb = Mat::from_fn(g.rows(), g.cols(), |r, c| {
                        -g[(r, c)] * out[(r, c)] / bv[(r, c)]
                    });
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(self.val(*x), |u, v| if v > T::zero() { u } else { T::zero() });
                    acc(&mut grads[*x], gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(out, |u, y| u * (T::one() - y * y));
                    acc(&mut grads[*x], gx);
                }
                Op::Exp(x) => {
                    let gx = g.zip_map(out, |u, y| u * y);
                    acc(&mut grads[*x], gx);
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let gx = g.zip_map(self.val(*x), |u, v| {
                        if v >= lo && v <= hi {
                            u
                        } else {
                            T::zero()
                        }
                    });
                    acc(&mut grads[*x], gx);
                }
                Op::Scale(x, c) => acc(&mut grads[*x], g.scale(*c)),
                Op::SliceCols { x, start } => {
                    let (rows, cols) = self.val(*x).shape();
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads[*x], gx);
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self.val(*x).shape();
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..g.rows() {
                        gx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    acc(&mut grads[*x], gx);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.val(*a).cols();
                    acc(&mut grads[*a], g.slice_cols(0, split));
                    acc(&mut grads[*b], g.slice_cols(split, g.cols()));
                }
                Op::SumSquares(x) => {
                    let s = g[(0, 0)] * T::lit(2.0);
                    acc(&mut grads[*x], self.val(*x).scale(s));
                }
                Op::Custom { x, backward } => {
                    let gx = backward(&g);
                    assert_eq!(gx.shape(), self.val(*x).shape(), "custom op gradient shape");
                    acc(&mut grads[*x], gx);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Mat<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; exactly zero when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Mat<T> {
        assert_eq!(v.tape, self.tape, "variable recorded on a different tape");
        match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.idx];
                Mat::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_norm_of_product() {
        // loss = 0.5 ||W x||^2  =>  dW = (W x) x^T
        let w: Mat<f64> = Mat::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]]);
        let b = Mat::zeros(1, 3);
        let x = [0.7, -1.3];
        let mut tape = Tape::new();
        let (wv, bv) = (tape.leaf(&w), tape.leaf(&b));
        let xv = tape.constant(Mat::row_vector(&x));
        let y = tape.linear(xv, wv, bv);
        let s = tape.sum_squares(y);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap().get(wv);
        let wx = w.matvec(&x);
        for i in 0..3 {
            for j in 0..2 {
                assert!((g[(i, j)] - wx[i] * x[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let w = Mat::from_rows(&[[1.0]]);
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let c = tape.constant(Mat::from_rows(&[[3.0]]));
        let loss = tape.sum_squares(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(wv), Mat::zeros(1, 1));
    }

    #[test]
    fn foreign_or_non_scalar_loss_rejected() {
        let mut a: Tape<f64> = Tape::new();
        let mut b: Tape<f64> = Tape::new();
        let va = a.constant(Mat::zeros(1, 1));
        let _ = b.constant(Mat::zeros(1, 1));
        assert!(matches!(b.backward(va), Err(Error::Usage(_))));
        let wide = a.constant(Mat::zeros(1, 2));
        assert!(matches!(a.backward(wide), Err(Error::Usage(_))));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        // f(x) = sum((exp(clamp(x)) * x / (1 + x^2)) + tanh(x) + relu(x))^2
        let x0 = Mat::from_rows(&[[0.3, -0.7, 1.1], [2.0, -0.2, 0.05]]);
        let f = |x: &Mat<f64>| -> (f64, Mat<f64>) {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let one = tape.constant(Mat::from_fn(2, 3, |_, _| 1.0));
            let c = tape.clamp(xv, -0.5, 1.5);
            let e = tape.exp(c);
            let p = tape.mul(e, xv);
            let sq = tape.mul(xv, xv);
            let den = tape.add(one, sq);
            let q = tape.div(p, den);
            let t = tape.tanh(xv);
            let r = tape.relu(xv);
            let s1 = tape.add(q, t);
            let s2 = tape.sub(s1, r);
            let left = tape.slice_cols(s2, 0, 1);
            let right = tape.slice_cols(s2, 1, 3);
            let joined = tape.concat_cols(right, left);
            let top = tape.slice_rows(joined, 0, 1);
            let bottom = tape.slice_rows(joined, 1, 2);
            let a = tape.sum_squares(top);
            let b = tape.sum_squares(bottom);
            let b3 = tape.scale(b, 3.0);
            let loss = tape.add(a, b3);
            let val = tape.value(loss)[(0, 0)];
            let g = tape.backward(loss).unwrap().get(xv);
            (val, g)
        };
        let (_, g) = f(&x0);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x0.clone();
                xp[(i, j)] += h;
                let mut xm = x0.clone();
                xm[(i, j)] -= h;
                let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-7 * (1.0 + fd.abs()), "({i},{j}) fd={fd} g={}", g[(i, j)]);
            }
        }
    }
}
