//! Reverse-mode gradient tape over dense matrices.
//!
//! Values are computed eagerly when an op is recorded; `backward` walks the
//! node list in reverse and accumulates adjoints. Constants never receive
//! adjoints, so large input batches cost nothing on the way back.

use super::mlp::Activation;
use super::tensor::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::numeric::{compensated_sum, det_and_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Param,
    Const,
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Matrix),
    Act(Var, Activation),
    Sin(Var),
    Cos(Var),
    Square(Var),
    HStack(Vec<Var>),
    VStack(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    RowSum(Var),
    RowFn(Var, Matrix),
    Det(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    /// Adjoint of `v`; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of shape `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Param, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const, false)
    }

    /// `x · wᵀ` with `x: [r×k]`, `w: [n×k]`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Var {
        let v = matmul_nt(self.value(x), self.value(w));
        let ng = self.ng(x) || self.ng(w);
        self.push(v, Op::MatMulNt(x, w), ng)
    }

    /// Adds the `[1×c]` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows, 1);
        assert_eq!(xv.cols, bv.cols, "add_row cols");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// Multiplies every row of `x` elementwise by the `[1×c]` row `s`.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.rows, 1);
        assert_eq!(xv.cols, sv.cols, "mul_row cols");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, &ss) in out.row_mut(r).iter_mut().zip(&sv.data) {
                *o *= ss;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(out, Op::MulRow(x, s), ng)
    }

    /// Multiplies row `i` of `x` by the scalar `c[i]` of the `[r×1]` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(c));
        assert_eq!(cv.cols, 1);
        assert_eq!(xv.rows, cv.rows, "mul_col rows");
        let mut out = xv.clone();
        for r in 0..out.rows {
            let k = cv.data[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        let ng = self.ng(x) || self.ng(c);
        self.push(out, Op::MulCol(x, c), ng)
    }

    /// Multiplies `x` by the `[1×1]` variable `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(x) || self.ng(s);
        self.push(out, Op::MulScalar(x, s), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Div(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    /// `a + c` for a constant matrix `c` of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Var {
        let out = self.value(a).zip_map(c, |x, y| x + y);
        let ng = self.ng(a);
        self.push(out, Op::AddConst(a), ng)
    }

    /// `a ⊙ m` for a constant mask `m` of the same shape.
    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Var {
        let out = self.value(a).zip_map(&m, |x, y| x * y);
        let ng = self.ng(a);
        self.push(out, Op::MulConst(a, m), ng)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if matches!(act, Activation::Linear) {
            return a;
        }
        let out = self.value(a).map(|v| act.apply(v));
        let ng = self.ng(a);
        self.push(out, Op::Act(a, act), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sin);
        let ng = self.ng(a);
        self.push(out, Op::Sin(a), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::cos);
        let ng = self.ng(a);
        self.push(out, Op::Cos(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        let ng = self.ng(a);
        self.push(out, Op::Square(a), ng)
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hstack(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::HStack(parts.to_vec()), ng)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vstack(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::VStack(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// Sum of all entries (compensated), as a `[1×1]` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = compensated_sum(self.value(a).data.iter().copied());
        let ng = self.ng(a);
        self.push(Matrix::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `[r×1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, 1);
        for r in 0..av.rows {
            out.data[r] = compensated_sum(av.row(r).iter().copied());
        }
        let ng = self.ng(a);
        self.push(out, Op::RowSum(a), ng)
    }

    /// Applies a scalar function to each row of `a`. `f` returns the value and
    /// its gradient with respect to the row; the result has shape `[r×1]`.
    pub fn row_fn(&mut self, a: Var, f: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, 1);
        let mut g = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let (v, grad) = f(av.row(r));
            out.data[r] = v;
            g.row_mut(r).copy_from_slice(&grad);
        }
        let ng = self.ng(a);
        self.push(out, Op::RowFn(a, g), ng)
    }

    /// Row-wise determinant: each row of `a` holds a flattened `n×n` matrix.
    pub fn det_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols, n * n, "det_rows width");
        let mut out = Matrix::zeros(av.rows, 1);
        let mut g = Matrix::zeros(av.rows, n * n);
        for r in 0..av.rows {
            let (d, inv) = det_and_inverse(av.row(r), n);
            out.data[r] = d;
            if let Some(inv) = inv {
                // d det / d A_ij = det · (A⁻¹)_ji
                let gr = g.row_mut(r);
                for i in 0..n {
                    for j in 0..n {
                        gr[i * n + j] = d * inv[j * n + i];
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Det(a, g), ng)
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        if !self.ng(v) {
            return;
        }
        let shape = self.value(v).shape();
        let slot = grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
        f(slot);
    }

    fn propagate(&self, op: &Op, value: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Param | Op::Const => {}
            Op::MatMulNt(x, w) => {
                // y = x wᵀ: dx = g w, dw = gᵀ x
                if self.ng(*x) {
                    self.acc(grads, *x, matmul(g, self.value(*w)));
                }
                if self.ng(*w) {
                    self.acc(grads, *w, matmul_tn(g, self.value(*x)));
                }
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*b) {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, &gg) in db.data.iter_mut().zip(g.row(r)) {
                            *d += gg;
                        }
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::MulRow(x, s) => {
                let sv = self.value(*s);
                if self.ng(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows {
                        for (d, &ss) in dx.row_mut(r).iter_mut().zip(&sv.data) {
                            *d *= ss;
                        }
                    }
                    self.acc(grads, *x, dx);
                }
                if self.ng(*s) {
                    let xv = self.value(*x);
                    let mut ds = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for ((d, &gg), &xx) in ds.data.iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                            *d += gg * xx;
                        }
                    }
                    self.acc(grads, *s, ds);
                }
            }
            Op::MulCol(x, c) => {
                let cv = self.value(*c);
                if self.ng(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows {
                        let k = cv.data[r];
                        dx.row_mut(r).iter_mut().for_each(|d| *d *= k);
                    }
                    self.acc(grads, *x, dx);
                }
                if self.ng(*c) {
                    let xv = self.value(*x);
                    let mut dc = Matrix::zeros(g.rows, 1);
                    for r in 0..g.rows {
                        dc.data[r] = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    }
                    self.acc(grads, *c, dc);
                }
            }
            Op::MulScalar(x, s) => {
                let k = self.scalar(*s);
                if self.ng(*x) {
                    self.acc(grads, *x, g.map(|v| v * k));
                }
                if self.ng(*s) {
                    let xv = self.value(*x);
                    let d = compensated_sum(g.data.iter().zip(&xv.data).map(|(a, b)| a * b));
                    self.acc(grads, *s, Matrix::scalar(d));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    self.acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if self.ng(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = g.zip_map(value, |x, y| x * y);
                    self.acc(grads, *b, t.zip_map(bv, |x, y| -x / y));
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g.map(|v| v * k)),
            Op::AddConst(a) => self.acc(grads, *a, g.clone()),
            Op::MulConst(a, m) => self.acc(grads, *a, g.zip_map(m, |x, y| x * y)),
            Op::Act(a, act) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.zip_map(av, |gg, x| gg * act.derivative(x)));
            }
            Op::Sin(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.zip_map(av, |gg, x| gg * x.cos()));
            }
            Op::Cos(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.zip_map(av, |gg, x| -gg * x.sin()));
            }
            Op::Square(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, g.zip_map(av, |gg, x| 2.0 * gg * x));
            }
            Op::HStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols;
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        self.acc(grads, p, dp);
                    }
                    off += pc;
                }
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pr = self.value(p).rows;
                    if self.ng(p) {
                        self.acc(grads, p, g.slice_rows(off, pr));
                    }
                    off += pr;
                }
            }
            Op::SliceRows(a, start) => {
                let c = g.cols;
                let start = *start;
                self.acc_with(grads, *a, |m| {
                    for (d, &gg) in m.data[start * c..start * c + g.len()].iter_mut().zip(&g.data) {
                        *d += gg;
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                self.acc_with(grads, *a, |m| {
                    for r in 0..g.rows {
                        let row = m.row_mut(r);
                        for (d, &gg) in row[start..start + g.cols].iter_mut().zip(g.row(r)) {
                            *d += gg;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.acc(grads, *a, Matrix::filled(r, c, g.data[0]));
            }
            Op::RowSum(a) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).iter_mut().for_each(|v| *v = g.data[i]);
                }
                self.acc(grads, *a, d);
            }
            Op::RowFn(a, jac) | Op::Det(a, jac) => {
                let mut d = jac.clone();
                for r in 0..d.rows {
                    let k = g.data[r];
                    d.row_mut(r).iter_mut().for_each(|v| *v *= k);
                }
                self.acc(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).get_or_zeros(x, x0.shape());
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data[i] += h;
            let mut xm = x0.clone();
            xm.data[i] -= h;
            let mut tp = Tape::new();
            let vp = tp.param(xp);
            let fp = build(&mut tp, vp);
            let mut tm = Tape::new();
            let vm = tm.param(xm);
            let fm = build(&mut tm, vm);
            let fd = (tp.scalar(fp) - tm.scalar(fm)) / (2.0 * h);
            assert!(
                (fd - g.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {i}: fd {fd} vs tape {}",
                g.data[i]
            );
        }
    }

    #[test]
    fn gradient_of_half_squared_norm_is_identity() {
        let mut tape = Tape::new();
        let theta = tape.param(Matrix::from_vec(1, 3, vec![0.5, -2.0, 3.0]));
        let sq = tape.square(theta);
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        let g = tape.backward(l);
        assert_eq!(g.get(theta).unwrap().data, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let theta = tape.param(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let c = tape.constant(Matrix::scalar(4.0));
        let z = tape.scale(theta, 0.0);
        let s = tape.sum(z);
        let l = tape.add(s, c);
        let g = tape.backward(l).get_or_zeros(theta, (1, 2));
        assert_eq!(g.data, vec![0.0, 0.0]);
    }

    #[test]
    fn det_rows_gradient() {
        fd_check(
            |t, x| {
                let d = t.det_rows(x, 3);
                t.sum(d)
            },
            Matrix::from_vec(2, 9, vec![
                2.0, 0.3, 0.1, -0.2, 1.5, 0.4, 0.0, 0.7, 1.1, //
                1.0, 0.2, 0.0, 0.1, 0.9, -0.3, 0.5, 0.0, 1.3,
            ]),
        );
    }

    #[test]
    fn mixed_ops_gradient() {
        fd_check(
            |t, x| {
                let a = t.sin(x);
                let b = t.cos(x);
                let c = t.hstack(&[a, b, x]);
                let s = t.slice_cols(c, 1, 4);
                let r = t.slice_rows(s, 1, 2);
                let q = t.square(r);
                let d = t.div(q, r);
                let e = t.activation(d, Activation::Softplus { beta: 10.0 });
                let f = t.row_sum(e);
                let g = t.mul_col(r, f);
                let sc = t.slice_rows(x, 0, 1);
                let sc = t.slice_cols(sc, 0, 1);
                let h = t.mul_scalar(g, sc);
                t.mean(h)
            },
            Matrix::from_vec(3, 2, vec![0.3, -0.7, 1.1, 0.4, -0.2, 0.9]),
        );
    }
}
