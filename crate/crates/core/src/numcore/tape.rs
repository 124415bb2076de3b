//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to propagate gradients. [`Tape::backward`] walks the nodes in exact
//! reverse order of recording and accumulates gradients additively.

use super::matrix::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix, Real};
use super::ops::{gelu, gelu_grad, layer_norm_with_cache, sigmoid, softmax_row};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        normalized: Matrix<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    /// Scalar function of one input whose gradient was computed alongside
    /// the value.
    ScalarFn { input: Var, local_grad: Matrix<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable input: gradients flow into it.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input: never receives gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} · {:?}", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.cols(), "matmul_nt {:?} · {:?}ᵀ", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        matmul_nt_acc(va, vb, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "{what} shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "add", |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "sub", |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, "mul", |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds the `1 × d` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        assert!(vb.rows() == 1 && vb.cols() == vx.cols(), "add_row {:?} + {:?}", vx.shape(), vb.shape());
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddRow(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: T) -> Var {
        let (out, cache) = layer_norm_with_cache(
            self.value(x),
            self.value(gain).data(),
            self.value(shift).data(),
            eps,
        )
        .expect("layer_norm shapes");
        let ng = self.needs(x) || self.needs(gain) || self.needs(shift);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                normalized: cache.normalized,
                inv_std: cache.inv_std,
            },
            ng,
        )
    }

    /// Row softmax over the keys where `key_mask` is true.
    ///
    /// Panics when every key is masked; the all-masked case must be handled
    /// by the caller before reaching the tape.
    pub fn masked_softmax(&mut self, scores: Var, key_mask: &[bool]) -> Var {
        let s = self.value(scores);
        assert_eq!(s.cols(), key_mask.len(), "softmax mask length");
        assert!(key_mask.iter().any(|&m| m), "masked_softmax on tape with every key masked");
        let mut out = Matrix::zeros(s.rows(), s.cols());
        for r in 0..s.rows() {
            softmax_row(s.row(r), key_mask, out.row_mut(r));
        }
        let ng = self.needs(scores);
        self.push(out, Op::Softmax(scores), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert!(start + len <= vx.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(vx.rows(), len);
        for r in 0..vx.rows() {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + vp.cols()].copy_from_slice(vp.row(r));
            }
            offset += vp.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Sum of all entries, as a `1 × 1` matrix.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Matrix::filled(1, 1, s), Op::Sum(x), ng)
    }

    /// Records a scalar-valued function of `input` whose gradient has
    /// already been computed.
    pub fn scalar_fn(&mut self, input: Var, value: T, local_grad: Matrix<T>) -> Var {
        assert_eq!(self.value(input).shape(), local_grad.shape(), "scalar_fn gradient shape");
        let ng = self.needs(input);
        self.push(Matrix::filled(1, 1, value), Op::ScalarFn { input, local_grad }, ng)
    }

    /// Propagates gradients from the scalar `loss` back to every node that
    /// depends on a leaf.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    matmul_nt_acc(g, vb, slot(grads, *a, va.shape()));
                }
                if needs(*b) {
                    matmul_tn_acc(va, g, slot(grads, *b, vb.shape()));
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    matmul_acc(g, vb, slot(grads, *a, va.shape()));
                }
                if needs(*b) {
                    matmul_tn_acc(g, va, slot(grads, *b, vb.shape()));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if needs(*b) {
                    slot(grads, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if needs(*b) {
                    slot(grads, *b, g.shape()).axpy(-T::one(), g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let s = slot(grads, *a, g.shape());
                    for ((o, &gv), &bv) in s.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                }
                if needs(*b) {
                    let s = slot(grads, *b, g.shape());
                    for ((o, &gv), &av) in s.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if needs(*x) {
                    slot(grads, *x, g.shape()).add_assign(g);
                }
                if needs(*bias) {
                    let s = slot(grads, *bias, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, &gv) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Scale(x, c) => slot(grads, *x, g.shape()).axpy(*c, g),
            Op::Sigmoid(x) => {
                let s = slot(grads, *x, g.shape());
                for ((o, &gv), &y) in s.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += gv * y * (T::one() - y);
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let s = slot(grads, *x, g.shape());
                for ((o, &gv), &xv) in s.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                    *o += gv * gelu_grad(xv);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                normalized,
                inv_std,
            } => {
                let d = g.cols();
                let vg = self.value(*gain).data().to_vec();
                if needs(*gain) {
                    let s = slot(grads, *gain, (1, d));
                    for r in 0..g.rows() {
                        for ((o, &gv), &h) in s.data_mut().iter_mut().zip(g.row(r)).zip(normalized.row(r)) {
                            *o += gv * h;
                        }
                    }
                }
                if needs(*shift) {
                    let s = slot(grads, *shift, (1, d));
                    for r in 0..g.rows() {
                        for (o, &gv) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
                if needs(*x) {
                    let n = T::lit(d as f64);
                    let s = slot(grads, *x, g.shape());
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..g.rows() {
                        let h = normalized.row(r);
                        for j in 0..d {
                            dxhat[j] = g.get(r, j) * vg[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dh = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let out = s.row_mut(r);
                        for j in 0..d {
                            out[j] += inv_std[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let s = slot(grads, *x, g.shape());
                for r in 0..g.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in s.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let shape = self.value(*x).shape();
                let s = slot(grads, *x, shape);
                for r in 0..g.rows() {
                    for (o, &gv) in s.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape();
                    if needs(p) {
                        let s = slot(grads, p, shape);
                        for r in 0..g.rows() {
                            for (o, &gv) in s.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + shape.1]) {
                                *o += gv;
                            }
                        }
                    }
                    offset += shape.1;
                }
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                let gv = g.get(0, 0);
                for o in slot(grads, *x, shape).data_mut() {
                    *o += gv;
                }
            }
            Op::ScalarFn { input, local_grad } => {
                slot(grads, *input, local_grad.shape()).axpy(g.get(0, 0), local_grad);
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, shape: (usize, usize)) -> &mut Matrix<T> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}
