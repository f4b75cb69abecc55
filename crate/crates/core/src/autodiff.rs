//! A small reverse-mode tape over dense matrices.
//!
//! A [`Tape`] records one forward pass. Parameter and constant leaves borrow
//! their values, so building a tape never copies weights. [`Tape::backward`]
//! accumulates parameter gradients into a caller-owned buffer indexed by the
//! parameter id given at [`Tape::param`].

use std::borrow::Cow;

use crate::tensor::{gemm_into, Real, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Const,
    Param(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Gelu(usize),
    Silu(usize),
    Relu(usize),
    Exp(usize),
    LayerNorm { a: usize, xhat: Vec<T>, rstd: Vec<T> },
    SoftmaxRows(usize),
    SliceCols { a: usize, start: usize },
    ConcatCols(Vec<usize>),
    SumAll(usize),
    SumSquares(usize),
    Dropout { a: usize, mask: Vec<T> },
    GaussianNll { a: usize, target: Vec<T> },
    BceLogits { a: usize, labels: Vec<T> },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::c(3.0) * a * x * x)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Number of outputs of a Gaussian head over `d` coordinates: a mean and a
/// packed lower-triangular Cholesky factor whose diagonal is stored as logs.
pub fn gaussian_head_width(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// Unpack a Gaussian-head output into `(mean, L)` with `L` row-major `d x d`.
pub fn unpack_gaussian<T: Real>(out: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let mean = out[..d].to_vec();
    let mut l = vec![T::zero(); d * d];
    let mut n = d;
    for i in 0..d {
        for j in 0..=i {
            l[i * d + j] = if i == j { out[n].exp() } else { out[n] };
            n += 1;
        }
    }
    (mean, l)
}

fn solve_lower<T: Real>(l: &[T], d: usize, r: &[T]) -> Vec<T> {
    let mut w = vec![T::zero(); d];
    for i in 0..d {
        let mut s = r[i];
        for j in 0..i {
            s = s - l[i * d + j] * w[j];
        }
        w[i] = s / l[i * d + i];
    }
    w
}

fn solve_upper_t<T: Real>(l: &[T], d: usize, w: &[T]) -> Vec<T> {
    let mut g = vec![T::zero(); d];
    for i in (0..d).rev() {
        let mut s = w[i];
        for j in i + 1..d {
            s = s - l[j * d + i] * g[j];
        }
        g[i] = s / l[i * d + i];
    }
    g
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf; its gradient lands in slot `id` of the buffer passed to
    /// [`Tape::backward`].
    pub fn param(&mut self, id: usize, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Const });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = self.value(a).matmul_t(ta, self.value(b), tb);
        self.push(out, Op::MatMul { a: a.0, b: b.0, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    fn zip_row(&self, a: Var, row: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "row operand must have one row");
        assert_eq!(x.cols(), r.cols(), "row operand width mismatch");
        let c = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for xr in x.data().chunks_exact(c) {
            data.extend(xr.iter().zip(r.data()).map(|(&p, &q)| f(p, q)));
        }
        Tensor::from_vec(x.rows(), c, data)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p + q);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a.0, b.0))
    }

    /// Broadcast a `1 x c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.zip_row(a, row, |p, q| p + q);
        self.push(out, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.zip_row(a, row, |p, q| p * q);
        self.push(out, Op::MulRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a.0, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a.0))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a.0))
    }

    /// Per-row normalization to zero mean and unit variance, without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let n = T::c(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            rstd[i] = s;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * s;
            }
        }
        let out = Tensor::from_vec(r, c, xhat.clone());
        self.push(out, Op::LayerNorm { a: a.0, xhat, rstd })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "column slice out of range");
        let mut out = Tensor::zeros(x.rows(), len);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a: a.0, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows(), rows, "concat row mismatch");
            for i in 0..rows {
                out.row_mut(i)[off..off + x.cols()].copy_from_slice(x.row(i));
            }
            off += x.cols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::filled(1, 1, s), Op::SumAll(a.0))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_sq();
        self.push(Tensor::filled(1, 1, s), Op::SumSquares(a.0))
    }

    /// Multiply by a fixed mask (already scaled by `1 / keep`).
    pub fn dropout(&mut self, a: Var, mask: Vec<T>) -> Var {
        assert_eq!(mask.len(), self.value(a).len());
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Dropout { a: a.0, mask })
    }

    /// Negative log-density of `target` under the Gaussian encoded by the
    /// `1 x gaussian_head_width(d)` node `a`.
    pub fn gaussian_nll(&mut self, a: Var, target: &[T]) -> Var {
        let d = target.len();
        let out = self.value(a);
        assert_eq!(out.len(), gaussian_head_width(d), "Gaussian head width mismatch");
        let (mean, l) = unpack_gaussian(out.data(), d);
        let r: Vec<T> = target.iter().zip(&mean).map(|(&z, &m)| z - m).collect();
        let w = solve_lower(&l, d, &r);
        let log_det: T = (0..d).map(|i| out.data()[d + i * (i + 1) / 2 + i]).sum();
        let nll = T::c(0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln())
            + log_det
            + T::c(0.5) * w.iter().map(|&v| v * v).sum::<T>();
        self.push(Tensor::filled(1, 1, nll), Op::GaussianNll { a: a.0, target: target.to_vec() })
    }

    /// Mean binary cross-entropy of logits in column `a` against 0/1 labels.
    pub fn bce_logits(&mut self, a: Var, labels: &[T]) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), labels.len());
        let n = T::c(labels.len() as f64);
        let s = x.data().iter().zip(labels).map(|(&s, &y)| softplus(s) - y * s).sum::<T>() / n;
        self.push(Tensor::filled(1, 1, s), Op::BceLogits { a: a.0, labels: labels.to_vec() })
    }

    /// Back-propagate from the scalar `loss`, adding `scale * d loss / d param`
    /// into `grads[id]` for every parameter leaf.
    pub fn backward(&self, loss: Var, scale: T, grads: &mut [Tensor<T>]) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut adj: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(1, 1, scale));

        fn acc<T: Real>(slot: &mut Option<Tensor<T>>, shape: (usize, usize), f: impl FnOnce(&mut Tensor<T>)) {
            let t = slot.get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
            f(t);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let shape_of = |i: usize| self.nodes[i].value.shape();
            let val = |i: usize| -> &Tensor<T> { &self.nodes[i].value };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    let dst = &mut grads[*id];
                    assert_eq!(dst.shape(), g.shape(), "gradient buffer shape mismatch");
                    for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + *s;
                    }
                }
                &Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (val(a), val(b));
                    acc(&mut adj[a], shape_of(a), |da| {
                        if ta {
                            gemm_into(bv, tb, &g, true, T::one(), T::one(), da);
                        } else {
                            gemm_into(&g, false, bv, !tb, T::one(), T::one(), da);
                        }
                    });
                    acc(&mut adj[b], shape_of(b), |db| {
                        if tb {
                            gemm_into(&g, true, av, ta, T::one(), T::one(), db);
                        } else {
                            gemm_into(av, !ta, &g, false, T::one(), T::one(), db);
                        }
                    });
                }
                &Op::Add(a, b) | &Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                    acc(&mut adj[b], shape_of(b), |t| add_into(t, g.data(), sign));
                    give(&mut adj[a], g);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    acc(&mut adj[a], shape_of(a), |t| {
                        for ((d, &gi), &bi) in t.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d = *d + gi * bi;
                        }
                    });
                    acc(&mut adj[b], shape_of(b), |t| {
                        for ((d, &gi), &ai) in t.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *d = *d + gi * ai;
                        }
                    });
                }
                &Op::AddRow(a, r) => {
                    let c = g.cols();
                    acc(&mut adj[r], shape_of(r), |t| {
                        for gr in g.data().chunks_exact(c) {
                            add_into(t, gr, T::one());
                        }
                    });
                    give(&mut adj[a], g);
                }
                &Op::MulRow(a, r) => {
                    let (av, rv) = (val(a), val(r));
                    let c = g.cols();
                    acc(&mut adj[a], shape_of(a), |t| {
                        for (tr, gr) in t.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(c)) {
                            for ((d, &gi), &ri) in tr.iter_mut().zip(gr).zip(rv.data()) {
                                *d = *d + gi * ri;
                            }
                        }
                    });
                    acc(&mut adj[r], shape_of(r), |t| {
                        for (gr, ar) in g.data().chunks_exact(c).zip(av.data().chunks_exact(c)) {
                            for ((d, &gi), &ai) in t.data_mut().iter_mut().zip(gr).zip(ar) {
                                *d = *d + gi * ai;
                            }
                        }
                    });
                }
                &Op::Scale(a, s) => acc(&mut adj[a], shape_of(a), |t| add_into(t, g.data(), s)),
                &Op::AddScalar(a) => give(&mut adj[a], g),
                &Op::Gelu(a) | &Op::Silu(a) | &Op::Relu(a) | &Op::Exp(a) => {
                    let x = val(a);
                    let y = &node.value;
                    let op = &node.op;
                    acc(&mut adj[a], shape_of(a), |t| {
                        for (i, d) in t.data_mut().iter_mut().enumerate() {
                            let xi = x.data()[i];
                            let dy = match op {
                                Op::Gelu(_) => gelu_grad(xi),
                                Op::Silu(_) => {
                                    let s = sigmoid(xi);
                                    s * (T::one() + xi * (T::one() - s))
                                }
                                Op::Relu(_) => {
                                    if xi > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                _ => y.data()[i],
                            };
                            *d = *d + g.data()[i] * dy;
                        }
                    });
                }
                Op::LayerNorm { a, xhat, rstd } => {
                    let (r, c) = g.shape();
                    let n = T::c(c as f64);
                    acc(&mut adj[*a], (r, c), |t| {
                        for i in 0..r {
                            let gr = &g.data()[i * c..(i + 1) * c];
                            let xr = &xhat[i * c..(i + 1) * c];
                            let mg = gr.iter().copied().sum::<T>() / n;
                            let mgx = gr.iter().zip(xr).map(|(&p, &q)| p * q).sum::<T>() / n;
                            let dst = &mut t.data_mut()[i * c..(i + 1) * c];
                            for j in 0..c {
                                dst[j] = dst[j] + rstd[i] * (gr[j] - mg - xr[j] * mgx);
                            }
                        }
                    });
                }
                &Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    acc(&mut adj[a], (r, c), |t| {
                        for i in 0..r {
                            let yr = y.row(i);
                            let gr = g.row(i);
                            let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>();
                            let dst = t.row_mut(i);
                            for j in 0..c {
                                dst[j] = dst[j] + yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                &Op::SliceCols { a, start } => {
                    let len = g.cols();
                    acc(&mut adj[a], shape_of(a), |t| {
                        for i in 0..g.rows() {
                            let dst = &mut t.row_mut(i)[start..start + len];
                            for (d, &s) in dst.iter_mut().zip(g.row(i)) {
                                *d = *d + s;
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = shape_of(p);
                        acc(&mut adj[p], (r, c), |t| {
                            for i in 0..r {
                                let src = &g.row(i)[off..off + c];
                                for (d, &s) in t.row_mut(i).iter_mut().zip(src) {
                                    *d = *d + s;
                                }
                            }
                        });
                        off += c;
                    }
                }
                &Op::SumAll(a) => {
                    let s = g.data()[0];
                    acc(&mut adj[a], shape_of(a), |t| t.data_mut().iter_mut().for_each(|d| *d = *d + s));
                }
                &Op::SumSquares(a) => {
                    let s = g.data()[0] + g.data()[0];
                    let x = val(a);
                    acc(&mut adj[a], shape_of(a), |t| {
                        for (d, &xi) in t.data_mut().iter_mut().zip(x.data()) {
                            *d = *d + s * xi;
                        }
                    });
                }
                Op::Dropout { a, mask } => {
                    acc(&mut adj[*a], shape_of(*a), |t| {
                        for ((d, &gi), &m) in t.data_mut().iter_mut().zip(g.data()).zip(mask) {
                            *d = *d + gi * m;
                        }
                    });
                }
                Op::GaussianNll { a, target } => {
                    let s = g.data()[0];
                    let out = val(*a);
                    let d = target.len();
                    let (mean, l) = unpack_gaussian(out.data(), d);
                    let r: Vec<T> = target.iter().zip(&mean).map(|(&z, &m)| z - m).collect();
                    let w = solve_lower(&l, d, &r);
                    let gv = solve_upper_t(&l, d, &w);
                    acc(&mut adj[*a], shape_of(*a), |t| {
                        let dst = t.data_mut();
                        for i in 0..d {
                            dst[i] = dst[i] - s * gv[i];
                        }
                        let mut n = d;
                        for i in 0..d {
                            for j in 0..=i {
                                let dl = -gv[i] * w[j];
                                dst[n] = dst[n]
                                    + s * if i == j { T::one() + dl * l[i * d + i] } else { dl };
                                n += 1;
                            }
                        }
                    });
                }
                Op::BceLogits { a, labels } => {
                    let s = g.data()[0] / T::c(labels.len() as f64);
                    let x = val(*a);
                    acc(&mut adj[*a], shape_of(*a), |t| {
                        for ((d, &xi), &y) in t.data_mut().iter_mut().zip(x.data()).zip(labels) {
                            *d = *d + s * (sigmoid(xi) - y);
                        }
                    });
                }
            }
        }
    }
}

/// Add `g` into an adjoint slot, moving it in when the slot is empty.
fn give<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(t) => add_into(t, g.data(), T::one()),
        None => *slot = Some(g),
    }
}

fn add_into<T: Real>(t: &mut Tensor<T>, g: &[T], s: T) {
    for (d, &v) in t.data_mut().iter_mut().zip(g) {
        *d = *d + s * v;
    }
}
