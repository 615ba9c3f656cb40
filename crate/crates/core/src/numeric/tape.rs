use std::sync::atomic::{AtomicU64, Ordering};

use super::{axpy, dot, NumericError, ParameterSet, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Probability floor used by [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { slot: Option<usize> },
    Affine { w: usize, x: usize, b: Option<usize> },
    Linear { x: usize, w: usize, b: Option<usize> },
    MatMul { a: usize, b: usize },
    MatMulNT { a: usize, b: usize },
    VecMat { v: usize, m: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    AddRow { m: usize, v: usize },
    Outer { a: usize, b: usize },
    ScaleShift { a: usize, scale: f64 },
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    Softmax(usize),
    SoftmaxRows(usize),
    LogSoftmax(usize),
    CrossEntropy { probs: usize, target: usize },
    SoftTargetKl { logits: usize, target: usize, temperature: f64 },
    Sum(usize),
    AddN(Vec<usize>),
    Concat(Vec<usize>),
    MeanRows(usize),
    Row { m: usize, row: usize },
    GatherRows { m: usize, rows: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive operations. Node order is execution order,
/// so the backward sweep is a reverse walk over the node list.
#[derive(Debug)]
pub struct Tape<S: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints of every leaf reached by a backward sweep.
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    tape: u64,
    leaves: Vec<(usize, Option<usize>, Vec<S>)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to a leaf, if the leaf was reached.
    pub fn wrt(&self, var: Var) -> Option<&[S]> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves
            .iter()
            .find(|(idx, _, _)| *idx == var.index)
            .map(|(_, _, g)| g.as_slice())
    }

    /// Adds parameter-leaf gradients into the matching tensors' `grad` buffers.
    pub fn accumulate_into<P: ParameterSet<S> + ?Sized>(&self, params: &mut P) -> Result<(), NumericError> {
        let mut tensors = params.tensors_mut();
        for (_, slot, g) in &self.leaves {
            let Some(slot) = *slot else { continue };
            let t = tensors.get_mut(slot).ok_or_else(|| NumericError::InvalidArgument(format!("no parameter in slot {slot}")))?;
            if t.numel() != g.len() {
                return Err(NumericError::ShapeMismatch {
                    op: "accumulate_grads",
                    detail: format!("slot {slot}: {} vs {}", t.numel(), g.len()),
                });
            }
            for (dst, src) in t.grad_mut().iter_mut().zip(g) {
                *dst += *src;
            }
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, detail: String) -> NumericError {
    NumericError::ShapeMismatch { op, detail }
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn gelu_parts<S: Scalar>(x: S) -> (S, S) {
    // tanh approximation
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let value = half * x * (S::one() + t);
    let dinner = c * (S::one() + S::of(3.0) * k * x * x);
    let deriv = half * (S::one() + t) + half * x * (S::one() - t * t) * dinner;
    (value, deriv)
}

fn softmax_into<S: Scalar>(x: &[S], out: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_into<S: Scalar>(x: &[S], out: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let total: S = x.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + total.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NumericError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumericError::DetachedTensor);
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &[S] {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].shape
    }

    /// First element of a value; used for scalar results.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v)[0]
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, value: Vec<S>, kind: Op, inputs: &[usize]) -> Result<Var, NumericError> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Vec<S>, slot: Option<usize>, requires_grad: bool) -> Result<Var, NumericError> {
        if shape.is_empty() || shape.iter().product::<usize>() != value.len() {
            return Err(mismatch("leaf", format!("shape {shape:?} with {} values", value.len())));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf { slot },
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records a trainable tensor; `slot` is its position in the owning [`ParameterSet`].
    pub fn param(&mut self, slot: usize, tensor: &Tensor<S>) -> Var {
        self.leaf(tensor.shape().to_vec(), tensor.values().to_vec(), Some(slot), true)
            .expect("tensor invariants guarantee a valid leaf")
    }

    /// Records every tensor of a parameter set, in slot order.
    pub fn params<P: ParameterSet<S> + ?Sized>(&mut self, params: &P) -> Vec<Var> {
        params
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(slot, t)| self.param(slot, t))
            .collect()
    }

    /// A leaf that receives a gradient but belongs to no parameter set.
    pub fn variable(&mut self, shape: Vec<usize>, value: Vec<S>) -> Result<Var, NumericError> {
        self.leaf(shape, value, None, true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<S>) -> Result<Var, NumericError> {
        self.leaf(shape, value, None, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = shape.iter().product();
        self.constant(shape, vec![S::zero(); n]).expect("positive shape")
    }

    /// `W x + b` for `W: [m, n]`, `x: [n]`, `b: [m]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var, NumericError> {
        self.affine_impl("affine", w, x, Some(b))
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericError> {
        self.affine_impl("matvec", w, x, None)
    }

    fn affine_impl(&mut self, op: &'static str, w: Var, x: Var, b: Option<Var>) -> Result<Var, NumericError> {
        let (wi, xi) = (self.idx(w)?, self.idx(x)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (m, n) = rows_cols(&self.nodes[wi].shape).ok_or_else(|| mismatch(op, "weight must be 2-d".into()))?;
        if self.nodes[xi].value.len() != n || self.nodes[xi].shape.len() != 1 {
            return Err(mismatch(op, format!("W {m}x{n} with x {:?}", self.nodes[xi].shape)));
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.len() != m || self.nodes[bi].shape.len() != 1 {
                return Err(mismatch(op, format!("W {m}x{n} with b {:?}", self.nodes[bi].shape)));
            }
        }
        let (wv, xv) = (&self.nodes[wi].value, &self.nodes[xi].value);
        let mut out: Vec<S> = (0..m).map(|i| dot(&wv[i * n..(i + 1) * n], xv)).collect();
        if let Some(bi) = bi {
            for (o, &bb) in out.iter_mut().zip(&self.nodes[bi].value) {
                *o += bb;
            }
        }
        let mut inputs = vec![wi, xi];
        inputs.extend(bi);
        self.push(op, vec![m], out, Op::Affine { w: wi, x: xi, b: bi }, &inputs)
    }

    /// Row-wise `X W^T + b` for `X: [r, n]`, `W: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericError> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (r, n) = rows_cols(&self.nodes[xi].shape).ok_or_else(|| mismatch("linear", "input must be 2-d".into()))?;
        let (m, n2) = rows_cols(&self.nodes[wi].shape).ok_or_else(|| mismatch("linear", "weight must be 2-d".into()))?;
        if n != n2 {
            return Err(mismatch("linear", format!("X {r}x{n} with W {m}x{n2}")));
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.len() != m {
                return Err(mismatch("linear", format!("bias {:?} for {m} outputs", self.nodes[bi].shape)));
            }
        }
        let (xv, wv) = (&self.nodes[xi].value, &self.nodes[wi].value);
        let mut out = vec![S::zero(); r * m];
        for i in 0..r {
            let xr = &xv[i * n..(i + 1) * n];
            for j in 0..m {
                out[i * m + j] = dot(xr, &wv[j * n..(j + 1) * n]);
            }
        }
        if let Some(bi) = bi {
            let bv = &self.nodes[bi].value;
            for row in out.chunks_exact_mut(m) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        self.push("linear", vec![r, m], out, Op::Linear { x: xi, w: wi, b: bi }, &inputs)
    }

    /// `A B` for `A: [r, k]`, `B: [k, c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (r, k) = rows_cols(&self.nodes[ai].shape).ok_or_else(|| mismatch("matmul", "lhs must be 2-d".into()))?;
        let (k2, c) = rows_cols(&self.nodes[bi].shape).ok_or_else(|| mismatch("matmul", "rhs must be 2-d".into()))?;
        if k != k2 {
            return Err(mismatch("matmul", format!("{r}x{k} @ {k2}x{c}")));
        }
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                axpy(av[i * k + p], &bv[p * c..(p + 1) * c], orow);
            }
        }
        self.push("matmul", vec![r, c], out, Op::MatMul { a: ai, b: bi }, &[ai, bi])
    }

    /// `A B^T` for `A: [r, k]`, `B: [c, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (r, k) = rows_cols(&self.nodes[ai].shape).ok_or_else(|| mismatch("matmul_nt", "lhs must be 2-d".into()))?;
        let (c, k2) = rows_cols(&self.nodes[bi].shape).ok_or_else(|| mismatch("matmul_nt", "rhs must be 2-d".into()))?;
        if k != k2 {
            return Err(mismatch("matmul_nt", format!("{r}x{k} @ ({c}x{k2})^T")));
        }
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = dot(&av[i * k..(i + 1) * k], &bv[j * k..(j + 1) * k]);
            }
        }
        self.push("matmul_nt", vec![r, c], out, Op::MatMulNT { a: ai, b: bi }, &[ai, bi])
    }

    /// `v^T M` for `v: [n]`, `M: [n, d]`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var, NumericError> {
        let (vi, mi) = (self.idx(v)?, self.idx(m)?);
        let (n, d) = rows_cols(&self.nodes[mi].shape).ok_or_else(|| mismatch("vecmat", "matrix must be 2-d".into()))?;
        if self.nodes[vi].value.len() != n {
            return Err(mismatch("vecmat", format!("v {:?} with M {n}x{d}", self.nodes[vi].shape)));
        }
        let (vv, mv) = (&self.nodes[vi].value, &self.nodes[mi].value);
        let mut out = vec![S::zero(); d];
        for i in 0..n {
            axpy(vv[i], &mv[i * d..(i + 1) * d], &mut out);
        }
        self.push("vecmat", vec![d], out, Op::VecMat { v: vi, m: mi }, &[vi, mi])
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, kind: fn(usize, usize) -> Op) -> Result<Var, NumericError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(mismatch(op, format!("{:?} vs {:?}", self.nodes[ai].shape, self.nodes[bi].shape)));
        }
        let out = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[ai].shape.clone();
        self.push(op, shape, out, kind(ai, bi), &[ai, bi])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; ties route the adjoint to the first argument.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min)
    }

    /// Adds the vector `v: [c]` to every row of `M: [r, c]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, NumericError> {
        let (mi, vi) = (self.idx(m)?, self.idx(v)?);
        let (r, c) = rows_cols(&self.nodes[mi].shape).ok_or_else(|| mismatch("add_row", "matrix must be 2-d".into()))?;
        if self.nodes[vi].value.len() != c {
            return Err(mismatch("add_row", format!("{r}x{c} + {:?}", self.nodes[vi].shape)));
        }
        let vv = &self.nodes[vi].value;
        let mut out = self.nodes[mi].value.clone();
        for row in out.chunks_exact_mut(c) {
            for (o, &x) in row.iter_mut().zip(vv) {
                *o += x;
            }
        }
        self.push("add_row", vec![r, c], out, Op::AddRow { m: mi, v: vi }, &[mi, vi])
    }

    /// `a b^T` for vectors `a: [n]`, `b: [m]`.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let (n, m) = (av.len(), bv.len());
        let mut out = Vec::with_capacity(n * m);
        for &x in av {
            out.extend(bv.iter().map(|&y| x * y));
        }
        self.push("outer", vec![n, m], out, Op::Outer { a: ai, b: bi }, &[ai, bi])
    }

    /// `scale * a + shift`.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NumericError> {
        let ai = self.idx(a)?;
        let (s, t) = (S::of(scale), S::of(shift));
        let out = self.nodes[ai].value.iter().map(|&x| s * x + t).collect();
        let shape = self.nodes[ai].shape.clone();
        self.push("scale_shift", shape, out, Op::ScaleShift { a: ai, scale }, &[ai])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var, NumericError> {
        self.scale_shift(a, scale, 0.0)
    }

    fn unary(&mut self, op: &'static str, a: Var, f: impl Fn(S) -> S, kind: fn(usize) -> Op) -> Result<Var, NumericError> {
        let ai = self.idx(a)?;
        let out = self.nodes[ai].value.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[ai].shape.clone();
        self.push(op, shape, out, kind(ai), &[ai])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericError> {
        self.unary("tanh", a, S::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        self.unary("sigmoid", a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericError> {
        self.unary("gelu", a, |x| gelu_parts(x).0, Op::Gelu)
    }

    fn check_finite_input(&self, op: &'static str, i: usize) -> Result<(), NumericError> {
        if self.nodes[i].value.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NumericError::NonFinite { op })
        }
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericError> {
        let xi = self.idx(x)?;
        self.check_finite_input("softmax", xi)?;
        let xv = &self.nodes[xi].value;
        let mut out = vec![S::zero(); xv.len()];
        softmax_into(xv, &mut out);
        let shape = self.nodes[xi].shape.clone();
        self.push("softmax", shape, out, Op::Softmax(xi), &[xi])
    }

    /// Softmax applied to each row of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let xi = self.idx(x)?;
        let (r, c) = rows_cols(&self.nodes[xi].shape).ok_or_else(|| mismatch("softmax_rows", "input must be 2-d".into()))?;
        let xv = &self.nodes[xi].value;
        let mut out = vec![S::zero(); r * c];
        for (o, row) in out.chunks_exact_mut(c).zip(xv.chunks_exact(c)) {
            softmax_into(row, o);
        }
        self.push("softmax_rows", vec![r, c], out, Op::SoftmaxRows(xi), &[xi])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NumericError> {
        let xi = self.idx(x)?;
        self.check_finite_input("log_softmax", xi)?;
        let xv = &self.nodes[xi].value;
        let mut out = vec![S::zero(); xv.len()];
        log_softmax_into(xv, &mut out);
        let shape = self.nodes[xi].shape.clone();
        self.push("log_softmax", shape, out, Op::LogSoftmax(xi), &[xi])
    }

    /// `-ln(max(p[target], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var, NumericError> {
        let pi = self.idx(probs)?;
        let n = self.nodes[pi].value.len();
        if target >= n {
            return Err(NumericError::TargetOutOfRange { target, size: n });
        }
        let p = self.nodes[pi].value[target].max(S::of(PROB_FLOOR));
        self.push("cross_entropy", vec![1], vec![-p.ln()], Op::CrossEntropy { probs: pi, target }, &[pi])
    }

    /// `KL(p || softmax(logits / T))` where `p` is a fixed target distribution.
    pub fn soft_target_kl(&mut self, logits: Var, target: Var, temperature: f64) -> Result<Var, NumericError> {
        let (li, ti) = (self.idx(logits)?, self.idx(target)?);
        if self.nodes[li].shape != self.nodes[ti].shape {
            return Err(mismatch("soft_target_kl", format!("{:?} vs {:?}", self.nodes[li].shape, self.nodes[ti].shape)));
        }
        if temperature <= 0.0 {
            return Err(NumericError::InvalidArgument("temperature must be positive".into()));
        }
        let inv_t = S::of(1.0 / temperature);
        let scaled: Vec<S> = self.nodes[li].value.iter().map(|&z| z * inv_t).collect();
        let mut log_q = vec![S::zero(); scaled.len()];
        log_softmax_into(&scaled, &mut log_q);
        let kl: S = self.nodes[ti]
            .value
            .iter()
            .zip(&log_q)
            .filter(|(p, _)| **p > S::zero())
            .map(|(&p, &lq)| p * (p.ln() - lq))
            .sum();
        self.push(
            "soft_target_kl",
            vec![1],
            vec![kl],
            Op::SoftTargetKl {
                logits: li,
                target: ti,
                temperature,
            },
            &[li, ti],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let ai = self.idx(a)?;
        let total = self.nodes[ai].value.iter().copied().sum();
        self.push("sum", vec![1], vec![total], Op::Sum(ai), &[ai])
    }

    /// Sum of equally-shaped values, accumulated in argument order.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var, NumericError> {
        let idx: Vec<usize> = items.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        let first = *idx.first().ok_or_else(|| NumericError::InvalidArgument("add_n of nothing".into()))?;
        let shape = self.nodes[first].shape.clone();
        let mut out = vec![S::zero(); self.nodes[first].value.len()];
        for &i in &idx {
            if self.nodes[i].shape != shape {
                return Err(mismatch("add_n", format!("{:?} vs {:?}", self.nodes[i].shape, shape)));
            }
            for (o, &x) in out.iter_mut().zip(&self.nodes[i].value) {
                *o += x;
            }
        }
        self.push("add_n", shape, out, Op::AddN(idx.clone()), &idx)
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, items: &[Var]) -> Result<Var, NumericError> {
        let idx: Vec<usize> = items.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        if idx.is_empty() {
            return Err(NumericError::InvalidArgument("concat of nothing".into()));
        }
        let mut out = Vec::new();
        for &i in &idx {
            if self.nodes[i].shape.len() != 1 {
                return Err(mismatch("concat", format!("expected vectors, got {:?}", self.nodes[i].shape)));
            }
            out.extend_from_slice(&self.nodes[i].value);
        }
        let n = out.len();
        self.push("concat", vec![n], out, Op::Concat(idx.clone()), &idx)
    }

    /// Column means of `M: [r, c]`.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var, NumericError> {
        let mi = self.idx(m)?;
        let (r, c) = rows_cols(&self.nodes[mi].shape).ok_or_else(|| mismatch("mean_rows", "matrix must be 2-d".into()))?;
        let inv = S::one() / S::of(r as f64);
        let mut out = vec![S::zero(); c];
        for row in self.nodes[mi].value.chunks_exact(c) {
            axpy(inv, row, &mut out);
        }
        self.push("mean_rows", vec![c], out, Op::MeanRows(mi), &[mi])
    }

    pub fn row(&mut self, m: Var, row: usize) -> Result<Var, NumericError> {
        let mi = self.idx(m)?;
        let (r, c) = rows_cols(&self.nodes[mi].shape).ok_or_else(|| mismatch("row", "matrix must be 2-d".into()))?;
        if row >= r {
            return Err(mismatch("row", format!("row {row} of {r}")));
        }
        let out = self.nodes[mi].value[row * c..(row + 1) * c].to_vec();
        self.push("row", vec![c], out, Op::Row { m: mi, row }, &[mi])
    }

    /// Stacks the selected rows of `M` (embedding lookup).
    pub fn gather_rows(&mut self, m: Var, rows: &[usize]) -> Result<Var, NumericError> {
        let mi = self.idx(m)?;
        let (r, c) = rows_cols(&self.nodes[mi].shape).ok_or_else(|| mismatch("gather_rows", "matrix must be 2-d".into()))?;
        if rows.is_empty() {
            return Err(mismatch("gather_rows", "no rows selected".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(mismatch("gather_rows", format!("row {i} of {r}")));
            }
            out.extend_from_slice(&self.nodes[mi].value[i * c..(i + 1) * c]);
        }
        self.push("gather_rows", vec![rows.len(), c], out, Op::GatherRows { m: mi, rows: rows.to_vec() }, &[mi])
    }

    /// Reverse sweep from a scalar `loss`, seeded with `d loss / d loss = 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, NumericError> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(NumericError::NotScalar(self.nodes[li].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; li + 1];
        grads[li] = Some(vec![S::one()]);
        let mut leaves = Vec::new();

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { slot } = node.op {
                leaves.push((i, slot, g));
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        leaves.reverse();
        Ok(Gradients { tape: self.id, leaves })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `params`.
    pub fn backward_into<P: ParameterSet<S> + ?Sized>(&self, loss: Var, params: &mut P) -> Result<(), NumericError> {
        self.backward(loss)?.accumulate_into(params)
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| -> &[S] { &self.nodes[j].value };
        let wants = |j: usize| self.nodes[j].requires_grad;
        // Returns the (lazily zeroed) adjoint buffer of node j.
        fn buf<S: Scalar>(grads: &mut [Option<Vec<S>>], len: usize, j: usize) -> &mut Vec<S> {
            grads[j].get_or_insert_with(|| vec![S::zero(); len])
        }
        let len = |j: usize| self.nodes[j].value.len();

        match &node.op {
            Op::Leaf { .. } => {}
            Op::Affine { w, x, b } => {
                let (w, x) = (*w, *x);
                let n = len(x);
                if wants(w) {
                    let xv = val(x);
                    let gw = buf(grads, len(w), w);
                    for (r, &gi) in g.iter().enumerate() {
                        axpy(gi, xv, &mut gw[r * n..(r + 1) * n]);
                    }
                }
                if wants(x) {
                    let wv = val(w);
                    let gx = buf(grads, n, x);
                    for (r, &gi) in g.iter().enumerate() {
                        axpy(gi, &wv[r * n..(r + 1) * n], gx);
                    }
                }
                if let Some(b) = *b {
                    if wants(b) {
                        let gb = buf(grads, len(b), b);
                        axpy(S::one(), g, gb);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w) = (*x, *w);
                let (r, n) = rows_cols(&self.nodes[x].shape).unwrap();
                let m = node.shape[1];
                if wants(x) {
                    let wv = val(w);
                    let gx = buf(grads, r * n, x);
                    for row in 0..r {
                        let gx_row = &mut gx[row * n..(row + 1) * n];
                        for j in 0..m {
                            axpy(g[row * m + j], &wv[j * n..(j + 1) * n], gx_row);
                        }
                    }
                }
                if wants(w) {
                    let xv = val(x);
                    let gw = buf(grads, m * n, w);
                    for row in 0..r {
                        let x_row = &xv[row * n..(row + 1) * n];
                        for j in 0..m {
                            axpy(g[row * m + j], x_row, &mut gw[j * n..(j + 1) * n]);
                        }
                    }
                }
                if let Some(b) = *b {
                    if wants(b) {
                        let gb = buf(grads, m, b);
                        for grow in g.chunks_exact(m) {
                            axpy(S::one(), grow, gb);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (r, k) = rows_cols(&self.nodes[a].shape).unwrap();
                let c = node.shape[1];
                if wants(a) {
                    // dA = G B^T
                    let bv = val(b);
                    let ga = buf(grads, r * k, a);
                    for i2 in 0..r {
                        for p in 0..k {
                            ga[i2 * k + p] += dot(&g[i2 * c..(i2 + 1) * c], &bv[p * c..(p + 1) * c]);
                        }
                    }
                }
                if wants(b) {
                    // dB = A^T G
                    let av = val(a);
                    let gb = buf(grads, k * c, b);
                    for i2 in 0..r {
                        for p in 0..k {
                            axpy(av[i2 * k + p], &g[i2 * c..(i2 + 1) * c], &mut gb[p * c..(p + 1) * c]);
                        }
                    }
                }
            }
            Op::MatMulNT { a, b } => {
                let (a, b) = (*a, *b);
                let (r, k) = rows_cols(&self.nodes[a].shape).unwrap();
                let c = node.shape[1];
                if wants(a) {
                    let bv = val(b);
                    let ga = buf(grads, r * k, a);
                    for i2 in 0..r {
                        for j in 0..c {
                            axpy(g[i2 * c + j], &bv[j * k..(j + 1) * k], &mut ga[i2 * k..(i2 + 1) * k]);
                        }
                    }
                }
                if wants(b) {
                    let av = val(a);
                    let gb = buf(grads, c * k, b);
                    for i2 in 0..r {
                        for j in 0..c {
                            axpy(g[i2 * c + j], &av[i2 * k..(i2 + 1) * k], &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::VecMat { v, m } => {
                let (v, m) = (*v, *m);
                let (n, d) = rows_cols(&self.nodes[m].shape).unwrap();
                if wants(v) {
                    let mv = val(m);
                    let gv = buf(grads, n, v);
                    for (row, gvi) in gv.iter_mut().enumerate() {
                        *gvi += dot(g, &mv[row * d..(row + 1) * d]);
                    }
                }
                if wants(m) {
                    let vv = val(v);
                    let gm = buf(grads, n * d, m);
                    for (row, &vi) in vv.iter().enumerate() {
                        axpy(vi, g, &mut gm[row * d..(row + 1) * d]);
                    }
                }
            }
            Op::Add(a, b) => {
                for &j in [a, b] {
                    if wants(j) {
                        axpy(S::one(), g, buf(grads, g.len(), j));
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(S::one(), g, buf(grads, g.len(), *a));
                }
                if wants(*b) {
                    axpy(-S::one(), g, buf(grads, g.len(), *b));
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if wants(a) {
                    let bv = val(b);
                    let ga = buf(grads, g.len(), a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if wants(b) {
                    let av = val(a);
                    let gb = buf(grads, g.len(), b);
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Min(a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    let ga = buf(grads, g.len(), a);
                    for k in 0..g.len() {
                        if av[k] <= bv[k] {
                            ga[k] += g[k];
                        }
                    }
                }
                if wants(b) {
                    let gb = buf(grads, g.len(), b);
                    for k in 0..g.len() {
                        if av[k] > bv[k] {
                            gb[k] += g[k];
                        }
                    }
                }
            }
            Op::AddRow { m, v } => {
                let c = node.shape[1];
                if wants(*m) {
                    axpy(S::one(), g, buf(grads, g.len(), *m));
                }
                if wants(*v) {
                    let gv = buf(grads, c, *v);
                    for grow in g.chunks_exact(c) {
                        axpy(S::one(), grow, gv);
                    }
                }
            }
            Op::Outer { a, b } => {
                let (a, b) = (*a, *b);
                let m = node.shape[1];
                if wants(a) {
                    let bv = val(b);
                    let ga = buf(grads, len(a), a);
                    for (i2, gai) in ga.iter_mut().enumerate() {
                        *gai += dot(&g[i2 * m..(i2 + 1) * m], bv);
                    }
                }
                if wants(b) {
                    let av = val(a);
                    let gb = buf(grads, m, b);
                    for (i2, &ai) in av.iter().enumerate() {
                        axpy(ai, &g[i2 * m..(i2 + 1) * m], gb);
                    }
                }
            }
            Op::ScaleShift { a, scale } => {
                if wants(*a) {
                    axpy(S::of(*scale), g, buf(grads, g.len(), *a));
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let ga = buf(grads, g.len(), *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * (S::one() - y[k] * y[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let ga = buf(grads, g.len(), *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (S::one() - y[k]);
                    }
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let x = val(*a);
                    let ga = buf(grads, g.len(), *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * gelu_parts(x[k]).1;
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let inner = dot(g, y);
                    let ga = buf(grads, g.len(), *a);
                    for k in 0..g.len() {
                        ga[k] += y[k] * (g[k] - inner);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let c = node.shape[1];
                    let y = &node.value;
                    let ga = buf(grads, g.len(), *a);
                    for ((gr, yr), gar) in g.chunks_exact(c).zip(y.chunks_exact(c)).zip(ga.chunks_exact_mut(c)) {
                        let inner = dot(gr, yr);
                        for k in 0..c {
                            gar[k] += yr[k] * (gr[k] - inner);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let total: S = g.iter().copied().sum();
                    let ga = buf(grads, g.len(), *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] - y[k].exp() * total;
                    }
                }
            }
            Op::CrossEntropy { probs, target } => {
                if wants(*probs) {
                    let p = val(*probs)[*target];
                    let gp = buf(grads, len(*probs), *probs);
                    // Zero adjoint while the floor is active.
                    if p > S::of(PROB_FLOOR) {
                        gp[*target] -= g[0] / p;
                    }
                }
            }
            Op::SoftTargetKl {
                logits,
                target,
                temperature,
            } => {
                if wants(*logits) {
                    let inv_t = S::of(1.0 / temperature);
                    let scaled: Vec<S> = val(*logits).iter().map(|&z| z * inv_t).collect();
                    let mut q = vec![S::zero(); scaled.len()];
                    softmax_into(&scaled, &mut q);
                    let p = val(*target);
                    let gl = buf(grads, q.len(), *logits);
                    for k in 0..q.len() {
                        gl[k] += g[0] * (q[k] - p[k]) * inv_t;
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let ga = buf(grads, len(*a), *a);
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::AddN(items) => {
                for &j in items {
                    if wants(j) {
                        axpy(S::one(), g, buf(grads, g.len(), j));
                    }
                }
            }
            Op::Concat(items) => {
                let mut offset = 0;
                for &j in items {
                    let n = len(j);
                    if wants(j) {
                        axpy(S::one(), &g[offset..offset + n], buf(grads, n, j));
                    }
                    offset += n;
                }
            }
            Op::MeanRows(m) => {
                if wants(*m) {
                    let (r, c) = rows_cols(&self.nodes[*m].shape).unwrap();
                    let inv = S::one() / S::of(r as f64);
                    let gm = buf(grads, r * c, *m);
                    for row in gm.chunks_exact_mut(c) {
                        axpy(inv, g, row);
                    }
                }
            }
            Op::Row { m, row } => {
                if wants(*m) {
                    let c = g.len();
                    let gm = buf(grads, len(*m), *m);
                    axpy(S::one(), g, &mut gm[row * c..(row + 1) * c]);
                }
            }
            Op::GatherRows { m, rows } => {
                if wants(*m) {
                    let c = node.shape[1];
                    let gm = buf(grads, len(*m), *m);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(S::one(), &g[k * c..(k + 1) * c], &mut gm[r * c..(r + 1) * c]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn affine_examples() {
        let mut t = Tape::<f32>::new();
        let w = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = t.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let b = t.zeros(vec![2]);
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y), &[3.0, 4.0]);

        let w = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = t.constant(vec![2], vec![1.0, 1.0]).unwrap();
        let b = t.constant(vec![2], vec![1.0, 0.0]).unwrap();
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y), &[4.0, 7.0]);

        let w = t.zeros(vec![2, 2]);
        let b = t.constant(vec![2], vec![2.5, 2.5]).unwrap();
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y), &[2.5, 2.5]);

        let bad = t.zeros(vec![3]);
        assert!(matches!(t.affine(w, bad, b), Err(NumericError::ShapeMismatch { .. })));
    }

    #[test]
    fn tanh_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.variable(vec![2], vec![0.0, 20.0]).unwrap();
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y)[0], 0.0);
        assert!(close(t.value(y)[1], 1.0, 1e-6));
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(close(g.wrt(x).unwrap()[0], 1.0, 1e-12));

        // central difference at 0 with eps = 1e-3
        let fd = ((1e-3f64).tanh() - (-1e-3f64).tanh()) / 2e-3;
        assert!(close(fd, 1.0, 1e-6));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(vec![3], vec![2.0, 2.0, 2.0]).unwrap();
        let p = t.softmax(x).unwrap();
        for &v in t.value(p) {
            assert!(close(v as f64, 1.0 / 3.0, 1e-7));
        }
        let x = t.constant(vec![2], vec![0.0, 3f32.ln()]).unwrap();
        let p = t.softmax(x).unwrap();
        assert!(close(t.value(p)[0] as f64, 0.25, 1e-6));
        assert!(close(t.value(p)[1] as f64, 0.75, 1e-6));

        let x = t.constant(vec![2], vec![f32::NAN, 0.0]);
        assert!(x.is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::<f32>::new();
        let p = t.constant(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        let l = t.cross_entropy(p, 1).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = t.cross_entropy(p, 0).unwrap();
        assert!(close(t.scalar(l) as f64, 27.631, 1e-3));
        let u = t.constant(vec![4], vec![0.25; 4]).unwrap();
        let l = t.cross_entropy(u, 2).unwrap();
        assert!(close(t.scalar(l) as f64, 4f64.ln(), 1e-6));
        assert_eq!(t.cross_entropy(u, 4), Err(NumericError::TargetOutOfRange { target: 4, size: 4 }));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.variable(vec![3], vec![1.0, -2.0, 5.0]).unwrap();
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

        let x = t.variable(vec![1], vec![3.0]).unwrap();
        let sq = t.mul(x, x).unwrap();
        let g = t.backward(sq).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn detached_and_non_scalar() {
        let mut a = Tape::<f32>::new();
        let mut b = Tape::<f32>::new();
        let x = a.variable(vec![2], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.sum(x), Err(NumericError::DetachedTensor));
        assert!(matches!(b.backward(x), Err(NumericError::DetachedTensor)));
        assert!(matches!(a.backward(x), Err(NumericError::NotScalar(_))));
    }

    #[test]
    fn nan_is_caught_at_producing_op() {
        let mut t = Tape::<f32>::new();
        let x = t.variable(vec![1], vec![1e30]).unwrap();
        let y = t.mul(x, x);
        assert_eq!(y, Err(NumericError::NonFinite { op: "mul" }));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut params = vec![Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap()];
        for _ in 0..2 {
            let mut t = Tape::new();
            let v = t.params(&params);
            let s = t.sum(v[0]).unwrap();
            t.backward_into(s, &mut params).unwrap();
        }
        assert_eq!(params[0].grad(), &[2.0, 2.0]);
        params.zero_grads();
        assert_eq!(params[0].grad(), &[0.0, 0.0]);
    }
}
