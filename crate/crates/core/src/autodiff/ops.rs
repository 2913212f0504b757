use std::rc::Rc;

use super::tensor::{numel, NodeRef, Result, Tensor};
use super::TensorError;

/// Elementwise unary functions with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
    Square,
    Reciprocal,
    /// `sin(√s)/√s` as a function of `s = θ²`.
    SincOfSquared,
    /// `(1 − cos√s)/s` as a function of `s = θ²`.
    VersineOfSquared,
    /// `cos(√s)` as a function of `s = θ²`.
    CosOfSquared,
}

/// Series threshold on `θ` for the Rodrigues coefficient values.
const SERIES_THETA: f64 = 1e-6;
/// Series threshold on `θ` for their derivatives, which lose precision earlier.
const SERIES_THETA_DERIV: f64 = 1e-1;

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Sqrt => x.sqrt(),
            Unary::Tanh => x.tanh(),
            Unary::Square => x * x,
            Unary::Reciprocal => 1.0 / x,
            Unary::SincOfSquared => {
                if x < SERIES_THETA * SERIES_THETA {
                    1.0 - x / 6.0 + x * x / 120.0
                } else {
                    let t = x.sqrt();
                    t.sin() / t
                }
            }
            Unary::VersineOfSquared => {
                if x < SERIES_THETA * SERIES_THETA {
                    0.5 - x / 24.0 + x * x / 720.0
                } else {
                    let h = (0.5 * x.sqrt()).sin();
                    2.0 * h * h / x
                }
            }
            Unary::CosOfSquared => {
                if x < SERIES_THETA * SERIES_THETA {
                    1.0 - x / 2.0 + x * x / 24.0
                } else {
                    x.sqrt().cos()
                }
            }
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Sqrt => 0.5 / y,
            Unary::Tanh => 1.0 - y * y,
            Unary::Square => 2.0 * x,
            Unary::Reciprocal => -y * y,
            Unary::SincOfSquared => {
                if x < SERIES_THETA_DERIV * SERIES_THETA_DERIV {
                    -1.0 / 6.0 + x / 60.0 - x * x / 1680.0 + x * x * x / 90720.0
                } else {
                    let t = x.sqrt();
                    (t * t.cos() - t.sin()) / (2.0 * t * x)
                }
            }
            Unary::VersineOfSquared => {
                if x < SERIES_THETA_DERIV * SERIES_THETA_DERIV {
                    -1.0 / 24.0 + x / 360.0 - x * x / 13440.0 + x * x * x / 907200.0
                } else {
                    let t = x.sqrt();
                    let h = (0.5 * t).sin();
                    (t * t.sin() - 4.0 * h * h) / (2.0 * x * x)
                }
            }
            Unary::CosOfSquared => -0.5 * Unary::SincOfSquared.apply(x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Sqrt => "sqrt",
            Unary::Tanh => "tanh",
            Unary::Square => "square",
            Unary::Reciprocal => "reciprocal",
            Unary::SincOfSquared => "sinc_sq",
            Unary::VersineOfSquared => "versine_sq",
            Unary::CosOfSquared => "cos_sq",
        }
    }
}

/// Operation with a hand-written vector-Jacobian product.
pub trait CustomOp {
    /// Gradients for every input given the output cotangent.
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul {
        a: Rc<Vec<f64>>,
        b: Rc<Vec<f64>>,
    },
    Scale(f64),
    Shift,
    Unary {
        f: Unary,
        x: Rc<Vec<f64>>,
        y: Rc<Vec<f64>>,
    },
    /// Pass-through where the mask is set, zero elsewhere (hinges, clamps).
    Gate(Vec<bool>),
    Select(Rc<Vec<bool>>),
    MatMul {
        a: Rc<Vec<f64>>,
        b: Rc<Vec<f64>>,
        dims: MatDims,
    },
    SumAll {
        n: usize,
    },
    SumAxis {
        outer: usize,
        len: usize,
        inner: usize,
    },
    Broadcast {
        map: Vec<usize>,
        in_len: usize,
    },
    Reshape,
    Permute {
        map: Vec<usize>,
    },
    Slice {
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        end: usize,
    },
    Concat {
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    IndexSelect {
        idx: Rc<Vec<usize>>,
        row: usize,
        rows_in: usize,
    },
    IndexAdd {
        idx: Rc<Vec<usize>>,
        row: usize,
    },
    NormLast {
        x: Rc<Vec<f64>>,
        y: Rc<Vec<f64>>,
        n: usize,
    },
    ClampNorm {
        x: Rc<Vec<f64>>,
        n: usize,
        max: f64,
    },
    NormalizeLast {
        x: Rc<Vec<f64>>,
        n: usize,
        eps: f64,
    },
    Custom(Box<dyn CustomOp>),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

impl Op {
    pub(crate) fn backward(&self, g: &[f64], _out_shape: &[usize], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        match self {
            Op::Leaf => vec![],
            Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
            Op::Sub => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.iter().map(|v| -v).collect())],
            Op::Mul { a, b } => vec![
                want(0).then(|| g.iter().zip(b.iter()).map(|(g, b)| g * b).collect()),
                want(1).then(|| g.iter().zip(a.iter()).map(|(g, a)| g * a).collect()),
            ],
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::Shift => vec![Some(g.to_vec())],
            Op::Unary { f, x, y } => vec![Some(g.iter().zip(x.iter().zip(y.iter())).map(|(g, (x, y))| g * f.derivative(*x, *y)).collect())],
            Op::Gate(mask) => vec![Some(g.iter().zip(mask).map(|(g, m)| if *m { *g } else { 0.0 }).collect())],
            Op::Select(mask) => vec![
                want(0).then(|| g.iter().zip(mask.iter()).map(|(g, m)| if *m { *g } else { 0.0 }).collect()),
                want(1).then(|| g.iter().zip(mask.iter()).map(|(g, m)| if *m { 0.0 } else { *g }).collect()),
            ],
            Op::MatMul { a, b, dims } => matmul_backward(a, b, *dims, g, want(0), want(1)),
            Op::SumAll { n } => vec![Some(vec![g[0]; *n])],
            Op::SumAxis { outer, len, inner } => {
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for l in 0..*len {
                        let dst = (o * len + l) * inner;
                        out[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(out)]
            }
            Op::Broadcast { map, in_len } => {
                let mut out = vec![0.0; *in_len];
                for (gi, src) in g.iter().zip(map) {
                    out[*src] += gi;
                }
                vec![Some(out)]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute { map } => {
                let mut out = vec![0.0; g.len()];
                for (gi, src) in g.iter().zip(map) {
                    out[*src] = *gi;
                }
                vec![Some(out)]
            }
            Op::Slice { outer, len, inner, start, end } => {
                let mut out = vec![0.0; outer * len * inner];
                let w = (end - start) * inner;
                for o in 0..*outer {
                    let dst = (o * len + start) * inner;
                    out[dst..dst + w].copy_from_slice(&g[o * w..(o + 1) * w]);
                }
                vec![Some(out)]
            }
            Op::Concat { outer, inner, lens } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                lens.iter()
                    .enumerate()
                    .map(|(i, len)| {
                        let res = want(i).then(|| {
                            let w = len * inner;
                            let mut out = Vec::with_capacity(outer * w);
                            for o in 0..*outer {
                                let src = (o * total + offset) * inner;
                                out.extend_from_slice(&g[src..src + w]);
                            }
                            out
                        });
                        offset += len;
                        res
                    })
                    .collect()
            }
            Op::IndexSelect { idx, row, rows_in } => {
                let mut out = vec![0.0; rows_in * row];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..*row {
                        out[i * row + c] += g[r * row + c];
                    }
                }
                vec![Some(out)]
            }
            Op::IndexAdd { idx, row } => {
                let mut out = Vec::with_capacity(idx.len() * row);
                for &i in idx.iter() {
                    out.extend_from_slice(&g[i * row..(i + 1) * row]);
                }
                vec![Some(out)]
            }
            Op::NormLast { x, y, n } => {
                let mut out = vec![0.0; x.len()];
                for (r, &norm) in y.iter().enumerate() {
                    if norm > 0.0 {
                        for c in 0..*n {
                            out[r * n + c] = g[r] * x[r * n + c] / norm;
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::ClampNorm { x, n, max } => {
                let mut out = g.to_vec();
                for r in 0..x.len() / n {
                    let row = &x[r * n..(r + 1) * n];
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > *max {
                        let gr = &g[r * n..(r + 1) * n];
                        let ug: f64 = row.iter().zip(gr).map(|(x, g)| x * g).sum::<f64>() / norm;
                        for c in 0..*n {
                            out[r * n + c] = max / norm * (gr[c] - row[c] / norm * ug);
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::NormalizeLast { x, n, eps } => {
                let mut out = vec![0.0; x.len()];
                for r in 0..x.len() / n {
                    let row = &x[r * n..(r + 1) * n];
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm >= *eps {
                        let gr = &g[r * n..(r + 1) * n];
                        let ug: f64 = row.iter().zip(gr).map(|(x, g)| x * g).sum::<f64>() / norm;
                        for c in 0..*n {
                            out[r * n + c] = (gr[c] - row[c] / norm * ug) / norm;
                        }
                    }
                }
                vec![Some(out)]
            }
            Op::Custom(op) => op.backward(g).into_iter().enumerate().map(|(i, v)| want(i).then_some(v)).collect(),
        }
    }
}

fn matmul_backward(a: &[f64], b: &[f64], d: MatDims, g: &[f64], need_a: bool, need_b: bool) -> Vec<Option<Vec<f64>>> {
    let MatDims { batch, a_batched, b_batched, m, k, n } = d;
    let mut ga = need_a.then(|| vec![0.0; if a_batched { batch } else { 1 } * m * k]);
    let mut gb = need_b.then(|| vec![0.0; if b_batched { batch } else { 1 } * k * n]);
    for bi in 0..batch {
        let ao = if a_batched { bi * m * k } else { 0 };
        let bo = if b_batched { bi * k * n } else { 0 };
        let go = bi * m * n;
        if let Some(ga) = ga.as_mut() {
            // dA = G · Bᵀ
            for i in 0..m {
                for p in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[go + i * n + j] * b[bo + p * n + j];
                    }
                    ga[ao + i * k + p] += s;
                }
            }
        }
        if let Some(gb) = gb.as_mut() {
            // dB = Aᵀ · G
            for p in 0..k {
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += a[ao + i * k + p] * g[go + i * n + j];
                    }
                    gb[bo + p * n + j] += s;
                }
            }
        }
    }
    vec![ga, gb]
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// Shared recording path: validates finiteness and attaches a tape node when
/// any input is tracked.
fn record(name: &'static str, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>, op: impl FnOnce() -> Op) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: name });
    }
    let mut tape = None;
    for t in inputs {
        if let Some(tt) = t.tape() {
            match &tape {
                None => tape = Some(tt.clone()),
                Some(existing) if !tt.same(existing) => return Err(TensorError::ForeignTape),
                _ => {}
            }
        }
    }
    let node = tape.map(|tape| {
        let parents = inputs.iter().map(|t| t.node_id()).collect();
        let id = tape.push(op(), parents, shape.clone());
        NodeRef { tape, id }
    });
    Ok(Tensor { shape, data: Rc::new(data), node })
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch { op, lhs: a.shape.clone(), rhs: b.shape.clone() });
    }
    Ok(())
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        record("add", &[self, other], self.shape.clone(), data, || Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        record("sub", &[self, other], self.shape.clone(), data, || Op::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).collect();
        record("mul", &[self, other], self.shape.clone(), data, || Op::Mul { a: Rc::clone(&self.data), b: Rc::clone(&other.data) })
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(&other.reciprocal()?)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * c).collect();
        record("scale", &[self], self.shape.clone(), data, || Op::Scale(c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v + c).collect();
        record("add_scalar", &[self], self.shape.clone(), data, || Op::Shift)
    }

    /// Adds an untracked constant array of the same shape.
    pub fn add_const(&self, c: &[f64]) -> Result<Tensor> {
        if c.len() != self.numel() {
            return Err(invalid("add_const", format!("expected {} values, got {}", self.numel(), c.len())));
        }
        let data = self.data.iter().zip(c).map(|(a, b)| a + b).collect();
        record("add_const", &[self], self.shape.clone(), data, || Op::Shift)
    }

    /// Multiplies by an untracked constant array of the same shape.
    pub fn mul_const(&self, c: &[f64]) -> Result<Tensor> {
        if c.len() != self.numel() {
            return Err(invalid("mul_const", format!("expected {} values, got {}", self.numel(), c.len())));
        }
        let k = Tensor { shape: self.shape.clone(), data: Rc::new(c.to_vec()), node: None };
        self.mul(&k)
    }

    pub fn unary(&self, f: Unary) -> Result<Tensor> {
        let y: Vec<f64> = self.data.iter().map(|&x| f.apply(x)).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: f.name() });
        }
        let y = Rc::new(y);
        let node_y = Rc::clone(&y);
        let mut out = record(f.name(), &[self], self.shape.clone(), vec![], || Op::Unary { f, x: Rc::clone(&self.data), y: node_y })?;
        out.data = y;
        Ok(out)
    }

    pub fn sin(&self) -> Result<Tensor> {
        self.unary(Unary::Sin)
    }
    pub fn cos(&self) -> Result<Tensor> {
        self.unary(Unary::Cos)
    }
    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Unary::Exp)
    }
    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Unary::Sqrt)
    }
    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(Unary::Tanh)
    }
    pub fn square(&self) -> Result<Tensor> {
        self.unary(Unary::Square)
    }
    pub fn reciprocal(&self) -> Result<Tensor> {
        self.unary(Unary::Reciprocal)
    }

    /// `max(x, floor)`; the boundary point passes gradient through.
    pub fn max_scalar(&self, floor: f64) -> Result<Tensor> {
        let mask: Vec<bool> = self.data.iter().map(|&x| x >= floor).collect();
        let data = self.data.iter().map(|&x| x.max(floor)).collect();
        record("max_scalar", &[self], self.shape.clone(), data, || Op::Gate(mask))
    }

    /// `max(x, 0)`.
    pub fn relu(&self) -> Result<Tensor> {
        self.max_scalar(0.0)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(invalid("clamp", format!("lo {lo} > hi {hi}")));
        }
        let mask: Vec<bool> = self.data.iter().map(|&x| x >= lo && x <= hi).collect();
        let data = self.data.iter().map(|&x| x.clamp(lo, hi)).collect();
        record("clamp", &[self], self.shape.clone(), data, || Op::Gate(mask))
    }

    /// Clamp with per-element bounds.
    pub fn clamp_each(&self, lo: &[f64], hi: &[f64]) -> Result<Tensor> {
        if lo.len() != self.numel() || hi.len() != self.numel() {
            return Err(invalid("clamp_each", "bound arrays must match the tensor size"));
        }
        let mut mask = Vec::with_capacity(self.numel());
        let mut data = Vec::with_capacity(self.numel());
        for ((&x, &l), &h) in self.data.iter().zip(lo).zip(hi) {
            if l > h {
                return Err(invalid("clamp_each", format!("lo {l} > hi {h}")));
            }
            mask.push(x >= l && x <= h);
            data.push(x.clamp(l, h));
        }
        record("clamp_each", &[self], self.shape.clone(), data, || Op::Gate(mask))
    }

    /// Elementwise `mask ? self : other`.
    pub fn select(mask: &[bool], a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("select", a, b)?;
        if mask.len() != a.numel() {
            return Err(invalid("select", "mask length must match the tensor size"));
        }
        let data = mask.iter().zip(a.data.iter().zip(b.data.iter())).map(|(m, (x, y))| if *m { *x } else { *y }).collect();
        let mask = Rc::new(mask.to_vec());
        record("select", &[a, b], a.shape.clone(), data, || Op::Select(mask))
    }

    /// Matrix product over the last two axes with optional batch axis.
    ///
    /// Accepts `[m,k]·[k,n]`, `[B,m,k]·[B,k,n]` and the two mixed forms where
    /// the rank-2 side is shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (&self.shape, &other.shape);
        let mismatch = || TensorError::ShapeMismatch { op: "matmul", lhs: a.clone(), rhs: b.clone() };
        if !(2..=3).contains(&a.len()) || !(2..=3).contains(&b.len()) {
            return Err(mismatch());
        }
        let (a_batched, b_batched) = (a.len() == 3, b.len() == 3);
        let batch = match (a_batched, b_batched) {
            (true, true) if a[0] == b[0] => a[0],
            (true, true) => return Err(mismatch()),
            (true, false) => a[0],
            (false, true) => b[0],
            (false, false) => 1,
        };
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if a_batched { bi * m * k } else { 0 };
            let bo = if b_batched { bi * k * n } else { 0 };
            for i in 0..m {
                for p in 0..k {
                    let av = self.data[ao + i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let row = &other.data[bo + p * n..bo + (p + 1) * n];
                    let dst = &mut out[bi * m * n + i * n..bi * m * n + (i + 1) * n];
                    for (d, bv) in dst.iter_mut().zip(row) {
                        *d += av * bv;
                    }
                }
            }
        }
        let shape = if a_batched || b_batched { vec![batch, m, n] } else { vec![m, n] };
        let dims = MatDims { batch, a_batched, b_batched, m, k, n };
        record("matmul", &[self, other], shape, out, || Op::MatMul { a: Rc::clone(&self.data), b: Rc::clone(&other.data), dims })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data.iter().sum();
        let n = self.numel();
        record("sum", &[self], vec![], vec![s], || Op::SumAll { n })
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / self.numel() as f64)
    }

    /// Sum of squares of all elements.
    pub fn sq_norm(&self) -> Result<Tensor> {
        self.square()?.sum()
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {:?}", self.shape)));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += self.data[src + i];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        record("sum_axis", &[self], shape, out, || Op::SumAxis { outer, len, inner })
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self.shape.get(axis).ok_or_else(|| invalid("mean_axis", "axis out of range"))?;
        if len == 0 {
            return Err(invalid("mean_axis", "empty axis"));
        }
        self.sum_axis(axis)?.scale(1.0 / len as f64)
    }

    /// Numpy-style broadcast to `shape` (trailing axes aligned).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let err = || TensorError::ShapeMismatch { op: "broadcast_to", lhs: self.shape.clone(), rhs: shape.to_vec() };
        if self.shape.len() > shape.len() {
            return Err(err());
        }
        let pad = shape.len() - self.shape.len();
        let in_strides = strides(&self.shape);
        let mut eff = vec![0usize; shape.len()];
        for (i, &dim) in self.shape.iter().enumerate() {
            if dim == shape[pad + i] {
                eff[pad + i] = in_strides[i];
            } else if dim != 1 {
                return Err(err());
            }
        }
        let total = numel(shape);
        let mut map = Vec::with_capacity(total);
        let mut counter = vec![0usize; shape.len()];
        let mut src = 0usize;
        for _ in 0..total {
            map.push(src);
            for ax in (0..shape.len()).rev() {
                counter[ax] += 1;
                src += eff[ax];
                if counter[ax] < shape[ax] {
                    break;
                }
                src -= eff[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        let data = map.iter().map(|&i| self.data[i]).collect();
        let in_len = self.numel();
        record("broadcast_to", &[self], shape.to_vec(), data, || Op::Broadcast { map, in_len })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape.to_vec() });
        }
        let mut out = record("reshape", &[self], shape.to_vec(), vec![], || Op::Reshape)?;
        out.data = Rc::clone(&self.data);
        Ok(out)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let in_strides = strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = self.numel();
        let mut map = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..total {
            map.push(src);
            for ax in (0..rank).rev() {
                counter[ax] += 1;
                src += eff[ax];
                if counter[ax] < shape[ax] {
                    break;
                }
                src -= eff[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        let data = map.iter().map(|&i| self.data[i]).collect();
        record("permute", &[self], shape, data, || Op::Permute { map })
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start > end || end > self.shape[axis] {
            return Err(invalid("slice", format!("{start}..{end} on axis {axis} of {:?}", self.shape)));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let w = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let src = (o * len + start) * inner;
            data.extend_from_slice(&self.data[src..src + w]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        record("slice", &[self], shape, data, || Op::Slice { outer, len, inner, start, end })
    }

    /// Single index along `axis`, removing that axis.
    pub fn select_index(&self, axis: usize, index: usize) -> Result<Tensor> {
        let s = self.slice(axis, index, index + 1)?;
        let mut shape = s.shape.clone();
        shape.remove(axis);
        s.reshape(&shape)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        if axis >= first.shape.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {:?}", first.shape)));
        }
        for p in parts {
            let ok =
                p.shape.len() == first.shape.len() && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: first.shape.clone(), rhs: p.shape.clone() });
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, len) in parts.iter().zip(&lens) {
                let w = len * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        record("concat", parts, shape, data, || Op::Concat { outer, inner, lens })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| invalid("stack", "no inputs"))?;
        let mut unit = vec![1];
        unit.extend_from_slice(&first.shape);
        let expanded = parts.iter().map(|p| p.reshape(&unit)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = expanded.iter().collect();
        Tensor::concat(&refs, 0)
    }

    /// Gathers rows (slices along axis 0).
    pub fn index_select(&self, idx: &[usize]) -> Result<Tensor> {
        let rows_in = *self.shape.first().ok_or_else(|| invalid("index_select", "scalar input"))?;
        if let Some(bad) = idx.iter().find(|&&i| i >= rows_in) {
            return Err(invalid("index_select", format!("row {bad} out of range {rows_in}")));
        }
        let row = numel(&self.shape[1..]);
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        let idx = Rc::new(idx.to_vec());
        record("index_select", &[self], shape, data, || Op::IndexSelect { idx, row, rows_in })
    }

    /// Scatter-add: row `r` of `self` is accumulated into output row `idx[r]`.
    pub fn index_add(&self, idx: &[usize], rows_out: usize) -> Result<Tensor> {
        let rows = *self.shape.first().ok_or_else(|| invalid("index_add", "scalar input"))?;
        if idx.len() != rows {
            return Err(invalid("index_add", format!("{} indices for {rows} rows", idx.len())));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= rows_out) {
            return Err(invalid("index_add", format!("row {bad} out of range {rows_out}")));
        }
        let row = numel(&self.shape[1..]);
        let mut data = vec![0.0; rows_out * row];
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..row {
                data[i * row + c] += self.data[r * row + c];
            }
        }
        let mut shape = self.shape.clone();
        shape[0] = rows_out;
        let idx = Rc::new(idx.to_vec());
        record("index_add", &[self], shape, data, || Op::IndexAdd { idx, row })
    }

    /// Euclidean norm over the last axis; the subgradient at zero is zero.
    pub fn norm_last(&self) -> Result<Tensor> {
        let n = *self.shape.last().ok_or_else(|| invalid("norm_last", "scalar input"))?;
        let y: Vec<f64> = self.data.chunks(n.max(1)).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let y = Rc::new(y);
        let node_y = Rc::clone(&y);
        let shape = self.shape[..self.shape.len() - 1].to_vec();
        let mut out = record("norm_last", &[self], shape, vec![], || Op::NormLast { x: Rc::clone(&self.data), y: node_y, n })?;
        out.data = y;
        Ok(out)
    }

    /// Rescales each last-axis row to length at most `max`.
    pub fn clamp_norm(&self, max: f64) -> Result<Tensor> {
        let n = *self.shape.last().ok_or_else(|| invalid("clamp_norm", "scalar input"))?;
        if max <= 0.0 {
            return Err(invalid("clamp_norm", "max must be positive"));
        }
        let mut data = self.to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > max {
                let f = max / norm;
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        record("clamp_norm", &[self], self.shape.clone(), data, || Op::ClampNorm { x: Rc::clone(&self.data), n, max })
    }

    /// Unit vectors along the last axis; rows shorter than `eps` map to zero.
    pub fn normalize_last(&self, eps: f64) -> Result<Tensor> {
        let n = *self.shape.last().ok_or_else(|| invalid("normalize_last", "scalar input"))?;
        let mut data = self.to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= eps {
                row.iter_mut().for_each(|v| *v /= norm);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        record("normalize_last", &[self], self.shape.clone(), data, || Op::NormalizeLast { x: Rc::clone(&self.data), n, eps })
    }

    /// Records an externally differentiated operation.
    pub fn custom(inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>, op: Box<dyn CustomOp>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(invalid("custom", "output data does not match shape"));
        }
        record("custom", inputs, shape, data, || Op::Custom(op))
    }
}
