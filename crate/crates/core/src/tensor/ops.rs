use std::sync::Arc;

use rand::Rng;

use super::array::split_axis;
use super::kernels;
use super::tape::{grad_slot, Node};
use super::{Array, Tape, TensorError, Var};

const GELU_COEF: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// User-defined operation with a hand-written backward rule.
pub trait CustomOp: Send {
    fn name(&self) -> &str;

    /// Gradient with respect to each input, in input order, given the
    /// upstream gradient of the output.
    fn backward(&self, inputs: &[&Array], output: &Array, grad: &Array) -> Vec<Array>;
}

/// How [`Tape::cross_entropy`] reduces per-position losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Mean { x: Var, axis: usize },
    Sum(Var),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Dropout { x: Var, mask: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Cosine { u: Var, v: Var, eps: f64 },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, scale: f64 },
    GraphConv { x: Var, adj: Arc<Array>, refine: Var },
    TemporalConv { x: Var, w: Var, stride: usize },
    RegionMean { x: Var, regions: Arc<Vec<Vec<usize>>> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    pub(crate) fn for_each_input(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Scale(x, _)
            | Op::Narrow { x, .. }
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Mean { x, .. }
            | Op::Sum(x)
            | Op::Relu(x)
            | Op::Gelu(x)
            | Op::Softmax { x, .. }
            | Op::Dropout { x, .. }
            | Op::RegionMean { x, .. } => f(*x),
            Op::Concat { parts, .. } => parts.iter().copied().for_each(f),
            Op::LayerNorm { x, gamma, beta, .. } => {
                f(*x);
                f(*gamma);
                f(*beta);
            }
            Op::Gather { table, .. } => f(*table),
            Op::Cosine { u, v, .. } => {
                f(*u);
                f(*v);
            }
            Op::CrossEntropy { logits, .. } => f(*logits),
            Op::GraphConv { x, refine, .. } => {
                f(*x);
                f(*refine);
            }
            Op::TemporalConv { x, w, .. } => {
                f(*x);
                f(*w);
            }
            Op::Custom { inputs, .. } => inputs.iter().copied().for_each(f),
        }
    }

    pub(crate) fn backward(
        &self,
        nodes: &[Node],
        out: &Array,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let val = |v: Var| nodes[v.index()].value.clone();
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    kernels::gemm(m, n, k, g, false, bv.data(), true, ga, 1.0);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    kernels::gemm(k, m, n, av.data(), true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                accumulate(nodes, grads, *a, g, 1.0);
                accumulate(nodes, grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                accumulate(nodes, grads, *a, g, 1.0);
                accumulate(nodes, grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((dst, gi), bi) in ga.iter_mut().zip(g).zip(bv.data()) {
                        *dst += gi * bi;
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    for ((dst, gi), ai) in gb.iter_mut().zip(g).zip(av.data()) {
                        *dst += gi * ai;
                    }
                }
            }
            Op::AddBias(x, b) => {
                accumulate(nodes, grads, *x, g, 1.0);
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        for (dst, gi) in gb.iter_mut().zip(row) {
                            *dst += gi;
                        }
                    }
                }
            }
            Op::Scale(x, c) => accumulate(nodes, grads, *x, g, *c),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let width = nodes[p.index()].value.shape()[*axis] * inner;
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + width];
                            for (dst, s) in gp[o * width..(o + 1) * width].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = val(*x);
                let (outer, dim, inner) = split_axis(xs.shape(), *axis);
                let len = out.shape()[*axis];
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst_off = (o * dim + start) * inner;
                        let src_off = o * len * inner;
                        for (dst, s) in gx[dst_off..dst_off + len * inner]
                            .iter_mut()
                            .zip(&g[src_off..src_off + len * inner])
                        {
                            *dst += s;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    // out is r×c, x is c×r
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => accumulate(nodes, grads, *x, g, 1.0),
            Op::Mean { x, axis } => {
                let xs = val(*x);
                let (outer, dim, inner) = split_axis(xs.shape(), *axis);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let inv = 1.0 / dim as f64;
                    for o in 0..outer {
                        for d in 0..dim {
                            for i in 0..inner {
                                gx[(o * dim + d) * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Relu(x) => {
                let xs = val(*x);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((dst, gi), xi) in gx.iter_mut().zip(g).zip(xs.data()) {
                        if *xi > 0.0 {
                            *dst += gi;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xs = val(*x);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((dst, gi), &xi) in gx.iter_mut().zip(g).zip(xs.data()) {
                        *dst += gi * gelu_derivative(xi);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = split_axis(out.shape(), *axis);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let y = out.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |d: usize| (o * dim + d) * inner + i;
                            let dot: f64 = (0..dim).map(|d| g[idx(d)] * y[idx(d)]).sum();
                            for d in 0..dim {
                                gx[idx(d)] += y[idx(d)] * (g[idx(d)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xs = val(*x);
                let gm = val(*gamma);
                let d = gm.len();
                let rows = xs.len() / d;
                let mut xhat = vec![0.0; xs.len()];
                let mut rstd = vec![0.0; rows];
                for r in 0..rows {
                    let row = &xs.data()[r * d..(r + 1) * d];
                    let (mean, var) = mean_var(row);
                    rstd[r] = 1.0 / (var + eps).sqrt();
                    for j in 0..d {
                        xhat[r * d + j] = (row[j] - mean) * rstd[r];
                    }
                }
                if let Some(gg) = grad_slot(nodes, grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let n = d as f64;
                    for r in 0..rows {
                        let mut sum_gy = 0.0;
                        let mut sum_gy_xhat = 0.0;
                        for j in 0..d {
                            let gy = g[r * d + j] * gm.data()[j];
                            sum_gy += gy;
                            sum_gy_xhat += gy * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let gy = g[r * d + j] * gm.data()[j];
                            gx[r * d + j] += rstd[r] / n
                                * (n * gy - sum_gy - xhat[r * d + j] * sum_gy_xhat);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((dst, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                        *dst += gi * m;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = nodes[table.index()].value.shape()[1];
                if let Some(gt) = grad_slot(nodes, grads, *table) {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[row * d + j];
                        }
                    }
                }
            }
            Op::Cosine { u, v, eps } => {
                let (us, vs) = (val(*u), val(*v));
                let parts = cosine_parts(us.data(), vs.data(), *eps);
                let go = g[0];
                if let Some(gu) = grad_slot(nodes, grads, *u) {
                    cosine_grad(gu, us.data(), vs.data(), &parts, parts.nu, go);
                }
                if let Some(gv) = grad_slot(nodes, grads, *v) {
                    cosine_grad(gv, vs.data(), us.data(), &parts, parts.nv, go);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                scale,
            } => {
                let ls = val(*logits);
                let v = ls.shape()[1];
                if let Some(gl) = grad_slot(nodes, grads, *logits) {
                    let coef = g[0] * scale;
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &ls.data()[r * v..(r + 1) * v];
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                        for j in 0..v {
                            let p = (row[j] - max).exp() / z;
                            let target = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += coef * (p - target);
                        }
                    }
                }
            }
            Op::GraphConv { x, adj, refine } => {
                let (xs, rs) = (val(*x), val(*refine));
                let (t, v, c) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let (gx, gr) =
                    kernels::graph_conv_backward(xs.data(), adj.data(), rs.data(), g, t, v, c);
                accumulate(nodes, grads, *x, &gx, 1.0);
                accumulate(nodes, grads, *refine, &gr, 1.0);
            }
            Op::TemporalConv { x, w, stride } => {
                let (xs, ws) = (val(*x), val(*w));
                let (t, v, cin) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let (k, cout) = (ws.shape()[0], ws.shape()[2]);
                let (gx, gw) = kernels::temporal_conv_backward(
                    xs.data(),
                    ws.data(),
                    g,
                    t,
                    v,
                    cin,
                    k,
                    cout,
                    *stride,
                );
                accumulate(nodes, grads, *x, &gx, 1.0);
                accumulate(nodes, grads, *w, &gw, 1.0);
            }
            Op::RegionMean { x, regions } => {
                let xs = val(*x);
                let (t, v, c) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let width = regions.len() * c;
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ti in 0..t {
                        for (r, members) in regions.iter().enumerate() {
                            let inv = 1.0 / members.len() as f64;
                            for &node in members {
                                for ch in 0..c {
                                    gx[(ti * v + node) * c + ch] +=
                                        g[ti * width + r * c + ch] * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let values: Vec<Arc<Array>> = inputs.iter().map(|&i| val(i)).collect();
                let refs: Vec<&Array> = values.iter().map(|a| a.as_ref()).collect();
                let upstream = Array::new(out.shape(), g.to_vec()).expect("grad shape");
                let input_grads = op.backward(&refs, out, &upstream);
                for (input, ig) in inputs.iter().zip(input_grads) {
                    accumulate(nodes, grads, *input, ig.data(), 1.0);
                }
            }
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], coef: f64) {
    if let Some(dst) = grad_slot(nodes, grads, v) {
        if coef == 1.0 {
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        } else {
            for (d, s) in dst.iter_mut().zip(g) {
                *d += coef * s;
            }
        }
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SCALE * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let th = (GELU_SCALE * (x + GELU_COEF * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_SCALE * (1.0 + 3.0 * GELU_COEF * x * x)
}

struct CosineParts {
    dot: f64,
    nu: f64,
    nv: f64,
    denom: f64,
    clamped: bool,
}

fn cosine_parts(u: &[f64], v: &[f64], eps: f64) -> CosineParts {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let raw = nu * nv;
    CosineParts {
        dot,
        nu,
        nv,
        denom: raw.max(eps),
        clamped: raw < eps,
    }
}

/// d sim / d self, where `own` is the differentiated argument.
fn cosine_grad(dst: &mut [f64], own: &[f64], other: &[f64], p: &CosineParts, own_norm: f64, go: f64) {
    let sim = p.dot / p.denom;
    for ((d, &o), &w) in dst.iter_mut().zip(own).zip(other) {
        let mut grad = w / p.denom;
        if !p.clamped {
            grad -= sim * o / (own_norm * own_norm);
        }
        *d += go * grad;
    }
}

fn scalar_like(len_one: bool) -> Result<(), TensorError> {
    if len_one {
        Ok(())
    } else {
        Err(TensorError::InvalidParameter("expected a scalar".into()))
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(), TensorError> {
    if axis < shape.len() {
        Ok(())
    } else {
        Err(TensorError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        })
    }
}

impl Tape {
    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        Ok(self.push(Array::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    fn zip_with(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, &av, &bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(Array::new(av.shape(), data)?, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`d` vector to every row of an `…×d` tensor.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let d = bv.len();
        if bv.ndim() != 1 || xv.shape().last() != Some(&d) {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        Ok(self.push(Array::new(xv.shape(), data)?, Op::AddBias(x, b)))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let values: Vec<Arc<Array>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| TensorError::InvalidParameter("concat of zero tensors".into()))?;
        check_axis("concat", first.shape(), axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for v in &values {
            let mut a = v.shape().to_vec();
            let mut b = first.shape().to_vec();
            if a.len() != b.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: b,
                    rhs: a,
                });
            }
            a[axis] = 0;
            b[axis] = 0;
            if a != b {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            shape[axis] += v.shape()[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let width = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * width..(o + 1) * width]);
            }
        }
        Ok(self.push(
            Array::new(&shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        check_axis("narrow", xv.shape(), axis)?;
        let (outer, dim, inner) = split_axis(xv.shape(), axis);
        if start + len > dim {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                bound: dim,
            });
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * dim + start) * inner;
            data.extend_from_slice(&xv.data()[off..off + len * inner]);
        }
        Ok(self.push(Array::new(&shape, data)?, Op::Narrow { x, axis, start }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(TensorError::InvalidParameter(format!(
                "transpose expects 2-D, got {:?}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv.data()[i * c + j];
            }
        }
        Ok(self.push(Array::new(&[c, r], data)?, Op::Transpose(x)))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let xv = (*self.value(x)).clone().reshaped(shape)?;
        Ok(self.push(xv, Op::Reshape(x)))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        check_axis("mean", xv.shape(), axis)?;
        let (outer, dim, inner) = split_axis(xv.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    data[o * inner + i] += xv.data()[(o * dim + d) * inner + i];
                }
            }
        }
        let inv = 1.0 / dim as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Array::new(&shape, data)?, Op::Mean { x, axis }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array::scalar(s), Op::Sum(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Softmax along `axis` with max subtraction. Entries equal to `-inf`
    /// receive zero weight.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        check_axis("softmax", xv.shape(), axis)?;
        let (outer, dim, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim).map(|d| src[idx(d)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for d in 0..dim {
                    let e = (src[idx(d)] - max).exp();
                    data[idx(d)] = e;
                    z += e;
                }
                for d in 0..dim {
                    data[idx(d)] /= z;
                }
            }
        }
        Ok(self.push(Array::new(xv.shape(), data)?, Op::Softmax { x, axis }))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = gv.len();
        if xv.shape().last() != Some(&d) || bv.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; xv.len()];
        for (dst, row) in data.chunks_mut(d).zip(xv.data().chunks(d)) {
            let (mean, var) = mean_var(row);
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                dst[j] = (row[j] - mean) * rstd * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push(
            Array::new(xv.shape(), data)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
        ))
    }

    /// Inverted dropout. Returns `x` untouched at inference or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidParameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        Ok(self.push(Array::new(xv.shape(), data)?, Op::Dropout { x, mask }))
    }

    /// Gathers rows of a `V×d` table.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(TensorError::InvalidParameter(format!(
                "embedding table must be 2-D, got {:?}",
                tv.shape()
            )));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        Ok(self.push(
            Array::new(&[ids.len(), d], data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Cosine similarity of two equally sized tensors, read as flat vectors.
    /// The norm product is clamped below by `eps`.
    pub fn cosine_similarity(&self, u: Var, v: Var, eps: f64) -> Result<Var, TensorError> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.len() != vv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_similarity",
                lhs: uv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let p = cosine_parts(uv.data(), vv.data(), eps);
        Ok(self.push(Array::scalar(p.dot / p.denom), Op::Cosine { u, v, eps }))
    }

    /// Cross-entropy of `L×V` logits against integer targets. Positions whose
    /// target equals `ignore_index` contribute neither value nor gradient.
    /// Returns the loss node and the number of counted positions.
    pub fn cross_entropy(
        &self,
        logits: Var,
        targets: &[usize],
        ignore_index: usize,
        reduction: Reduction,
    ) -> Result<(Var, usize), TensorError> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.shape()[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let v = lv.shape()[1];
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            if t >= v {
                return Err(TensorError::IndexOutOfRange { index: t, bound: v });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            total += z.ln() - (row[t] - max);
            count += 1;
        }
        let scale = match reduction {
            Reduction::Mean if count == 0 => return Err(TensorError::EmptyMean),
            Reduction::Mean => 1.0 / count as f64,
            Reduction::Sum => 1.0,
        };
        let out = self.push(
            Array::scalar(total * scale),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore: ignore_index,
                scale,
            },
        );
        Ok((out, count))
    }

    /// Mean cross-entropy over non-ignored positions.
    pub fn cross_entropy_logits(
        &self,
        logits: Var,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<Var, TensorError> {
        self.cross_entropy(logits, targets, ignore_index, Reduction::Mean)
            .map(|(v, _)| v)
    }

    /// Graph convolution of a `T×V×C` signal with a fixed `V×V` adjacency
    /// plus a learnable per-channel `C×V×V` refinement.
    pub fn graph_conv(&self, x: Var, adj: Arc<Array>, refine: Var) -> Result<Var, TensorError> {
        let (xv, rv) = (self.value(x), self.value(refine));
        if xv.ndim() != 3 {
            return Err(TensorError::InvalidParameter(format!(
                "graph_conv expects T×V×C input, got {:?}",
                xv.shape()
            )));
        }
        let (t, v, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if adj.shape() != [v, v] || rv.shape() != [c, v, v] {
            return Err(TensorError::ShapeMismatch {
                op: "graph_conv",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let out = kernels::graph_conv_forward(xv.data(), adj.data(), rv.data(), t, v, c);
        Ok(self.push(
            Array::new(xv.shape(), out)?,
            Op::GraphConv { x, adj, refine },
        ))
    }

    /// Temporal convolution of a `T×V×Cin` signal with an odd-width
    /// `K×Cin×Cout` kernel. Borders replicate the edge frames; output length
    /// is `ceil(T / stride)`.
    pub fn temporal_conv(&self, x: Var, w: Var, stride: usize) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 3 || wv.ndim() != 3 || xv.shape()[2] != wv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "temporal_conv",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        if stride == 0 || wv.shape()[0] % 2 == 0 || xv.shape()[0] == 0 {
            return Err(TensorError::InvalidParameter(
                "temporal_conv needs stride ≥ 1, an odd kernel and T ≥ 1".into(),
            ));
        }
        let (t, v, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (k, cout) = (wv.shape()[0], wv.shape()[2]);
        let out = kernels::temporal_conv_forward(xv.data(), wv.data(), t, v, cin, k, cout, stride);
        Ok(self.push(
            Array::new(&[t.div_ceil(stride), v, cout], out)?,
            Op::TemporalConv { x, w, stride },
        ))
    }

    /// Averages a `T×V×C` signal over each keypoint region and concatenates
    /// the region means into `T×(R·C)`.
    pub fn region_mean(&self, x: Var, regions: Arc<Vec<Vec<usize>>>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.ndim() != 3 {
            return Err(TensorError::InvalidParameter(format!(
                "region_mean expects T×V×C input, got {:?}",
                xv.shape()
            )));
        }
        let (t, v, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        for members in regions.iter() {
            if members.is_empty() {
                return Err(TensorError::InvalidParameter("empty region".into()));
            }
            if let Some(&bad) = members.iter().find(|&&m| m >= v) {
                return Err(TensorError::IndexOutOfRange { index: bad, bound: v });
            }
        }
        let width = regions.len() * c;
        let mut data = vec![0.0; t * width];
        for ti in 0..t {
            for (r, members) in regions.iter().enumerate() {
                let inv = 1.0 / members.len() as f64;
                for &node in members {
                    for ch in 0..c {
                        data[ti * width + r * c + ch] += xv.data()[(ti * v + node) * c + ch] * inv;
                    }
                }
            }
        }
        Ok(self.push(Array::new(&[t, width], data)?, Op::RegionMean { x, regions }))
    }

    /// Records an operation computed outside the tape together with its
    /// backward rule.
    pub fn custom(&self, inputs: &[Var], output: Array, op: Box<dyn CustomOp>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// `max(0, x)` for a scalar node.
    pub fn hinge(&self, x: Var) -> Result<Var, TensorError> {
        scalar_like(self.value(x).len() == 1)?;
        Ok(self.relu(x))
    }
}
