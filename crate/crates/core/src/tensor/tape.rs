use std::sync::Arc;

use super::{permute_data, split_axis, Tensor, MAX_RANK};
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Pad {
        x: Var,
        before: Vec<usize>,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    ScatterAdd {
        x: Var,
        index: Arc<[usize]>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children. Only nodes reachable from a leaf carry gradients; constants
/// and anything computed purely from constants are skipped by
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `∂loss/∂node` for every node that requires a gradient.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn ensure_same(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()))
    }
}

fn check_axis(t: &Tensor, axis: usize, op: &str) -> Result<()> {
    if axis < t.rank() {
        Ok(())
    } else {
        Err(shape_err!("{op}: axis {axis} out of range for shape {:?}", t.shape()))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
fn matmul_grad_lhs(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k`, `g` is `m×n`.
fn matmul_grad_rhs(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `(batch, m, k, n)` for a (possibly batched) matmul.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => Ok((*ba, *m, *k, *n)),
        _ => Err(shape_err!("matmul: incompatible shapes {a:?} and {b:?}")),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// `a · b` for `[m,k]·[k,n]` or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            matmul_acc(
                &ad[bi * m * k..(bi + 1) * m * k],
                &bd[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape: Vec<usize> = if self.value(a).rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        ensure_same(self.value(a), self.value(b), name)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[n]` vector along the trailing axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| shape_err!("add_bias on a scalar"))?;
        if self.shape(bias) != [n] {
            return Err(shape_err!("add_bias: bias {:?} does not match trailing axis {n}", self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(&shape, data)?, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.value(x).data().iter().map(|v| v * factor).collect(),
        };
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(self.value(x), axis, "softmax")?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes over the trailing axis, then applies `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().ok_or_else(|| shape_err!("layer_norm on a scalar"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err!(
                "layer_norm: affine params {:?}/{:?} do not match trailing axis {n}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = src.len() / n;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.value(x).data().iter().map(|&v| gelu(v)).collect(),
        };
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.value(x).data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.value(x).rank();
        let mut seen = [false; MAX_RANK];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!("permute: {perm:?} is not a permutation of {rank} axes"));
        }
        let (data, shape) = permute_data(self.value(x).data(), self.shape(x), perm);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(shape_err!("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        check_axis(self.value(x), axis, "slice")?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        if start > end || end > len {
            return Err(shape_err!("slice: range {start}..{end} out of bounds for axis of length {len}"));
        }
        let src = self.value(x).data();
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = width;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        check_axis(self.value(first), axis, "concat")?;
        let base_shape = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter().zip(&base_shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!("concat: {s:?} incompatible with {base_shape:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Zero padding: `before[i]` / `after[i]` entries on each side of axis `i`.
    pub fn pad(&mut self, x: Var, before: &[usize], after: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        if before.len() != in_shape.len() || after.len() != in_shape.len() {
            return Err(shape_err!("pad: expected {} per-axis widths", in_shape.len()));
        }
        let out_shape: Vec<usize> = in_shape.iter().zip(before).zip(after).map(|((s, b), a)| s + b + a).collect();
        let map = pad_index_map(&in_shape, &out_shape, before);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (i, &v) in self.value(x).data().iter().enumerate() {
            out[map[i]] = v;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Pad {
                x,
                before: before.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i] = x[index[i]]` over the flattened data, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err!("gather: index {bad} out of range for {} values", src.len()));
        }
        let data: Vec<f64> = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Gather { x, index }, rg))
    }

    /// `out[index[i]] += x[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if index.len() != src.len() {
            return Err(shape_err!("scatter_add: {} indices for {} values", index.len(), src.len()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err!("scatter_add: index {bad} out of range for {n} values"));
        }
        let mut out = vec![0.0; n];
        for (&i, &v) in index.iter().zip(src) {
            out[i] += v;
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ScatterAdd { x, index }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let m = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Sums out `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(self.value(x), axis, "sum_axis")?;
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = o * len * inner + j * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SumAxis { x, axis }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (batch, m, k, n) = matmul_dims(self.shape(*a), self.shape(*b)).expect("checked on record");
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for bi in 0..batch {
                        matmul_grad_lhs(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..batch {
                        matmul_grad_rhs(
                            &ad[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * av;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                self.accumulate(grads, *bias, |gb| {
                    let n = gb.len();
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                });
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * factor));
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let n = gam.len();
                let rows = xhat.len() / n;
                self.accumulate(grads, *x, |gx| {
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gam[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            let d = gr[j] * gam[j];
                            gx[r * n + j] += rstd[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (i, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[i % n] += gv * h;
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % n] += gv;
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gv * gelu_grad(xv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inverse);
                self.accumulate(grads, *x, |gx| gx.iter_mut().zip(&back).for_each(|(o, &v)| *o += v));
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let width = node.value.shape()[*axis];
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = o * len * inner + start * inner;
                        let src = o * width * inner;
                        for i in 0..width * inner {
                            gx[dst + i] += g[src + i];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    self.accumulate(grads, p, |gp| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            for i in 0..len * inner {
                                gp[o * len * inner + i] += g[src + i];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Pad { x, before } => {
                let map = pad_index_map(self.shape(*x), node.value.shape(), before);
                self.accumulate(grads, *x, |gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += g[map[i]];
                    }
                });
            }
            Op::Gather { x, index } => {
                self.accumulate(grads, *x, |gx| {
                    for (&i, &gv) in index.iter().zip(g) {
                        gx[i] += gv;
                    }
                });
            }
            Op::ScatterAdd { x, index } => {
                self.accumulate(grads, *x, |gx| {
                    for (o, &i) in gx.iter_mut().zip(index.iter()) {
                        *o += g[i];
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for j in 0..len {
                            let base = o * len * inner + j * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
        }
    }

    /// Name of the op that produced `v`.
    pub fn describe(&self, v: Var) -> &'static str {
        match self.node(v).op {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Pad { .. } => "pad",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis { .. } => "sum_axis",
        }
    }
}

/// Flat output position of every input element of a zero-pad.
fn pad_index_map(in_shape: &[usize], out_shape: &[usize], before: &[usize]) -> Vec<usize> {
    let out_strides = super::strides(out_shape);
    let n: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; in_shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(before).zip(&out_strides).map(|((i, b), s)| (i + b) * s).sum());
        for axis in (0..idx.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < in_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    map
}
