//! Reverse-mode gradient tape.
//!
//! Every op evaluates eagerly and appends one node; `backward` walks the nodes
//! in reverse creation order, so each recorded op is visited exactly once.

use std::collections::BTreeMap;

use super::array::NumArray;
use super::kernels;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Normalize { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Gelu(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Mse(Var, Var),
    Sum(Var),
}

struct Node {
    value: NumArray,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; exactly zero when `v` did not reach the output.
    pub fn wrt(&self, v: Var) -> NumArray {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => NumArray::from_parts(shape, g.clone()),
            None => {
                let n = shape.iter().product();
                NumArray::from_parts(shape, vec![0.0; n])
            }
        }
    }

    /// Gradients of every registered parameter, keyed by path.
    pub fn params(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.params {
            out.insert(name.clone(), self.wrt(v));
        }
        out
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

    pub fn value(&self, v: Var) -> &NumArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: NumArray, op: Op, needs_grad: bool) -> Var {
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

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a named trainable parameter; repeated names return the same handle.
    pub fn param(&mut self, name: &str, value: &NumArray) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Registers every entry of `params`, returning name → handle.
    pub fn params_from(&mut self, params: &ParamSet) -> BTreeMap<String, Var> {
        params
            .iter()
            .map(|(name, value)| (name.clone(), self.param(name, value)))
            .collect()
    }

    /// A differentiable input that is not a parameter.
    pub fn input(&mut self, value: NumArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: NumArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::dims(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.mat(a, "matmul")?;
        let (k2, m) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(Error::dims("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(NumArray::from_parts(vec![n, m], out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.mat(a, "matmul_nt")?;
        let (m, k2) = self.mat(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dims("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(NumArray::from_parts(vec![n, m], out), Op::MatMulNt(a, b), ng))
    }

    fn row_operand(&self, x: Var, r: Var, op: &'static str) -> Result<usize> {
        let (_, d) = self.mat(x, op)?;
        let rs = self.shape(r);
        let ok = match rs {
            [n] => *n == d,
            [1, n] => *n == d,
            _ => false,
        };
        if !ok {
            return Err(Error::dims(op, self.shape(x), rs));
        }
        Ok(d)
    }

    /// `x[n,d] + b[d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.row_operand(x, b, "add_row")?;
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            row.iter_mut().zip(&bv).for_each(|(o, b)| *o += b);
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddRow(x, b), ng))
    }

    /// `x[n,d] ⊙ g[d]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let d = self.row_operand(x, g, "mul_row")?;
        let gv = self.value(g).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            row.iter_mut().zip(&gv).for_each(|(o, g)| *o *= g);
        }
        let ng = self.ng(x) || self.ng(g);
        Ok(self.push(out, Op::MulRow(x, g), ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.nodes[b.0].value.data())
            .for_each(|(o, v)| *o += v);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.nodes[b.0].value.data())
            .for_each(|(o, v)| *o -= v);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// Per-row standardization without affine parameters.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.mat(x, "normalize")?;
        if d == 0 || n == 0 {
            return Err(Error::EmptyInput("layer_norm over zero-width rows".into()));
        }
        let mut out = vec![0.0; n * d];
        let inv_std = kernels::normalize_rows(self.value(x).data(), &mut out, d, eps);
        let ng = self.ng(x);
        Ok(self.push(NumArray::from_parts(vec![n, d], out), Op::Normalize { x, inv_std }, ng))
    }

    /// `scale ⊙ (x − μ)/√(σ² + eps) + shift`, row-wise.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let h = self.normalize(x, eps)?;
        let s = self.mul_row(h, scale)?;
        self.add_row(s, shift)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.mat(x, "softmax_rows")?;
        let mut out = vec![0.0; n * m];
        kernels::softmax_rows(self.value(x).data(), &mut out, m);
        let ng = self.ng(x);
        Ok(self.push(NumArray::from_parts(vec![n, m], out), Op::Softmax(x), ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (_, c) = self.mat(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::dims("slice_cols", self.shape(x), &[start, end]));
        }
        let out = self.value(x).slice_cols(start, end);
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::EmptyInput("concat_cols of nothing".into()))?;
        let (n, _) = self.mat(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat(p, "concat_cols")?;
            if r != n {
                return Err(Error::dims("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            NumArray::from_parts(vec![n, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::EmptyInput("concat_rows of nothing".into()))?;
        let (_, d) = self.mat(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.mat(p, "concat_rows")?;
            if c != d {
                return Err(Error::dims("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * d);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            NumArray::from_parts(vec![rows, d], out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Mean of squared differences over all coordinates, as a `[1]` array.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let v = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(NumArray::scalar(v), Op::Mse(pred, target), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        let ng = self.ng(x);
        self.push(NumArray::scalar(v), Op::Sum(x), ng)
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::dims("backward", self.shape(output), &[1]));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, k) = dims(self.value(a));
                let m = self.value(b).cols();
                if let Some(ga) = slot(&self.nodes, grads, a) {
                    // dA = G · Bᵀ
                    kernels::matmul_nt_acc(g, self.value(b).data(), ga, n, m, k);
                }
                if let Some(gb) = slot(&self.nodes, grads, b) {
                    // dB = Aᵀ · G
                    kernels::matmul_tn_acc(self.value(a).data(), g, gb, n, k, m);
                }
            }
            &Op::MatMulNt(a, b) => {
                let (n, k) = dims(self.value(a));
                let m = self.value(b).rows();
                if let Some(ga) = slot(&self.nodes, grads, a) {
                    // dA = G · B
                    kernels::matmul_acc(g, self.value(b).data(), ga, n, m, k);
                }
                if let Some(gb) = slot(&self.nodes, grads, b) {
                    // dB = Gᵀ · A
                    kernels::matmul_tn_acc(g, self.value(a).data(), gb, n, m, k);
                }
            }
            &Op::AddRow(x, b) => {
                let d = self.value(x).cols();
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = slot(&self.nodes, grads, b) {
                    for row in g.chunks_exact(d) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            &Op::MulRow(x, s) => {
                let d = self.value(x).cols();
                let sv = self.value(s).data();
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    for (grow, orow) in g.chunks_exact(d).zip(gx.chunks_exact_mut(d)) {
                        for ((o, gv), sv) in orow.iter_mut().zip(grow).zip(sv) {
                            *o += gv * sv;
                        }
                    }
                }
                let xv = self.value(x).data();
                if let Some(gs) = slot(&self.nodes, grads, s) {
                    for (grow, xrow) in g.chunks_exact(d).zip(xv.chunks_exact(d)) {
                        for ((o, gv), xv) in gs.iter_mut().zip(grow).zip(xrow) {
                            *o += gv * xv;
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = slot(&self.nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = slot(&self.nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = slot(&self.nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = slot(&self.nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            &Op::Scale(a, c) => {
                if let Some(ga) = slot(&self.nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
                }
            }
            Op::Normalize { x, inv_std } => {
                let d = node.value.cols();
                if let Some(gx) = slot(&self.nodes, grads, *x) {
                    kernels::normalize_rows_backward(node.value.data(), inv_std, g, gx, d);
                }
            }
            &Op::Softmax(x) => {
                let m = node.value.cols();
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    kernels::softmax_rows_backward(node.value.data(), g, gx, m);
                }
            }
            &Op::Gelu(x) => {
                let xv = self.value(x).data();
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gv * kernels::gelu_grad(xv);
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let c = self.value(x).cols();
                let w = node.value.cols();
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    for (i, grow) in g.chunks_exact(w).enumerate() {
                        let dst = &mut gx[i * c + start..i * c + start + w];
                        dst.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = slot(&self.nodes, grads, p) {
                        for (i, orow) in gp.chunks_exact_mut(w).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            orow.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = slot(&self.nodes, grads, p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(o, v)| *o += v);
                    }
                    offset += len;
                }
            }
            &Op::Mse(p, t) => {
                let pv = self.value(p).data();
                let tv = self.value(t).data();
                let c = 2.0 * g[0] / pv.len() as f64;
                if let Some(gp) = slot(&self.nodes, grads, p) {
                    for ((o, a), b) in gp.iter_mut().zip(pv).zip(tv) {
                        *o += c * (a - b);
                    }
                }
                if let Some(gt) = slot(&self.nodes, grads, t) {
                    for ((o, a), b) in gt.iter_mut().zip(pv).zip(tv) {
                        *o -= c * (a - b);
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = slot(&self.nodes, grads, x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn dims(a: &NumArray) -> (usize, usize) {
    (a.rows(), a.cols())
}
