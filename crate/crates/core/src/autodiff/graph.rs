//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so every input id is smaller than
//! the id of its consumer and the backward pass is a plain reverse walk.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Embedding {
        table: Var,
        ids: Vec<usize>,
        batch: usize,
        len: usize,
        padding_idx: Option<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
    },
    Relu(Var),
    AvgPoolTime(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Bce {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over dense tensors.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Splits a shape into `(rows, cols)` for ops that act on the last axis.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after one or more backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Inserts a leaf; it takes part in differentiation iff the tensor
    /// requires grad.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Looks up rows of `table` (`[V, D]`) for a `[batch, len]` id matrix and
    /// returns a channels-first `[batch, D, len]` map. `padding_idx` rows read as
    /// zeros and receive no gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize], batch: usize, len: usize, padding_idx: Option<usize>) -> Result<Var> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 || ids.len() != batch * len || batch == 0 || len == 0 {
            return Err(shape_err("embedding", &tshape, &[batch, len]));
        }
        let (vocab, dim) = (tshape[0], tshape[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id, size: vocab });
        }
        let tab = self.data(table);
        let mut out = vec![0.0; batch * dim * len];
        for b in 0..batch {
            for t in 0..len {
                let id = ids[b * len + t];
                if Some(id) == padding_idx {
                    continue;
                }
                let row = &tab[id * dim..(id + 1) * dim];
                for (d, &v) in row.iter().enumerate() {
                    out[(b * dim + d) * len + t] = v;
                }
            }
        }
        let value = Tensor::new(vec![batch, dim, len], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                batch,
                len,
                padding_idx,
            },
            rg,
        ))
    }

    /// Valid (unpadded) dilated 1-D convolution. Output position `t` reads
    /// input positions `t, t + d, .., t + (f-1)d`, so the last output only sees
    /// the past when the caller has history-padded the input on the left.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || bs != [ws[0]] || dilation == 0 {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        let (batch, cin, lin) = (xs[0], xs[1], xs[2]);
        let (cout, f) = (ws[0], ws[2]);
        let span = dilation * (f - 1);
        if lin <= span {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        let lout = lin - span;
        let x = self.data(input);
        let w = self.data(weight);
        let bv = self.data(bias);
        let mut out = vec![0.0; batch * cout * lout];
        for b in 0..batch {
            for co in 0..cout {
                let o = &mut out[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                o.fill(bv[co]);
                for ci in 0..cin {
                    let xrow = &x[(b * cin + ci) * lin..(b * cin + ci + 1) * lin];
                    for k in 0..f {
                        let wv = w[(co * cin + ci) * f + k];
                        let xs = &xrow[k * dilation..k * dilation + lout];
                        for (ov, &xv) in o.iter_mut().zip(xs) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
        }
        check_finite("conv1d", &out)?;
        let value = Tensor::new(vec![batch, cout, lout], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Mean over the temporal axis of a `[batch, channels, len]` map.
    pub fn avg_pool_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err("avg_pool_time", &s, &[0, 0, 0]));
        }
        let (b, c, l) = (s[0], s[1], s[2]);
        let data: Vec<f64> = self
            .data(x)
            .chunks_exact(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        let value = Tensor::new(vec![b, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AvgPoolTime(x), rg))
    }

    /// Concatenates `[batch, c_i]` matrices along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let batch = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != batch {
                return Err(shape_err("concat_cols", self.shape(*first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[b * w..(b + 1) * w]);
            }
        }
        let value = Tensor::new(vec![batch, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks `[b_i, k]` matrices along the batch axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1..] != cols[..] {
                return Err(shape_err("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
            out.extend_from_slice(self.data(p));
        }
        let mut shape = vec![rows];
        shape.extend(cols);
        let value = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `y = x Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(bias) != [ws[0]] {
            return Err(shape_err("affine", &xs, &ws));
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
        let x = self.data(input);
        let w = self.data(weight);
        let bv = self.data(bias);
        let mut out = vec![0.0; batch * fout];
        for b in 0..batch {
            let xr = &x[b * fin..(b + 1) * fin];
            for o in 0..fout {
                let wr = &w[o * fin..(o + 1) * fin];
                out[b * fout + o] = bv[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        check_finite("affine", &out)?;
        let value = Tensor::new(vec![batch, fout], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Affine { input, weight, bias }, rg))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (_, cols) = rows_cols(&shape);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        check_finite("softmax", &out)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    fn binary(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * c).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Mean of squared differences over every entry.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mse", a, b)?;
        let n = self.data(a).len() as f64;
        let sum: f64 = self.data(a).iter().zip(self.data(b)).map(|(x, y)| (x - y) * (x - y)).sum();
        let loss = sum / n;
        check_finite("mse", &[loss])?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), rg))
    }

    /// Class-weighted negative log-likelihood of `softmax(logits)`, averaged
    /// over the batch. Uses a log-sum-exp so large logits do not overflow.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || weights.len() != s[1] {
            return Err(shape_err("cross_entropy", &s, &[targets.len(), weights.len()]));
        }
        let (batch, k) = (s[0], s[1]);
        if let Some(&label) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let z = self.data(logits);
        let mut total = 0.0;
        for (b, &y) in targets.iter().enumerate() {
            let row = &z[b * k..(b + 1) * k];
            total += weights[y] * (log_sum_exp(row) - row[y]);
        }
        let loss = total / batch as f64;
        check_finite("cross_entropy", &[loss])?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Class-weighted binary cross-entropy of `sigmoid(logits)` against 0/1
    /// targets, averaged over every (example, class) entry.
    pub fn bce(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] * s[1] != targets.len() || weights.len() != s[1] {
            return Err(shape_err("bce", &s, &[targets.len(), weights.len()]));
        }
        let k = s[1];
        let z = self.data(logits);
        let total: f64 = z
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&zv, &y))| weights[i % k] * (zv.max(0.0) - zv * y + (-zv.abs()).exp().ln_1p()))
            .sum();
        let loss = total / targets.len() as f64;
        check_finite("bce", &[loss])?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires grad.
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                check_finite("backward", &g)?;
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Embedding {
                table,
                ids,
                batch,
                len,
                padding_idx,
            } => {
                let dim = self.shape(*table)[1];
                acc(*table, grads, &mut |gt| {
                    for b in 0..*batch {
                        for t in 0..*len {
                            let id = ids[b * len + t];
                            if Some(id) == *padding_idx {
                                continue;
                            }
                            for d in 0..dim {
                                gt[id * dim + d] += g[(b * dim + d) * len + t];
                            }
                        }
                    }
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let xs = self.shape(*input);
                let (batch, cin, lin) = (xs[0], xs[1], xs[2]);
                let ws = self.shape(*weight);
                let (cout, f) = (ws[0], ws[2]);
                let lout = node.value.shape()[2];
                let x = self.data(*input);
                let w = self.data(*weight);
                let d = *dilation;
                acc(*input, grads, &mut |gx| {
                    for b in 0..batch {
                        for co in 0..cout {
                            let gr = &g[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            for ci in 0..cin {
                                let gxr = &mut gx[(b * cin + ci) * lin..(b * cin + ci + 1) * lin];
                                for k in 0..f {
                                    let wv = w[(co * cin + ci) * f + k];
                                    for (a, &gv) in gxr[k * d..k * d + lout].iter_mut().zip(gr) {
                                        *a += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*weight, grads, &mut |gw| {
                    for b in 0..batch {
                        for co in 0..cout {
                            let gr = &g[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                            for ci in 0..cin {
                                let xr = &x[(b * cin + ci) * lin..(b * cin + ci + 1) * lin];
                                for k in 0..f {
                                    let dot: f64 = xr[k * d..k * d + lout].iter().zip(gr).map(|(a, c)| a * c).sum();
                                    gw[(co * cin + ci) * f + k] += dot;
                                }
                            }
                        }
                    }
                });
                acc(*bias, grads, &mut |gb| {
                    for b in 0..batch {
                        for (co, gbv) in gb.iter_mut().enumerate() {
                            *gbv += g[(b * cout + co) * lout..(b * cout + co + 1) * lout].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.data(*x);
                acc(*x, grads, &mut |gx| {
                    for ((a, &gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::AvgPoolTime(x) => {
                let l = self.shape(*x)[2];
                acc(*x, grads, &mut |gx| {
                    for (row, &gv) in gx.chunks_exact_mut(l).zip(g) {
                        let share = gv / l as f64;
                        row.iter_mut().for_each(|a| *a += share);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let batch = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, grads, &mut |gp| {
                        for b in 0..batch {
                            let src = &g[b * total + offset..b * total + offset + w];
                            for (a, &gv) in gp[b * w..(b + 1) * w].iter_mut().zip(src) {
                                *a += gv;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    acc(p, grads, &mut |gp| {
                        for (a, &gv) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *a += gv;
                        }
                    });
                    offset += n;
                }
            }
            Op::Reshape(x) => acc(*x, grads, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(a, &gv)| *a += gv);
            }),
            Op::Affine { input, weight, bias } => {
                let xs = self.shape(*input);
                let (batch, fin) = (xs[0], xs[1]);
                let fout = self.shape(*weight)[0];
                let x = self.data(*input);
                let w = self.data(*weight);
                acc(*input, grads, &mut |gx| {
                    for b in 0..batch {
                        for o in 0..fout {
                            let gv = g[b * fout + o];
                            for (a, &wv) in gx[b * fin..(b + 1) * fin].iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                                *a += gv * wv;
                            }
                        }
                    }
                });
                acc(*weight, grads, &mut |gw| {
                    for b in 0..batch {
                        for o in 0..fout {
                            let gv = g[b * fout + o];
                            for (a, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(&x[b * fin..(b + 1) * fin]) {
                                *a += gv * xv;
                            }
                        }
                    }
                });
                acc(*bias, grads, &mut |gb| {
                    for b in 0..batch {
                        for (a, &gv) in gb.iter_mut().zip(&g[b * fout..(b + 1) * fout]) {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (_, cols) = rows_cols(node.value.shape());
                acc(*x, grads, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(g.chunks_exact(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((a, &yv), &gv) in gxr.iter_mut().zip(yr).zip(gr) {
                            *a += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, grads, &mut |gx| {
                    for ((a, &yv), &gv) in gx.iter_mut().zip(y).zip(g) {
                        *a += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.data(*a);
                let bv = self.data(*b);
                acc(*a, grads, &mut |ga| {
                    for ((s, &gv), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *s += gv * o;
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for ((s, &gv), &o) in gb.iter_mut().zip(g).zip(av) {
                        *s += gv * o;
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, grads, &mut |gv| {
                        gv.iter_mut().zip(g).for_each(|(s, &x)| *s += x);
                    });
                }
            }
            Op::Scale(x, c) => acc(*x, grads, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(s, &v)| *s += c * v);
            }),
            Op::Mse(a, b) => {
                let av = self.data(*a);
                let bv = self.data(*b);
                let coef = 2.0 * g[0] / av.len() as f64;
                acc(*a, grads, &mut |ga| {
                    for ((s, &x), &y) in ga.iter_mut().zip(av).zip(bv) {
                        *s += coef * (x - y);
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for ((s, &x), &y) in gb.iter_mut().zip(av).zip(bv) {
                        *s -= coef * (x - y);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let k = self.shape(*logits)[1];
                let z = self.data(*logits);
                let batch = targets.len() as f64;
                acc(*logits, grads, &mut |gz| {
                    for (b, &y) in targets.iter().enumerate() {
                        let row = &z[b * k..(b + 1) * k];
                        let lse = log_sum_exp(row);
                        let coef = g[0] * weights[y] / batch;
                        for (j, s) in gz[b * k..(b + 1) * k].iter_mut().enumerate() {
                            let p = (row[j] - lse).exp();
                            *s += coef * (p - if j == y { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::Bce {
                logits,
                targets,
                weights,
            } => {
                let k = self.shape(*logits)[1];
                let z = self.data(*logits);
                let n = targets.len() as f64;
                acc(*logits, grads, &mut |gz| {
                    for (i, s) in gz.iter_mut().enumerate() {
                        *s += g[0] * weights[i % k] / n * (sigmoid(z[i]) - targets[i]);
                    }
                });
            }
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.param(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[3], &[-1.0, 0.0, 2.0]);
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[0.0, 0.0]);
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn pooling_a_length_one_map_is_identity() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 3, 1], &[1.5, -2.0, 4.0]);
        let y = g.avg_pool_time(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3]);
        assert_eq!(g.value(y).data(), &[1.5, -2.0, 4.0]);
    }

    #[test]
    fn mse_against_zero_has_gradient_two_x() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1], &[3.0]);
        let zero = g.constant(Tensor::zeros(&[1]));
        let loss = g.mse(x, zero).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.value(loss).item(), 9.0);
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_leaf_sums_branch_gradients() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, -2.0]);
        let a = g.scale(x, 3.0);
        let b = g.mul(x, x).unwrap();
        let s = g.add(a, b).unwrap();
        let zero = g.constant(Tensor::zeros(&[2]));
        // mean((3x + x²)²) has a single path per branch through `s`
        let loss = g.mse(s, zero).unwrap();
        g.backward(loss).unwrap();
        let xs = [1.0f64, -2.0];
        let expected: Vec<f64> = xs.iter().map(|&v| (3.0 * v + v * v) * (3.0 + 2.0 * v)).collect();
        for (a, e) in g.grad(x).unwrap().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1], &[3.0]);
        let zero = g.constant(Tensor::zeros(&[1]));
        let loss = g.mse(x, zero).unwrap();
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        let b = leaf(&mut g, &[3], &[1.0, 2.0, 3.0]);
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn cross_entropy_rejects_label_out_of_range() {
        let mut g = Graph::new();
        let z = leaf(&mut g, &[1, 2], &[0.0, 0.0]);
        assert!(matches!(
            g.cross_entropy(z, &[2], &[1.0, 1.0]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_matches_negative_log_softmax() {
        let mut g = Graph::new();
        let z = leaf(&mut g, &[1, 3], &[2.0, -1.0, 0.5]);
        let p = g.softmax(z).unwrap();
        let expected = -g.value(p).data()[2].ln();
        let loss = g.cross_entropy(z, &[2], &[1.0; 3]).unwrap();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut g = Graph::new();
        let z = leaf(&mut g, &[1, 2], &[1000.0, -1000.0]);
        let loss = g.cross_entropy(z, &[1], &[1.0, 1.0]).unwrap();
        assert!((g.value(loss).item() - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn embedding_skips_padding_row_gradient() {
        let mut g = Graph::new();
        let table = leaf(&mut g, &[3, 2], &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let e = g.embedding(table, &[0, 2, 2], 1, 3, Some(0)).unwrap();
        assert_eq!(g.value(e).shape(), &[1, 2, 3]);
        assert_eq!(g.value(e).data(), &[0.0, 3.0, 3.0, 0.0, 4.0, 4.0]);
        let zero = g.constant(Tensor::zeros(&[1, 2, 3]));
        let loss = g.mse(e, zero).unwrap();
        g.backward(loss).unwrap();
        let gt = g.grad(table).unwrap();
        assert_eq!(&gt[0..2], &[0.0, 0.0]);
        assert_eq!(&gt[2..4], &[0.0, 0.0]);
        assert!((gt[4] - 2.0 * 3.0 * 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_rejects_unknown_id() {
        let mut g = Graph::new();
        let table = leaf(&mut g, &[2, 1], &[0.0, 1.0]);
        assert!(matches!(
            g.embedding(table, &[5], 1, 1, None),
            Err(Error::TokenOutOfRange { id: 5, size: 2 })
        ));
    }

    #[test]
    fn conv1d_identity_kernel_copies_latest_input() {
        // kernel [0, 0, 1] with dilation 1 picks x[t + 2]
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0, 5.0]);
        let y2 = g.conv1d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y2).data(), &[5.0]);
    }

    #[test]
    fn conv1d_rejects_too_short_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 2]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(g.conv1d(x, w, b, 1).is_err());
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 2], &[f64::NAN, 0.0]);
        assert!(matches!(g.softmax(x), Err(Error::NonFinite { .. })));
    }
}
