//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards is a valid
//! reverse topological order.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{Rng, RngExt};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_shared: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    MaskedFill {
        a: Var,
        mask: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn suffix_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
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

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Variable, true)
    }

    /// Copies a parameter onto the tape. Its gradient is accumulated back
    /// into the store by [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || Error::shape("matmul", format!("{sa:?} x {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(bad());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(bad());
        }
        let lead = &sa[..sa.len() - 2];
        let b_shared = sb.len() == 2;
        if !b_shared && sb[..sb.len() - 2] != *lead {
            return Err(bad());
        }
        let batch: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let b_off = if b_shared { 0 } else { bi * k * n };
            gemm_nn(
                &da[bi * m * k..(bi + 1) * m * k],
                &db[b_off..b_off + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_shared,
            },
            needs,
        ))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !suffix_broadcast(ta.shape(), tb.shape()) {
            return Err(Error::shape(
                op,
                format!("{:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let nb = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % nb]))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok((value, self.needs(a) || self.needs(b)))
    }

    /// Elementwise `a + b`; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, needs) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Elementwise `a ⊙ b`; `b` may match a trailing suffix of `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, needs) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i] * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i].max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.data().to_vec();
        softmax_rows(&mut out, t.last_dim());
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Layer normalization over the last axis with learned `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "{:?} with gain {:?}, bias {:?}",
                    tx.shape(),
                    tg.shape(),
                    tb.shape()
                ),
            ));
        }
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Gathers rows of a `[vocab, dim]` table; output is `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", t.shape())));
        }
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for table {:?}", t.shape()),
            ));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.is_empty() || s[..s.len() - 1] != *lead {
                let shapes: Vec<_> = inputs.iter().map(|&v| self.shape(v).to_vec()).collect();
                return Err(Error::shape("concat", format!("{shapes:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec()), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", t.shape()),
            ));
        }
        let value = t.clone().reshaped(shape.to_vec());
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rank = t.shape().len();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm
                .iter()
                .all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape(
                "permute",
                format!("{:?} by {perm:?}", t.shape()),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let mut out = vec![0.0; t.len()];
        permute_copy(t.data(), t.shape(), perm, &mut out, |dst, src| *dst = src);
        let needs = self.needs(a);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::shape(
                "masked_fill",
                format!("{:?} with mask of {}", t.shape(), mask.len()),
            ));
        }
        let value = Tensor::from_fn(t.shape(), |i| if mask[i] { fill } else { t.data()[i] });
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::MaskedFill {
                a,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// survivors by `1/(1-p)`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.shape(a).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Mean cross-entropy of softmax(logits) against `targets`, one target per
    /// row of the last axis. Rows whose target equals `ignore` contribute to
    /// neither the sum nor the count; if every row is ignored the loss is 0.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var> {
        let t = self.value(logits);
        let v = t.last_dim();
        let rows = t.len() / v.max(1);
        if rows != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} targets", t.shape(), targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v && Some(y) != ignore) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {bad} out of range for {v} classes"),
            ));
        }
        let mut probs = t.data().to_vec();
        softmax_rows(&mut probs, v);
        let mut total = 0.0;
        let mut count = 0;
        for (r, &y) in targets.iter().enumerate() {
            if Some(y) == ignore {
                continue;
            }
            let row = &t.data()[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            count += 1;
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Gradient(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>]| -> Option<usize> {
            if self.needs(v) {
                if grads[v.0].is_none() {
                    grads[v.0] = Some(vec![0.0; self.value(v).len()]);
                }
                Some(v.0)
            } else {
                None
            }
        };
        macro_rules! slot {
            ($v:expr) => {
                acc($v, grads).map(|i| grads[i].as_mut().unwrap())
            };
        }

        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_shared,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = slot!(*a) {
                    for bi in 0..*batch {
                        let b_off = if *b_shared { 0 } else { bi * k * n };
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb[b_off..b_off + k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for bi in 0..*batch {
                        let b_off = if *b_shared { 0 } else { bi * k * n };
                        gemm_tn(
                            &va[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[b_off..b_off + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = slot!(*b) {
                    let nb = gb.len();
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let nb = vb.len();
                if let Some(ga) = slot!(*a) {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * vb[i % nb];
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y * va[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * c);
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                if let Some(ga) = slot!(*a) {
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                if let Some(ga) = slot!(*a) {
                    for r in 0..y.len() / d {
                        let (ys, gs) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            ga[r * d + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let rows = xhat.len() / d;
                let gv = self.value(*gain).data().to_vec();
                if let Some(gg) = slot!(*gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gbias) = slot!(*bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            gbias[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = slot!(*x) {
                    let df = d as f64;
                    for r in 0..rows {
                        let o = r * d;
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[o + j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[o + j];
                        }
                        for j in 0..d {
                            let dh = g[o + j] * gv[j];
                            gx[o + j] +=
                                inv_std[r] / df * (df * dh - sum_dh - xhat[o + j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = node.value.last_dim();
                if let Some(gt) = slot!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            gt[id * dim + j] += g[r * dim + j];
                        }
                    }
                }
            }
            Op::Concat(inputs) => {
                let total = node.value.last_dim();
                let rows = node.value.len() / total;
                let mut offset = 0;
                for &v in inputs {
                    let w = self.value(v).last_dim();
                    if let Some(gv) = slot!(v) {
                        for r in 0..rows {
                            for j in 0..w {
                                gv[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Permute { a, perm } => {
                let in_shape = self.value(*a).shape().to_vec();
                if let Some(ga) = slot!(*a) {
                    // Inverse mapping: walk the output in order and scatter back.
                    permute_scatter(g, &in_shape, perm, ga);
                }
            }
            Op::MaskedFill { a, mask } => {
                if let Some(ga) = slot!(*a) {
                    for i in 0..g.len() {
                        if !mask[i] {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot!(*a) {
                    let s = g[0] / ga.len().max(1) as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).last_dim();
                let s = g[0] / *count as f64;
                if let Some(gl) = slot!(*logits) {
                    for (r, &y) in targets.iter().enumerate() {
                        if Some(y) == *ignore {
                            continue;
                        }
                        for j in 0..v {
                            gl[r * v + j] += s * probs[r * v + j];
                        }
                        gl[r * v + y] -= s;
                    }
                }
            }
        }
    }
}

/// In-place softmax over consecutive rows of width `d`.
pub(crate) fn softmax_rows(data: &mut [f64], d: usize) {
    for row in data.chunks_mut(d.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
}

/// Visits input offsets in output order for `perm`.
fn for_each_permuted(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(dst, src);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            src += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
}

fn permute_copy(
    input: &[f64],
    shape: &[usize],
    perm: &[usize],
    out: &mut [f64],
    mut assign: impl FnMut(&mut f64, f64),
) {
    for_each_permuted(shape, perm, |dst, src| assign(&mut out[dst], input[src]));
}

fn permute_scatter(grad_out: &[f64], in_shape: &[usize], perm: &[usize], grad_in: &mut [f64]) {
    for_each_permuted(in_shape, perm, |dst, src| grad_in[src] += grad_out[dst]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a_data: Vec<f64> = (0..9).map(|i| i as f64 * 1.5 - 4.0).collect();
        let a = g.constant(t(&[3, 3], &a_data));
        let p = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(p).data(), a_data.as_slice());
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[0.7; 4]));
        let gain = g.constant(t(&[4], &[1.0; 4]));
        let bias = g.constant(t(&[4], &[0.0; 4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[1.0, -2.0, 5.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Gradient(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.insert("w", t(&[2], &[1.0, 3.0])).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let s = g.sum(w);
        store.backward(&g, s).unwrap();
        store.backward(&g, s).unwrap();
        assert_eq!(store.grad(id).unwrap().data(), &[2.0, 2.0]);
        store.zero_grad();
        assert!(store.grad(id).is_none());
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[0., 1., 2., 3., 4., 5.]));
        let y = g.permute(x, &[1, 0]).unwrap();
        assert_eq!(g.shape(y), &[3, 2]);
        assert_eq!(g.value(y).data(), &[0., 3., 1., 4., 2., 5.]);
        assert!(g.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn cross_entropy_ignores_rows() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2, 3], &[0.0; 6]));
        let loss = g.cross_entropy(x, &[0, 0], Some(0)).unwrap();
        assert_eq!(g.value(loss).item().unwrap(), 0.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).map_or(true, |gx| gx.iter().all(|&v| v == 0.0)));
        let loss = g.cross_entropy(x, &[1, 2], Some(0)).unwrap();
        assert!((g.value(loss).item().unwrap() - 3f64.ln()).abs() < 1e-12);
    }
}
