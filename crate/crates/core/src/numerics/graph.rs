//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node appended after its inputs,
//! so node order is already a topological order. [`Graph::backward`] walks
//! it once in reverse. Ops are coarse (whole-batch matmul, fused masked
//! multi-head attention, fused layer norm, fused cross-entropy) so that the
//! tape stays short and the work lands in a few large GEMMs.

use crate::numerics::linalg::{gemm, GemmOperand};
use crate::numerics::Tensor;
use crate::{par, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-12;

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    seq: usize,
    heads: usize,
    scale: f64,
    /// `batch x heads x seq x seq` softmax probabilities.
    probs: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention(Box<AttentionCache>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the var does not influence the output or is not a leaf
    /// that requires grad.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that requires grad.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_requires_grad(true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::numerics::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).scale(alpha);
        self.push(out, Op::Scale(a, alpha), &[a])
    }

    /// `x + 1 bᵀ` for `x: n x c`, `b: c`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        let bias = self.value(b);
        if bias.numel() != c {
            return Err(Error::Dimension(format!(
                "bias of {} entries for {c} columns",
                bias.numel()
            )));
        }
        let mut out = self.value(x).clone().with_requires_grad(false);
        let bd = bias.data().to_vec();
        for r in 0..n {
            out.data_mut()[r * c..(r + 1) * c]
                .iter_mut()
                .zip(&bd)
                .for_each(|(o, b)| *o += b);
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    /// `x W + 1 bᵀ`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Row-wise layer norm with gain and bias of length `cols`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.value(x).dims2()?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::Dimension("layer norm gain/bias width".into()));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; n * c];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            let row = &xs[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(vec![n, c], out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Masked multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `(batch*seq) x d` with head `h` occupying columns
    /// `h*d/heads..(h+1)*d/heads`. Keys with `key_valid == false` receive
    /// exactly zero weight. Returns the `(batch*seq) x d` context.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        key_valid: &[bool],
    ) -> Result<Var> {
        let (rows, d) = self.value(q).dims2()?;
        if rows != batch * seq
            || self.value(k).shape() != self.value(q).shape()
            || self.value(v).shape() != self.value(q).shape()
        {
            return Err(Error::Dimension(format!(
                "attention inputs must be {}x{d}",
                batch * seq
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!(
                "{d} not divisible by {heads} heads"
            )));
        }
        if key_valid.len() != batch * seq {
            return Err(Error::Dimension("key mask length".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut ctx = vec![0.0; rows * d];
        let mut probs = vec![0.0; batch * heads * seq * seq];
        par::for_each_chunk_pair_mut(
            &mut ctx,
            seq * d,
            &mut probs,
            heads * seq * seq,
            |b, ctx_b, probs_b| {
                let base = b * seq * d;
                let valid = &key_valid[b * seq..(b + 1) * seq];
                for h in 0..heads {
                    let off = base + h * dh;
                    let p = &mut probs_b[h * seq * seq..(h + 1) * seq * seq];
                    gemm(
                        seq,
                        dh,
                        seq,
                        scale,
                        GemmOperand::rows(&qd[off..], d),
                        GemmOperand::transposed(&kd[off..], d),
                        0.0,
                        p,
                        seq,
                    );
                    for i in 0..seq {
                        masked_softmax(&mut p[i * seq..(i + 1) * seq], valid);
                    }
                    gemm(
                        seq,
                        seq,
                        dh,
                        1.0,
                        GemmOperand::rows(p, seq),
                        GemmOperand::rows(&vd[off..], d),
                        0.0,
                        &mut ctx_b[h * dh..],
                        d,
                    );
                }
            },
        );
        let out = Tensor::new(vec![rows, d], ctx)?;
        let cache = AttentionCache {
            q,
            k,
            v,
            batch,
            seq,
            heads,
            scale,
            probs,
        };
        Ok(self.push(out, Op::Attention(Box::new(cache)), &[q, k, v]))
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node, laid
    /// out `batch x heads x seq x seq`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.probs),
            _ => None,
        }
    }

    /// Rows `ids` of a 2-D table (embedding lookup, row selection).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, c) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::Dimension("gather of zero rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("row {bad} of a {n}-row table")));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(vec![ids.len(), c], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Inverted dropout with a caller-supplied keep mask; kept entries are
    /// scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.numel() {
            return Err(Error::Dimension("dropout mask size".into()));
        }
        let s = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: n x classes`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index(format!("target {bad} with {c} classes")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &ld[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[r]];
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean squared error of an `n x 1` prediction.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != targets.len() {
            return Err(Error::Dimension("mse target count".into()));
        }
        let loss = p
            .data()
            .iter()
            .zip(targets)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        ))
    }

    /// Gradients of a scalar `loss` with respect to every grad-requiring
    /// leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.value(loss).check_finite("loss")?;
        self.vjp(loss, Tensor::scalar(1.0))
    }

    /// Vector-Jacobian product: pulls `seed` (shaped like `output`) back to
    /// the grad-requiring leaves.
    pub fn vjp(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.numel() != self.value(output).numel() {
            return Err(Error::Dimension("vjp seed shape".into()));
        }
        let seed = seed.reshape(self.value(output).shape().to_vec())?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Mutable gradient buffer for `v`, zero-initialized on first touch.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                if self.needs(*a) {
                    let bd = self.value(*b).data();
                    let da = self.slot(grads, *a);
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        GemmOperand::rows(gd, n),
                        GemmOperand::transposed(bd, n),
                        1.0,
                        da.data_mut(),
                        k,
                    );
                }
                if self.needs(*b) {
                    let ad = self.value(*a).data();
                    let db = self.slot(grads, *b);
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        GemmOperand::transposed(ad, k),
                        GemmOperand::rows(gd, n),
                        1.0,
                        db.data_mut(),
                        n,
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        self.slot(grads, v).add_assign(g)?;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, x), y) in da.data_mut().iter_mut().zip(gd).zip(bv) {
                        *d += x * y;
                    }
                }
                if self.needs(*b) {
                    let db = self.slot(grads, *b);
                    for ((d, x), y) in db.data_mut().iter_mut().zip(gd).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, alpha) => {
                if self.needs(*a) {
                    let da = self.slot(grads, *a);
                    for (d, x) in da.data_mut().iter_mut().zip(gd) {
                        *d += alpha * x;
                    }
                }
            }
            Op::AddBias(x, b) => {
                let (n, c) = g.dims2()?;
                if self.needs(*x) {
                    self.slot(grads, *x).add_assign(g)?;
                }
                if self.needs(*b) {
                    let db = self.slot(grads, *b).data_mut();
                    for r in 0..n {
                        for (d, x) in db.iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let dx = self.slot(grads, *x).data_mut();
                    for ((d, gv), xv) in dx.iter_mut().zip(gd).zip(xv) {
                        *d += gv * gelu_grad(*xv);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (n, c) = g.dims2()?;
                let gv = self.value(*gain).data().to_vec();
                if self.needs(*gain) {
                    let dg = self.slot(grads, *gain).data_mut();
                    for r in 0..n {
                        for j in 0..c {
                            dg[j] += gd[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let db = self.slot(grads, *bias).data_mut();
                    for r in 0..n {
                        for j in 0..c {
                            db[j] += gd[r * c + j];
                        }
                    }
                }
                if self.needs(*x) {
                    let dx = self.slot(grads, *x).data_mut();
                    let mut dxhat = vec![0.0; c];
                    for r in 0..n {
                        let gr = &gd[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= c as f64;
                        mean_dh /= c as f64;
                        for j in 0..c {
                            dx[r * c + j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Attention(cache) => self.backprop_attention(cache, gd, grads)?,
            Op::GatherRows { table, ids } => {
                if self.needs(*table) {
                    let c = self.value(*table).dims2()?.1;
                    let dt = self.slot(grads, *table).data_mut();
                    for (r, &i) in ids.iter().enumerate() {
                        for (d, x) in dt[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&gd[r * c..(r + 1) * c])
                        {
                            *d += x;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let dx = self.slot(grads, *x).data_mut();
                    for ((d, gv), m) in dx.iter_mut().zip(gd).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let s = gd[0];
                    self.slot(grads, *x)
                        .data_mut()
                        .iter_mut()
                        .for_each(|d| *d += s);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.needs(*logits) {
                    let (n, c) = self.value(*logits).dims2()?;
                    let s = gd[0] / n as f64;
                    let dl = self.slot(grads, *logits).data_mut();
                    for r in 0..n {
                        for j in 0..c {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            dl[r * c + j] += s * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Mse { pred, targets } => {
                if self.needs(*pred) {
                    let s = 2.0 * gd[0] / targets.len() as f64;
                    let pv = self.value(*pred).data().to_vec();
                    let dp = self.slot(grads, *pred).data_mut();
                    for ((d, p), t) in dp.iter_mut().zip(&pv).zip(targets) {
                        *d += s * (p - t);
                    }
                }
            }
        }
        Ok(())
    }

    fn backprop_attention(
        &self,
        c: &AttentionCache,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let (seq, heads) = (c.seq, c.heads);
        let d = self.value(c.q).dims2()?.1;
        let dh = d / heads;
        let (qd, kd, vd) = (
            self.value(c.q).data(),
            self.value(c.k).data(),
            self.value(c.v).data(),
        );
        let block = seq * d;
        // Per-batch [dq | dk | dv] blocks, scattered afterwards.
        let mut packed = vec![0.0; c.batch * 3 * block];
        par::for_each_chunk_mut(&mut packed, 3 * block, |b, out| {
            let (dq, rest) = out.split_at_mut(block);
            let (dk, dv) = rest.split_at_mut(block);
            let base = b * block;
            let mut dp = vec![0.0; seq * seq];
            for h in 0..heads {
                let off = base + h * dh;
                let p = &c.probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                gemm(
                    seq,
                    seq,
                    dh,
                    1.0,
                    GemmOperand::transposed(p, seq),
                    GemmOperand::rows(&gd[off..], d),
                    0.0,
                    &mut dv[h * dh..],
                    d,
                );
                gemm(
                    seq,
                    dh,
                    seq,
                    1.0,
                    GemmOperand::rows(&gd[off..], d),
                    GemmOperand::transposed(&vd[off..], d),
                    0.0,
                    &mut dp,
                    seq,
                );
                for i in 0..seq {
                    let pr = &p[i * seq..(i + 1) * seq];
                    let dr = &mut dp[i * seq..(i + 1) * seq];
                    let inner: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (x, pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - inner);
                    }
                }
                gemm(
                    seq,
                    seq,
                    dh,
                    c.scale,
                    GemmOperand::rows(&dp, seq),
                    GemmOperand::rows(&kd[off..], d),
                    0.0,
                    &mut dq[h * dh..],
                    d,
                );
                gemm(
                    seq,
                    seq,
                    dh,
                    c.scale,
                    GemmOperand::transposed(&dp, seq),
                    GemmOperand::rows(&qd[off..], d),
                    0.0,
                    &mut dk[h * dh..],
                    d,
                );
            }
        });
        for (slot_idx, var) in [c.q, c.k, c.v].into_iter().enumerate() {
            if !self.needs(var) {
                continue;
            }
            let dst = self.slot(grads, var).data_mut();
            for b in 0..c.batch {
                let src = &packed[b * 3 * block + slot_idx * block..][..block];
                for (x, y) in dst[b * block..(b + 1) * block].iter_mut().zip(src) {
                    *x += y;
                }
            }
        }
        Ok(())
    }
}

/// In-place softmax over the entries whose key is valid; the rest become 0.
fn masked_softmax(row: &mut [f64], valid: &[bool]) {
    let max = row
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut z = 0.0;
    for (x, &ok) in row.iter_mut().zip(valid) {
        if ok {
            *x = (*x - max).exp();
            z += *x;
        } else {
            *x = 0.0;
        }
    }
    row.iter_mut().for_each(|x| *x /= z);
}
