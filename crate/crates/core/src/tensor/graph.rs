//! Tape-based reverse-mode autodiff over the fixed op set the model needs.
//!
//! A `Graph` is rebuilt per training iteration (define-by-run). Ops record
//! whatever the backward pass needs at forward time; `backward` consumes
//! those saved buffers node by node, so a finished pass leaves no retained
//! activations. Parallel kernels split work over fixed-size batch chunks:
//! the reduction order never depends on the thread count, so gradients are
//! bit-stable under any scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Samples per parallel chunk; fixed so floating-point reduction order is
/// independent of thread count.
const BATCH_CHUNK: usize = 8;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

struct Node<E> {
    value: Tensor<E>,
    grad: Option<Vec<E>>,
    needs_grad: bool,
    op: Op<E>,
}

enum Op<E> {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
    },
    MaxPool2 {
        x: TensorId,
        argmax: Vec<u32>,
    },
    Affine {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    Relu {
        x: TensorId,
    },
    Flatten {
        x: TensorId,
    },
    CosineSim {
        z: TensorId,
        unit: Vec<E>,
        norms: Vec<E>,
        /// Rows at or below this norm are treated as constant zero vectors.
        eps: E,
    },
    SoftmaxCrossEntropy {
        logits: TensorId,
        probs: Vec<E>,
        targets: Tensor<E>,
    },
    BceWithLogits {
        logits: TensorId,
        sigmoid: Vec<E>,
        targets: Tensor<E>,
    },
    NtXent {
        sim: TensorId,
        tau: E,
        /// Row-wise softmax over k != i, zero on the diagonal.
        softmax: Vec<E>,
    },
    /// Placeholder left behind once backward has consumed an op.
    Consumed,
}

pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    ran_backward: bool,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            ran_backward: false,
        }
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass, if this node participated.
    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Op<E>) -> TensorId {
        value.debug_check_finite(op_name(&op));
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: TensorId) -> &[E] {
        self.nodes[id.0].value.data()
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add { a, b }))
    }

    /// Valid cross-correlation with bias.
    /// x: [B, C_in, H, W], w: [C_out, C_in, K, K], b: [C_out];
    /// output [B, C_out, H', W'] with H' = (H + 2p - K)/s + 1.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("want x[B,C,H,W], w[O,C,K,K], b[O]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        let (batch, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        if ws[1] != cin || ws[3] != k || bs[0] != cout {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ws:?} incompatible with input {xs:?} / bias {bs:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
        }
        if h + 2 * padding < k || win + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!("spatial dims {h}x{win} smaller than kernel {k}"),
            ));
        }
        if (h + 2 * padding - k) % stride != 0 || (win + 2 * padding - k) % stride != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("non-integral output size for {h}x{win}, k={k}, s={stride}, p={padding}"),
            ));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (win + 2 * padding - k) / stride + 1;

        let dims = ConvDims {
            batch,
            cin,
            h,
            w: win,
            cout,
            k,
            stride,
            padding,
            ho,
            wo,
        };
        let out = conv2d_forward(self.data(x), self.data(w), self.data(b), &dims);
        let value = Tensor::new(vec![batch, cout, ho, wo], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            value,
            needs,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
        ))
    }

    /// 2x2 max pooling with stride 2 over [B, C, H, W]; H and W must be
    /// even. Backward routes each window's gradient to the first maximal
    /// element in row-major window order.
    pub fn maxpool2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape("maxpool2", format!("want [B,C,H,W], got {xs:?}")));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2",
                format!("spatial dims {h}x{w} must be even"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.data(x);
        let mut out = vec![E::zero(); batch * c * ho * wo];
        let mut argmax = vec![0u32; out.len()];
        for bc in 0..batch * c {
            let plane = &xd[bc * h * w..(bc + 1) * h * w];
            let base_out = bc * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (2 * oy + dy) * w + 2 * ox + dx;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[base_out + oy * wo + ox] = best;
                    argmax[base_out + oy * wo + ox] = (bc * h * w + best_idx) as u32;
                }
            }
        }
        let value = Tensor::new(vec![batch, c, ho, wo], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::MaxPool2 { x, argmax }))
    }

    /// y = x w^T + b with x: [B, n], w: [m, n], b: [m].
    pub fn affine(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(Error::shape(
                "affine",
                format!("want x[B,n], w[m,n], b[m]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        let (batch, n, m) = (xs[0], xs[1], ws[0]);
        let mut out = vec![E::zero(); batch * m];
        matmul_nt(self.data(x), (batch, n), self.data(w), (m, n), &mut out);
        let bias = self.data(b);
        for row in out.chunks_exact_mut(m) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o = *o + bv;
            }
        }
        let value = Tensor::new(vec![batch, m], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, needs, Op::Affine { x, w, b }))
    }

    /// max(0, x); backward passes gradient only where x > 0.
    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data = self
            .data(x)
            .iter()
            .map(|&v| if v > E::zero() { v } else { E::zero() })
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, needs, Op::Relu { x })
    }

    /// [B, ...] -> [B, prod(...)]. Keeps the batch dimension.
    pub fn flatten(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.is_empty() {
            return Err(Error::shape("flatten", "scalar input".to_string()));
        }
        let batch = xs[0];
        let rest: usize = xs[1..].iter().product();
        let value = Tensor::new(vec![batch, rest], self.data(x).to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Flatten { x }))
    }

    /// Pairwise cosine similarities of the rows of z: [B, d] -> [B, B];
    /// symmetric with unit diagonal. Errors on any zero-norm row.
    pub fn cosine_similarity_matrix(&mut self, z: TensorId) -> Result<TensorId> {
        self.cosine_sim_impl(z, E::zero(), true)
    }

    /// Like [`Self::cosine_similarity_matrix`], but rows with norm <= eps
    /// are treated as constant zero vectors: they have zero similarity to
    /// everything and receive zero gradient. This mirrors the epsilon
    /// clamping customary in contrastive training, where an untrained
    /// encoder can emit an exactly-zero embedding for a black frame.
    pub fn cosine_similarity_matrix_clamped(&mut self, z: TensorId, eps: E) -> Result<TensorId> {
        self.cosine_sim_impl(z, eps, false)
    }

    fn cosine_sim_impl(&mut self, z: TensorId, eps: E, strict: bool) -> Result<TensorId> {
        let zs = self.shape(z);
        if zs.len() != 2 {
            return Err(Error::shape(
                "cosine_similarity_matrix",
                format!("want [B,d], got {zs:?}"),
            ));
        }
        let (b, d) = (zs[0], zs[1]);
        let zd = self.data(z);
        let mut norms = vec![E::zero(); b];
        let mut unit = vec![E::zero(); b * d];
        for i in 0..b {
            let row = &zd[i * d..(i + 1) * d];
            let norm = row.iter().fold(E::zero(), |acc, &v| acc + v * v).sqrt();
            norms[i] = norm;
            if norm <= eps || norm == E::zero() {
                if strict {
                    return Err(Error::numeric(
                        "cosine_similarity_matrix",
                        format!("row {i} has zero norm"),
                    ));
                }
                continue; // unit row stays zero
            }
            for (u, &v) in unit[i * d..(i + 1) * d].iter_mut().zip(row) {
                *u = v / norm;
            }
        }
        let mut sim = vec![E::zero(); b * b];
        matmul_nt(&unit, (b, d), &unit, (b, d), &mut sim);
        // cos(z_i, z_i) is 1 by definition; pin it exactly.
        for i in 0..b {
            sim[i * b + i] = E::one();
        }
        let value = Tensor::new(vec![b, b], sim)?;
        let needs = self.needs(z);
        Ok(self.push(value, needs, Op::CosineSim { z, unit, norms, eps }))
    }

    /// Mean softmax cross-entropy over rows; targets must be one-hot.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &Tensor<E>,
    ) -> Result<TensorId> {
        let ls = self.shape(logits);
        if ls.len() != 2 || targets.shape() != ls {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {ls:?} vs targets {:?}", targets.shape()),
            ));
        }
        let (b, c) = (ls[0], ls[1]);
        for (r, row) in targets.data().chunks_exact(c).enumerate() {
            let mut ones = 0usize;
            for &t in row {
                if t == E::one() {
                    ones += 1;
                } else if t != E::zero() {
                    return Err(Error::numeric(
                        "softmax_cross_entropy",
                        format!("row {r} is not one-hot"),
                    ));
                }
            }
            if ones != 1 {
                return Err(Error::numeric(
                    "softmax_cross_entropy",
                    format!("row {r} has {ones} ones"),
                ));
            }
        }
        let ld = self.data(logits);
        let mut probs = vec![E::zero(); b * c];
        let mut loss = E::zero();
        for i in 0..b {
            let row = &ld[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut sum = E::zero();
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                sum = sum + *p;
            }
            let lse = max + sum.ln();
            for p in probs[i * c..(i + 1) * c].iter_mut() {
                *p = *p / sum;
            }
            let tgt = &targets.data()[i * c..(i + 1) * c];
            let picked = row
                .iter()
                .zip(tgt)
                .fold(E::zero(), |acc, (&v, &t)| acc + v * t);
            loss = loss + lse - picked;
        }
        loss = loss / E::from_f64(b as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.clone(),
            },
        ))
    }

    /// Mean binary cross-entropy on sigmoid(logits); targets in {0,1}.
    /// Stabilized form: max(x,0) - x t + ln(1 + exp(-|x|)).
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &Tensor<E>) -> Result<TensorId> {
        let ls = self.shape(logits);
        if targets.shape() != ls {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {ls:?} vs targets {:?}", targets.shape()),
            ));
        }
        if targets
            .data()
            .iter()
            .any(|&t| t != E::zero() && t != E::one())
        {
            return Err(Error::numeric(
                "bce_with_logits",
                "targets must be binary".to_string(),
            ));
        }
        let ld = self.data(logits);
        let mut sigmoid = vec![E::zero(); ld.len()];
        let mut loss = E::zero();
        for (i, (&x, &t)) in ld.iter().zip(targets.data()).enumerate() {
            sigmoid[i] = E::one() / (E::one() + (-x).exp());
            loss = loss + x.max(E::zero()) - x * t + (E::one() + (-x.abs()).exp()).ln();
        }
        loss = loss / E::from_f64(ld.len() as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::BceWithLogits {
                logits,
                sigmoid,
                targets: targets.clone(),
            },
        ))
    }

    /// Temporal NT-Xent loss from a similarity matrix. Rows pair up as
    /// i <-> (i + B/2) mod B. For each row the positive is attracted and
    /// all other rows repelled:
    /// l_i = logsumexp_{k != i}(S_ik / tau) - S_{i,p(i)} / tau,
    /// averaged over both directions of every pair (all B rows).
    pub fn nt_xent_from_similarity(&mut self, sim: TensorId, tau: E) -> Result<TensorId> {
        let ss = self.shape(sim);
        if ss.len() != 2 || ss[0] != ss[1] {
            return Err(Error::shape(
                "nt_xent_from_similarity",
                format!("want square [B,B], got {ss:?}"),
            ));
        }
        let b = ss[0];
        if b < 2 || b % 2 != 0 {
            return Err(Error::shape(
                "nt_xent_from_similarity",
                format!("batch {b} must be even and >= 2"),
            ));
        }
        if tau <= E::zero() {
            return Err(Error::numeric(
                "nt_xent_from_similarity",
                "temperature must be positive".to_string(),
            ));
        }
        let n = b / 2;
        let sd = self.data(sim);
        let mut softmax = vec![E::zero(); b * b];
        let mut loss = E::zero();
        for i in 0..b {
            let row = &sd[i * b..(i + 1) * b];
            let mut max = E::neg_infinity();
            for (k, &v) in row.iter().enumerate() {
                if k != i {
                    max = max.max(v / tau);
                }
            }
            let mut sum = E::zero();
            for (k, &v) in row.iter().enumerate() {
                if k != i {
                    let e = (v / tau - max).exp();
                    softmax[i * b + k] = e;
                    sum = sum + e;
                }
            }
            for w in softmax[i * b..(i + 1) * b].iter_mut() {
                *w = *w / sum;
            }
            let lse = max + sum.ln();
            let partner = (i + n) % b;
            loss = loss + lse - row[partner] / tau;
        }
        loss = loss / E::from_f64(b as f64);
        let needs = self.needs(sim);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::NtXent { sim, tau, softmax },
        ))
    }

    /// Reverse pass from a scalar loss. Each node is visited once in
    /// reverse construction order; saved activations are consumed as the
    /// pass retires their ops, so nothing is retained afterwards.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.ran_backward {
            return Err(Error::numeric(
                "backward",
                "graph already consumed by a previous backward pass".to_string(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        self.ran_backward = true;
        self.nodes[loss.0].grad = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Consumed);
            let grad = self.nodes[i].grad.take().expect("checked above");
            let contributions = self.backward_op(i, op, &grad);
            for (parent, contrib) in contributions {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut self.nodes[parent.0].grad {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, node: usize, op: Op<E>, grad: &[E]) -> Vec<(TensorId, Vec<E>)> {
        match op {
            Op::Leaf | Op::Consumed => Vec::new(),
            Op::Add { a, b } => vec![(a, grad.to_vec()), (b, grad.to_vec())],
            Op::Relu { x } => {
                let xd = self.data(x);
                let dx = xd
                    .iter()
                    .zip(grad)
                    .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
                    .collect();
                vec![(x, dx)]
            }
            Op::Flatten { x } => vec![(x, grad.to_vec())],
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![E::zero(); self.data(x).len()];
                for (&src, &g) in argmax.iter().zip(grad) {
                    dx[src as usize] = dx[src as usize] + g;
                }
                vec![(x, dx)]
            }
            Op::Affine { x, w, b } => {
                let (batch, n) = (self.shape(x)[0], self.shape(x)[1]);
                let m = self.shape(w)[0];
                let mut out = Vec::with_capacity(3);
                if self.needs(x) {
                    let mut dx = vec![E::zero(); batch * n];
                    matmul_nn(grad, (batch, m), self.data(w), (m, n), &mut dx);
                    out.push((x, dx));
                }
                if self.needs(w) {
                    let mut dw = vec![E::zero(); m * n];
                    matmul_tn(grad, (batch, m), self.data(x), (batch, n), &mut dw);
                    out.push((w, dw));
                }
                if self.needs(b) {
                    let mut db = vec![E::zero(); m];
                    for row in grad.chunks_exact(m) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d = *d + g;
                        }
                    }
                    out.push((b, db));
                }
                out
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let xs = self.shape(x);
                let ws = self.shape(w);
                let os = self.shape(TensorId(node));
                let dims = ConvDims {
                    batch: xs[0],
                    cin: xs[1],
                    h: xs[2],
                    w: xs[3],
                    cout: ws[0],
                    k: ws[2],
                    stride,
                    padding,
                    ho: os[2],
                    wo: os[3],
                };
                let mut out = Vec::with_capacity(3);
                if self.needs(x) {
                    out.push((x, conv2d_backward_input(grad, self.data(w), &dims)));
                }
                if self.needs(w) || self.needs(b) {
                    let (dw, db) = conv2d_backward_params(grad, self.data(x), &dims);
                    if self.needs(w) {
                        out.push((w, dw));
                    }
                    if self.needs(b) {
                        out.push((b, db));
                    }
                }
                out
            }
            Op::CosineSim { z, unit, norms, eps } => {
                let (b, d) = (self.shape(z)[0], self.shape(z)[1]);
                let s = self.data(TensorId(node));
                // H = G + G^T folds both orientations of each entry.
                let mut hsym = vec![E::zero(); b * b];
                for i in 0..b {
                    for j in 0..b {
                        hsym[i * b + j] = grad[i * b + j] + grad[j * b + i];
                    }
                }
                let mut m = vec![E::zero(); b * d];
                matmul_nn(&hsym, (b, b), &unit, (b, d), &mut m);
                let mut dz = vec![E::zero(); b * d];
                for i in 0..b {
                    let norm = norms[i];
                    if norm <= eps || norm == E::zero() {
                        continue; // constant row: no gradient
                    }
                    let c = (0..b).fold(E::zero(), |acc, j| {
                        acc + hsym[i * b + j] * s[i * b + j]
                    });
                    let ui = &unit[i * d..(i + 1) * d];
                    for t in 0..d {
                        dz[i * d + t] = (m[i * d + t] - c * ui[t]) / norm;
                    }
                }
                vec![(z, dz)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let b = self.shape(logits)[0];
                let scale = grad[0] / E::from_f64(b as f64);
                let dl = probs
                    .iter()
                    .zip(targets.data())
                    .map(|(&p, &t)| (p - t) * scale)
                    .collect();
                vec![(logits, dl)]
            }
            Op::BceWithLogits {
                logits,
                sigmoid,
                targets,
            } => {
                let count = E::from_f64(sigmoid.len() as f64);
                let scale = grad[0] / count;
                let dl = sigmoid
                    .iter()
                    .zip(targets.data())
                    .map(|(&s, &t)| (s - t) * scale)
                    .collect();
                vec![(logits, dl)]
            }
            Op::NtXent { sim, tau, softmax } => {
                let b = self.shape(sim)[0];
                let n = b / 2;
                let scale = grad[0] / (tau * E::from_f64(b as f64));
                let mut ds = vec![E::zero(); b * b];
                for i in 0..b {
                    let partner = (i + n) % b;
                    for k in 0..b {
                        if k == i {
                            continue;
                        }
                        let delta = if k == partner { E::one() } else { E::zero() };
                        ds[i * b + k] = (softmax[i * b + k] - delta) * scale;
                    }
                }
                vec![(sim, ds)]
            }
        }
    }
}

fn op_name<E>(op: &Op<E>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add { .. } => "add",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool2 { .. } => "maxpool2",
        Op::Affine { .. } => "affine",
        Op::Relu { .. } => "relu",
        Op::Flatten { .. } => "flatten",
        Op::CosineSim { .. } => "cosine_similarity_matrix",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::BceWithLogits { .. } => "bce_with_logits",
        Op::NtXent { .. } => "nt_xent",
        Op::Consumed => "consumed",
    }
}

// ---------------------------------------------------------------------------
// Matmul helpers (ndarray's deterministic single-threaded kernel).
// ---------------------------------------------------------------------------

/// out[r_a, r_b] = a . b^T
fn matmul_nt<E: Scalar>(a: &[E], ad: (usize, usize), b: &[E], bd: (usize, usize), out: &mut [E]) {
    debug_assert_eq!(ad.1, bd.1);
    let av = ArrayView2::from_shape(ad, a).expect("a shape");
    let bv = ArrayView2::from_shape(bd, b).expect("b shape");
    let mut ov = ArrayViewMut2::from_shape((ad.0, bd.0), out).expect("out shape");
    general_mat_mul(E::one(), &av, &bv.t(), E::zero(), &mut ov);
}

/// out[r_a, c_b] = a . b
fn matmul_nn<E: Scalar>(a: &[E], ad: (usize, usize), b: &[E], bd: (usize, usize), out: &mut [E]) {
    debug_assert_eq!(ad.1, bd.0);
    let av = ArrayView2::from_shape(ad, a).expect("a shape");
    let bv = ArrayView2::from_shape(bd, b).expect("b shape");
    let mut ov = ArrayViewMut2::from_shape((ad.0, bd.1), out).expect("out shape");
    general_mat_mul(E::one(), &av, &bv, E::zero(), &mut ov);
}

/// out[c_a, c_b] = a^T . b
fn matmul_tn<E: Scalar>(a: &[E], ad: (usize, usize), b: &[E], bd: (usize, usize), out: &mut [E]) {
    debug_assert_eq!(ad.0, bd.0);
    let av = ArrayView2::from_shape(ad, a).expect("a shape");
    let bv = ArrayView2::from_shape(bd, b).expect("b shape");
    let mut ov = ArrayViewMut2::from_shape((ad.1, bd.1), out).expect("out shape");
    general_mat_mul(E::one(), &av.t(), &bv, E::zero(), &mut ov);
}

// ---------------------------------------------------------------------------
// Convolution kernels.
// ---------------------------------------------------------------------------

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn in_plane(&self) -> usize {
        self.h * self.w
    }
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
    fn sample_in(&self) -> usize {
        self.cin * self.in_plane()
    }
    fn sample_out(&self) -> usize {
        self.cout * self.out_plane()
    }
    fn fast_path(&self) -> bool {
        self.stride == 1 && self.padding == 0
    }
}

fn conv2d_forward<E: Scalar>(x: &[E], w: &[E], bias: &[E], d: &ConvDims) -> Vec<E> {
    let mut out = vec![E::zero(); d.batch * d.sample_out()];
    out.par_chunks_mut(d.sample_out() * BATCH_CHUNK)
        .zip(x.par_chunks(d.sample_in() * BATCH_CHUNK))
        .for_each(|(out_chunk, x_chunk)| {
            for (o_sample, x_sample) in out_chunk
                .chunks_mut(d.sample_out())
                .zip(x_chunk.chunks(d.sample_in()))
            {
                conv2d_forward_sample(x_sample, w, bias, d, o_sample);
            }
        });
    out
}

fn conv2d_forward_sample<E: Scalar>(x: &[E], w: &[E], bias: &[E], d: &ConvDims, out: &mut [E]) {
    for co in 0..d.cout {
        let o_plane = &mut out[co * d.out_plane()..(co + 1) * d.out_plane()];
        o_plane.fill(bias[co]);
        for ci in 0..d.cin {
            let x_plane = &x[ci * d.in_plane()..(ci + 1) * d.in_plane()];
            let w_base = (co * d.cin + ci) * d.k * d.k;
            if d.fast_path() {
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let wv = w[w_base + kh * d.k + kw];
                        for ho in 0..d.ho {
                            let xrow = &x_plane[(ho + kh) * d.w + kw..(ho + kh) * d.w + kw + d.wo];
                            let orow = &mut o_plane[ho * d.wo..(ho + 1) * d.wo];
                            for (o, &xv) in orow.iter_mut().zip(xrow) {
                                *o = *o + wv * xv;
                            }
                        }
                    }
                }
            } else {
                for ho in 0..d.ho {
                    for wo_i in 0..d.wo {
                        let mut acc = E::zero();
                        for kh in 0..d.k {
                            let hy = (ho * d.stride + kh) as isize - d.padding as isize;
                            if hy < 0 || hy >= d.h as isize {
                                continue;
                            }
                            for kw in 0..d.k {
                                let wx = (wo_i * d.stride + kw) as isize - d.padding as isize;
                                if wx < 0 || wx >= d.w as isize {
                                    continue;
                                }
                                acc = acc
                                    + w[w_base + kh * d.k + kw]
                                        * x_plane[hy as usize * d.w + wx as usize];
                            }
                        }
                        o_plane[ho * d.wo + wo_i] = o_plane[ho * d.wo + wo_i] + acc;
                    }
                }
            }
        }
    }
}

fn conv2d_backward_input<E: Scalar>(g: &[E], w: &[E], d: &ConvDims) -> Vec<E> {
    let mut dx = vec![E::zero(); d.batch * d.sample_in()];
    dx.par_chunks_mut(d.sample_in() * BATCH_CHUNK)
        .zip(g.par_chunks(d.sample_out() * BATCH_CHUNK))
        .for_each(|(dx_chunk, g_chunk)| {
            for (dx_sample, g_sample) in dx_chunk
                .chunks_mut(d.sample_in())
                .zip(g_chunk.chunks(d.sample_out()))
            {
                for co in 0..d.cout {
                    let g_plane = &g_sample[co * d.out_plane()..(co + 1) * d.out_plane()];
                    for ci in 0..d.cin {
                        let dx_plane =
                            &mut dx_sample[ci * d.in_plane()..(ci + 1) * d.in_plane()];
                        let w_base = (co * d.cin + ci) * d.k * d.k;
                        if d.fast_path() {
                            for kh in 0..d.k {
                                for kw in 0..d.k {
                                    let wv = w[w_base + kh * d.k + kw];
                                    for ho in 0..d.ho {
                                        let grow = &g_plane[ho * d.wo..(ho + 1) * d.wo];
                                        let drow = &mut dx_plane[(ho + kh) * d.w + kw
                                            ..(ho + kh) * d.w + kw + d.wo];
                                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                                            *dv = *dv + wv * gv;
                                        }
                                    }
                                }
                            }
                        } else {
                            for ho in 0..d.ho {
                                for wo_i in 0..d.wo {
                                    let gv = g_plane[ho * d.wo + wo_i];
                                    for kh in 0..d.k {
                                        let hy =
                                            (ho * d.stride + kh) as isize - d.padding as isize;
                                        if hy < 0 || hy >= d.h as isize {
                                            continue;
                                        }
                                        for kw in 0..d.k {
                                            let wx = (wo_i * d.stride + kw) as isize
                                                - d.padding as isize;
                                            if wx < 0 || wx >= d.w as isize {
                                                continue;
                                            }
                                            let idx = hy as usize * d.w + wx as usize;
                                            dx_plane[idx] = dx_plane[idx]
                                                + w[w_base + kh * d.k + kw] * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// Weight and bias gradients, reduced over fixed-size batch chunks in
/// chunk order.
fn conv2d_backward_params<E: Scalar>(g: &[E], x: &[E], d: &ConvDims) -> (Vec<E>, Vec<E>) {
    let wlen = d.cout * d.cin * d.k * d.k;
    let partials: Vec<(Vec<E>, Vec<E>)> = g
        .par_chunks(d.sample_out() * BATCH_CHUNK)
        .zip(x.par_chunks(d.sample_in() * BATCH_CHUNK))
        .map(|(g_chunk, x_chunk)| {
            let mut dw = vec![E::zero(); wlen];
            let mut db = vec![E::zero(); d.cout];
            for (g_sample, x_sample) in g_chunk
                .chunks(d.sample_out())
                .zip(x_chunk.chunks(d.sample_in()))
            {
                for co in 0..d.cout {
                    let g_plane = &g_sample[co * d.out_plane()..(co + 1) * d.out_plane()];
                    db[co] = db[co] + g_plane.iter().fold(E::zero(), |a, &v| a + v);
                    for ci in 0..d.cin {
                        let x_plane = &x_sample[ci * d.in_plane()..(ci + 1) * d.in_plane()];
                        let w_base = (co * d.cin + ci) * d.k * d.k;
                        if d.fast_path() {
                            for kh in 0..d.k {
                                for kw in 0..d.k {
                                    let mut acc = E::zero();
                                    for ho in 0..d.ho {
                                        let grow = &g_plane[ho * d.wo..(ho + 1) * d.wo];
                                        let xrow = &x_plane[(ho + kh) * d.w + kw
                                            ..(ho + kh) * d.w + kw + d.wo];
                                        for (&gv, &xv) in grow.iter().zip(xrow) {
                                            acc = acc + gv * xv;
                                        }
                                    }
                                    dw[w_base + kh * d.k + kw] =
                                        dw[w_base + kh * d.k + kw] + acc;
                                }
                            }
                        } else {
                            for ho in 0..d.ho {
                                for wo_i in 0..d.wo {
                                    let gv = g_plane[ho * d.wo + wo_i];
                                    for kh in 0..d.k {
                                        let hy =
                                            (ho * d.stride + kh) as isize - d.padding as isize;
                                        if hy < 0 || hy >= d.h as isize {
                                            continue;
                                        }
                                        for kw in 0..d.k {
                                            let wx = (wo_i * d.stride + kw) as isize
                                                - d.padding as isize;
                                            if wx < 0 || wx >= d.w as isize {
                                                continue;
                                            }
                                            let wi = w_base + kh * d.k + kw;
                                            dw[wi] = dw[wi]
                                                + gv * x_plane[hy as usize * d.w + wx as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (dw, db)
        })
        .collect();

    let mut dw = vec![E::zero(); wlen];
    let mut db = vec![E::zero(); d.cout];
    for (pw, pb) in partials {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a = *a + *b;
        }
        for (a, b) in db.iter_mut().zip(&pb) {
            *a = *a + *b;
        }
    }
    (dw, db)
}
