//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! The graph is rebuilt for every training step: leaves are staged with
//! [`Tape::leaf`], ops append nodes, and [`Tape::backward`] walks the
//! nodes in reverse creation order. Gradients accumulate, so a leaf used
//! many times (a weight-tied block) collects the sum of all its
//! per-iteration contributions.

use thiserror::Error;

use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Scalar, Tensor};

const LN_EPS: f64 = 1e-5;
const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cross entropy needs at least one supervised position")]
    EmptyMask,
    #[error("backward needs a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    TransposeLast {
        x: Var,
    },
    SwapAxes12 {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Softmax {
        x: Var,
        causal: bool,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: Var,
    },
    Embed {
        table: Var,
        ids: Vec<u32>,
    },
    CrossEntropyMasked {
        logits: Var,
        targets: Vec<u32>,
        mask: Vec<u8>,
        probs: Tensor<T>,
        count: usize,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

pub struct Tape<T: Scalar> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// Gradient accumulated so far; `None` means no path from any loss
    /// reached this node (a zero gradient).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.values.len()
    }

    // ── ops ─────────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "add needs matching shapes"
        );
        let mut out = self.values[a.0].clone();
        out.add_assign(&self.values[b.0]);
        self.push(out, Op::Add { a, b })
    }

    /// Adds a `[d]` bias to every trailing row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let d = self.values[x.0].last_dim();
        assert_eq!(self.values[bias.0].shape(), &[d], "bias must be [last_dim]");
        let mut out = self.values[x.0].clone();
        let bdata: &[T] = self.values[bias.0].data();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(bdata) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.values[x.0].map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    /// Batched matrix product `[.., m, k] × [k, n]` (shared right factor)
    /// or `[.., m, k] × [.., k, n]` (matching batch dims).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.rank() < 2 || vb.rank() < 2 {
            return Err(DiffError::ShapeMismatch(format!(
                "matmul needs matrices, got {:?} × {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k) = va.mat_dims();
        let (kb, n) = vb.mat_dims();
        let shared_b = vb.rank() == 2;
        let batches_match = va.shape()[..va.rank() - 2] == vb.shape()[..vb.rank() - 2];
        if kb != k || (!shared_b && !batches_match) {
            return Err(DiffError::ShapeMismatch(format!(
                "matmul {:?} × {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let batch = va.batch_size();
        let mut out_shape = va.shape()[..va.rank() - 1].to_vec();
        out_shape.push(n);
        let mut out = Tensor::zeros(&out_shape);
        for bi in 0..batch {
            let asl = &va.data()[bi * m * k..(bi + 1) * m * k];
            let bsl = if shared_b {
                vb.data()
            } else {
                &vb.data()[bi * k * n..(bi + 1) * k * n]
            };
            matmul_acc(asl, bsl, &mut out.data_mut()[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    pub fn transpose_last(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let (m, n) = v.mat_dims();
        let batch = v.batch_size();
        let mut shape = v.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let mut out = Tensor::zeros(&shape);
        for bi in 0..batch {
            let src = &v.data()[bi * m * n..(bi + 1) * m * n];
            let dst = &mut out.data_mut()[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        self.push(out, Op::TransposeLast { x })
    }

    /// `[a, b, c, d] -> [a, c, b, d]`; used to regroup attention heads.
    pub fn swap_axes_12(&mut self, x: Var) -> Var {
        let out = swap_axes_12_tensor(&self.values[x.0]);
        self.push(out, Op::SwapAxes12 { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.values[x.0].reshaped(shape);
        self.push(out, Op::Reshape { x })
    }

    /// Row softmax over the last dimension. With `causal` set the last
    /// two dims form square matrices and row `i` only sees columns
    /// `0..=i`; masked entries get probability exactly 0. Stabilized by
    /// row-max subtraction.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let v = &self.values[x.0];
        let d = v.last_dim();
        if causal {
            let (m, n) = v.mat_dims();
            assert_eq!(m, n, "causal softmax needs square matrices");
        }
        let mut out = Tensor::zeros(v.shape());
        for (ri, (row, orow)) in v
            .data()
            .chunks(d)
            .zip(out.data_mut().chunks_mut(d))
            .enumerate()
        {
            let allowed = if causal { (ri % d) + 1 } else { d };
            let mut mx = row[0];
            for &rv in &row[..allowed] {
                mx = mx.max_s(rv);
            }
            let mut sum = T::ZERO;
            for j in 0..allowed {
                let e = (row[j] - mx).exp();
                orow[j] = e;
                sum += e;
            }
            for o in orow[..allowed].iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(out, Op::Softmax { x, causal })
    }

    /// Per-row zero-mean unit-variance normalization over the last dim,
    /// then an affine map by `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let v = &self.values[x.0];
        let d = v.last_dim();
        assert_eq!(self.values[gain.0].shape(), &[d], "gain must be [d]");
        assert_eq!(self.values[bias.0].shape(), &[d], "bias must be [d]");
        let rows = v.numel() / d;
        let mut xhat = Tensor::zeros(v.shape());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Tensor::zeros(v.shape());
        let inv_d = T::from_f64(1.0 / d as f64);
        let eps = T::from_f64(LN_EPS);
        let gdata: Vec<T> = self.values[gain.0].data().to_vec();
        let bdata: Vec<T> = self.values[bias.0].data().to_vec();
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &rv in row {
                mean += rv;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &rv in row {
                let c = rv - mean;
                var += c * c;
            }
            var *= inv_d;
            let rs = T::ONE / (var + eps).sqrt();
            rstd.push(rs);
            let xh = &mut xhat.data_mut()[r * d..(r + 1) * d];
            let orow = &mut out.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xh[j] = h;
                orow[j] = h * gdata[j] + bdata[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Gaussian-error linear unit, tanh approximation (the GPT-2 form).
    pub fn gelu(&mut self, x: Var) -> Var {
        let c0 = T::from_f64(GELU_C0);
        let c1 = T::from_f64(GELU_C1);
        let half = T::from_f64(0.5);
        let out = self.values[x.0].map(|v| {
            let t = (c0 * (v + c1 * v * v * v)).tanh();
            half * v * (T::ONE + t)
        });
        self.push(out, Op::Gelu { x })
    }

    /// Embedding lookup: `out[b, l, :] = table[ids[b * len + l], :]`.
    pub fn embed(&mut self, table: Var, ids: &[u32], batch: usize, len: usize) -> Result<Var, DiffError> {
        assert_eq!(ids.len(), batch * len, "ids must be batch × len");
        let t = &self.values[table.0];
        let (vocab, d) = t.mat_dims();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(DiffError::TokenOutOfRange {
                id: bad,
                vocab,
            });
        }
        let mut out = Tensor::zeros(&[batch, len, d]);
        for (pos, &id) in ids.iter().enumerate() {
            let src = &t.data()[id as usize * d..(id as usize + 1) * d];
            out.data_mut()[pos * d..(pos + 1) * d].copy_from_slice(src);
        }
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean over mask-1 positions of `-log softmax(logits)[target]`.
    /// `logits` is `[B, L, V]`; `targets` and `mask` are flat `B × L`.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[u8],
    ) -> Result<Var, DiffError> {
        let v = &self.values[logits.0];
        let vsize = v.last_dim();
        let rows = v.numel() / vsize;
        if targets.len() != rows || mask.len() != rows {
            return Err(DiffError::ShapeMismatch(format!(
                "targets/mask must have {rows} entries"
            )));
        }
        if let Some(&bad) = targets
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m != 0)
            .map(|(t, _)| t)
            .find(|&&t| t as usize >= vsize)
        {
            return Err(DiffError::TokenOutOfRange {
                id: bad,
                vocab: vsize,
            });
        }
        let count = mask.iter().filter(|&&m| m != 0).count();
        if count == 0 {
            return Err(DiffError::EmptyMask);
        }
        let mut probs = Tensor::zeros(v.shape());
        let mut total = T::ZERO;
        for r in 0..rows {
            if mask[r] == 0 {
                continue;
            }
            let row = &v.data()[r * vsize..(r + 1) * vsize];
            let mut mx = row[0];
            for &rv in row {
                mx = mx.max_s(rv);
            }
            let mut sum = T::ZERO;
            let prow = &mut probs.data_mut()[r * vsize..(r + 1) * vsize];
            for j in 0..vsize {
                let e = (row[j] - mx).exp();
                prow[j] = e;
                sum += e;
            }
            for p in prow.iter_mut() {
                *p = *p / sum;
            }
            let lse = mx + sum.ln();
            total += lse - row[targets[r] as usize];
        }
        let mean = total / T::from_f64(count as f64);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropyMasked {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Scalar combination `Σ w_i · x_i` of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut acc = T::ZERO;
        for &(v, w) in terms {
            assert_eq!(self.values[v.0].numel(), 1, "weighted_sum needs scalars");
            acc += self.values[v.0].item() * w;
        }
        self.push(
            Tensor::scalar(acc),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        )
    }

    // ── backward ────────────────────────────────────────────────────

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Backpropagates from a scalar loss. Each call adds one more copy of
    /// d loss / d node into the persistent gradients, so repeated calls
    /// accumulate until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        let numel = self.values[loss.0].numel();
        if numel != 1 {
            return Err(DiffError::NonScalarLoss { numel });
        }
        // Traverse with scratch buffers; fold into self.grads at the end
        // of each node visit so prior accumulations are never re-routed.
        let mut work: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        work.resize_with(loss.0 + 1, || None);
        work[loss.0] = Some(Tensor::new(
            self.values[loss.0].shape().to_vec(),
            vec![T::ONE],
        ));

        for i in (0..=loss.0).rev() {
            let Some(g) = work[i].take() else {
                continue;
            };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    Self::accumulate(&mut work, *a, g.clone());
                    Self::accumulate(&mut work, *b, g.clone());
                }
                Op::AddBias { x, bias } => {
                    let d = g.last_dim();
                    let mut gb = Tensor::zeros(&[d]);
                    for row in g.data().chunks(d) {
                        for (o, &gv) in gb.data_mut().iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                    Self::accumulate(&mut work, *x, g.clone());
                    Self::accumulate(&mut work, *bias, gb);
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    Self::accumulate(&mut work, *x, g.map(|v| v * c));
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let va = &self.values[a.0];
                    let vb = &self.values[b.0];
                    let (m, k) = va.mat_dims();
                    let n = vb.last_dim();
                    let shared_b = vb.rank() == 2;
                    let batch = va.batch_size();
                    let mut ga = Tensor::zeros(va.shape());
                    let mut gb = Tensor::zeros(vb.shape());
                    for bi in 0..batch {
                        let gsl = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let asl = &va.data()[bi * m * k..(bi + 1) * m * k];
                        let bsl = if shared_b {
                            vb.data()
                        } else {
                            &vb.data()[bi * k * n..(bi + 1) * k * n]
                        };
                        // dA = dC · Bᵀ
                        matmul_bt_acc(
                            gsl,
                            bsl,
                            &mut ga.data_mut()[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                        // dB = Aᵀ · dC (summed over the batch when B is shared)
                        let gbsl = if shared_b {
                            &mut gb.data_mut()[..]
                        } else {
                            &mut gb.data_mut()[bi * k * n..(bi + 1) * k * n]
                        };
                        matmul_at_acc(asl, gsl, gbsl, k, m, n);
                    }
                    Self::accumulate(&mut work, a, ga);
                    Self::accumulate(&mut work, b, gb);
                }
                Op::TransposeLast { x } => {
                    let x = *x;
                    let v = &self.values[x.0];
                    let (m, n) = v.mat_dims();
                    let batch = v.batch_size();
                    let mut gx = Tensor::zeros(v.shape());
                    for bi in 0..batch {
                        let src = &g.data()[bi * m * n..(bi + 1) * m * n]; // [n, m]
                        let dst = &mut gx.data_mut()[bi * m * n..(bi + 1) * m * n];
                        for i in 0..m {
                            for j in 0..n {
                                dst[i * n + j] = src[j * m + i];
                            }
                        }
                    }
                    Self::accumulate(&mut work, x, gx);
                }
                Op::SwapAxes12 { x } => {
                    let x = *x;
                    let gx = swap_axes_12_tensor(&g);
                    Self::accumulate(&mut work, x, gx);
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let gx = g.reshaped(self.values[x.0].shape());
                    Self::accumulate(&mut work, x, gx);
                }
                Op::Softmax { x, causal } => {
                    let (x, causal) = (*x, *causal);
                    let p = &self.values[i];
                    let d = p.last_dim();
                    let mut gx = Tensor::zeros(p.shape());
                    for (ri, ((prow, grow), orow)) in p
                        .data()
                        .chunks(d)
                        .zip(g.data().chunks(d))
                        .zip(gx.data_mut().chunks_mut(d))
                        .enumerate()
                    {
                        let allowed = if causal { (ri % d) + 1 } else { d };
                        let mut dot = T::ZERO;
                        for j in 0..allowed {
                            dot += prow[j] * grow[j];
                        }
                        for j in 0..allowed {
                            orow[j] = prow[j] * (grow[j] - dot);
                        }
                    }
                    Self::accumulate(&mut work, x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let d = xhat.last_dim();
                    let rows = xhat.numel() / d;
                    let gdata: Vec<T> = self.values[gain.0].data().to_vec();
                    let mut gx = Tensor::zeros(xhat.shape());
                    let mut ggain = Tensor::zeros(&[d]);
                    let mut gbias = Tensor::zeros(&[d]);
                    let inv_d = T::from_f64(1.0 / d as f64);
                    for r in 0..rows {
                        let xh = &xhat.data()[r * d..(r + 1) * d];
                        let go = &g.data()[r * d..(r + 1) * d];
                        let rs = rstd[r];
                        let mut mean_dxhat = T::ZERO;
                        let mut mean_dxhat_xhat = T::ZERO;
                        for j in 0..d {
                            let dxh = go[j] * gdata[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh[j];
                            ggain.data_mut()[j] += go[j] * xh[j];
                            gbias.data_mut()[j] += go[j];
                        }
                        mean_dxhat *= inv_d;
                        mean_dxhat_xhat *= inv_d;
                        let gxr = &mut gx.data_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dxh = go[j] * gdata[j];
                            gxr[j] = rs * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                        }
                    }
                    Self::accumulate(&mut work, x, gx);
                    Self::accumulate(&mut work, gain, ggain);
                    Self::accumulate(&mut work, bias, gbias);
                }
                Op::Gelu { x } => {
                    let x = *x;
                    let c0 = T::from_f64(GELU_C0);
                    let c1 = T::from_f64(GELU_C1);
                    let half = T::from_f64(0.5);
                    let three = T::from_f64(3.0);
                    let v = &self.values[x.0];
                    let mut gx = Tensor::zeros(v.shape());
                    for ((o, &xv), &gv) in gx.data_mut().iter_mut().zip(v.data()).zip(g.data()) {
                        let t = (c0 * (xv + c1 * xv * xv * xv)).tanh();
                        let du = c0 * (T::ONE + three * c1 * xv * xv);
                        let d = half * (T::ONE + t) + half * xv * (T::ONE - t * t) * du;
                        *o = gv * d;
                    }
                    Self::accumulate(&mut work, x, gx);
                }
                Op::Embed { table, ids } => {
                    let table = *table;
                    let d = self.values[table.0].last_dim();
                    let mut gt = Tensor::zeros(self.values[table.0].shape());
                    for (pos, &id) in ids.iter().enumerate() {
                        let src = &g.data()[pos * d..(pos + 1) * d];
                        let dst = &mut gt.data_mut()[id as usize * d..(id as usize + 1) * d];
                        for (o, &s) in dst.iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    Self::accumulate(&mut work, table, gt);
                }
                Op::CrossEntropyMasked {
                    logits,
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let logits = *logits;
                    let scale = g.item() / T::from_f64(*count as f64);
                    let vsize = probs.last_dim();
                    let mut gl = Tensor::zeros(probs.shape());
                    for r in 0..targets.len() {
                        if mask[r] == 0 {
                            continue;
                        }
                        let prow = &probs.data()[r * vsize..(r + 1) * vsize];
                        let grow = &mut gl.data_mut()[r * vsize..(r + 1) * vsize];
                        for j in 0..vsize {
                            grow[j] = prow[j] * scale;
                        }
                        grow[targets[r] as usize] -= scale;
                    }
                    Self::accumulate(&mut work, logits, gl);
                }
                Op::WeightedSum { terms } => {
                    let gv = g.item();
                    let terms = terms.clone();
                    for (v, w) in terms {
                        Self::accumulate(&mut work, v, Tensor::scalar(gv * w));
                    }
                }
            }
            match &mut self.grads[i] {
                Some(pg) => pg.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn swap_axes_12_tensor<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    let s = v.shape();
    assert_eq!(s.len(), 4, "swap_axes_12 expects rank 4");
    let (a0, a1, a2, a3) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[a0, a2, a1, a3]);
    for i0 in 0..a0 {
        for i1 in 0..a1 {
            for i2 in 0..a2 {
                let src = &v.data()[(((i0 * a1) + i1) * a2 + i2) * a3..][..a3];
                let dst = &mut out.data_mut()[(((i0 * a2) + i2) * a1 + i1) * a3..][..a3];
                dst.copy_from_slice(src);
            }
        }
    }
    out
}
