//! Decoder-only transformer block (pre-norm, causal, no positional
//! embedding) executed as a weight-tied loop with input injection. The
//! same struct also covers the fixed-depth baselines: they are a deeper
//! block applied for a single iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::fnv1a64;
use crate::tape::{DiffError, Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::vocab::Tok;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loop count must be at least 1")]
    ZeroLoopSteps,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint parameters do not match the model: {0}")]
    ParamMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Layers inside the looped block (or the whole stack for the
    /// fixed-depth baselines).
    pub block_depth: usize,
    pub max_seq_len: usize,
    /// Re-add the input embedding to the hidden state at every iteration.
    pub input_injection: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, heads: usize, block_depth: usize) -> Self {
        assert!(embed_dim % heads == 0, "embed_dim must divide into heads");
        assert!(block_depth >= 1, "block_depth must be at least 1");
        ModelConfig {
            vocab_size,
            embed_dim,
            heads,
            block_depth,
            max_seq_len: 512,
            input_injection: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Token ids arranged as a rectangular batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<u32>,
}

impl TokenBatch {
    pub fn from_rows(rows: &[&[Tok]]) -> Self {
        assert!(!rows.is_empty(), "empty batch");
        let len = rows[0].len();
        assert!(
            rows.iter().all(|r| r.len() == len),
            "batch rows must share one length"
        );
        let ids = rows
            .iter()
            .flat_map(|r| r.iter().map(|&t| t as u32))
            .collect();
        TokenBatch {
            batch: rows.len(),
            len,
            ids,
        }
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub fc_w: Tensor<T>,
    pub fc_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
}

struct TapedLayer {
    ln1_g: Var,
    ln1_b: Var,
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln2_g: Var,
    ln2_b: Var,
    fc_w: Var,
    fc_b: Var,
    proj_w: Var,
    proj_b: Var,
}

/// Parameter handles staged onto a tape for one forward/backward pass.
pub struct TapedParams {
    wte: Var,
    layers: Vec<TapedLayer>,
    lnf_g: Var,
    lnf_b: Var,
    head_w: Var,
    head_b: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopedModel<T> {
    pub cfg: ModelConfig,
    pub wte: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_g: Tensor<T>,
    pub lnf_b: Tensor<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

impl<T: Scalar> LoopedModel<T> {
    /// Fresh model: truncated-normal (std 0.02) weights, zero biases,
    /// unit norm gains. The output head is untied from the embedding.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let v = cfg.vocab_size;
        let std = 0.02;
        let mut layers = Vec::with_capacity(cfg.block_depth);
        let wte = Tensor::randn_trunc(&[v, d], std, &mut rng);
        for _ in 0..cfg.block_depth {
            layers.push(LayerParams {
                ln1_g: Tensor::full(&[d], T::ONE),
                ln1_b: Tensor::zeros(&[d]),
                wq: Tensor::randn_trunc(&[d, d], std, &mut rng),
                bq: Tensor::zeros(&[d]),
                wk: Tensor::randn_trunc(&[d, d], std, &mut rng),
                bk: Tensor::zeros(&[d]),
                wv: Tensor::randn_trunc(&[d, d], std, &mut rng),
                bv: Tensor::zeros(&[d]),
                wo: Tensor::randn_trunc(&[d, d], std, &mut rng),
                bo: Tensor::zeros(&[d]),
                ln2_g: Tensor::full(&[d], T::ONE),
                ln2_b: Tensor::zeros(&[d]),
                fc_w: Tensor::randn_trunc(&[d, 4 * d], std, &mut rng),
                fc_b: Tensor::zeros(&[4 * d]),
                proj_w: Tensor::randn_trunc(&[4 * d, d], std, &mut rng),
                proj_b: Tensor::zeros(&[d]),
            });
        }
        LoopedModel {
            cfg,
            wte,
            layers,
            lnf_g: Tensor::full(&[d], T::ONE),
            lnf_b: Tensor::zeros(&[d]),
            head_w: Tensor::randn_trunc(&[d, v], std, &mut rng),
            head_b: Tensor::zeros(&[v]),
        }
    }

    /// Parameters with their canonical names, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![("wte".into(), &self.wte)];
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, t) in [
                ("ln1.g", &l.ln1_g),
                ("ln1.b", &l.ln1_b),
                ("attn.wq", &l.wq),
                ("attn.bq", &l.bq),
                ("attn.wk", &l.wk),
                ("attn.bk", &l.bk),
                ("attn.wv", &l.wv),
                ("attn.bv", &l.bv),
                ("attn.wo", &l.wo),
                ("attn.bo", &l.bo),
                ("ln2.g", &l.ln2_g),
                ("ln2.b", &l.ln2_b),
                ("mlp.fc_w", &l.fc_w),
                ("mlp.fc_b", &l.fc_b),
                ("mlp.proj_w", &l.proj_w),
                ("mlp.proj_b", &l.proj_b),
            ] {
                out.push((format!("block.{i}.{suffix}"), t));
            }
        }
        out.push(("lnf.g".into(), &self.lnf_g));
        out.push(("lnf.b".into(), &self.lnf_b));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.wte];
        for l in self.layers.iter_mut() {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.fc_w,
                &mut l.fc_b,
                &mut l.proj_w,
                &mut l.proj_b,
            ]);
        }
        out.extend([
            &mut self.lnf_g,
            &mut self.lnf_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every parameter from a named list (checkpoint order not
    /// required; names must match exactly).
    pub fn load_params(&mut self, params: &[(String, Tensor<f32>)]) -> Result<(), ModelError> {
        let expected: Vec<String> = self.named_params().iter().map(|(n, _)| n.clone()).collect();
        if params.len() != expected.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, incoming) in params {
            let slot_idx = expected
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| ModelError::ParamMismatch(format!("unknown tensor {name}")))?;
            let mut slots = self.params_mut();
            let slot = &mut slots[slot_idx];
            if slot.shape() != incoming.shape() {
                return Err(ModelError::ParamMismatch(format!(
                    "{name}: shape {:?} vs {:?}",
                    incoming.shape(),
                    slot.shape()
                )));
            }
            **slot = Tensor::new(
                incoming.shape().to_vec(),
                incoming.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
            );
        }
        Ok(())
    }

    /// Stages every parameter as a tape leaf.
    pub fn stage(&self, tape: &mut Tape<T>) -> TapedParams {
        TapedParams {
            wte: tape.leaf(self.wte.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| TapedLayer {
                    ln1_g: tape.leaf(l.ln1_g.clone()),
                    ln1_b: tape.leaf(l.ln1_b.clone()),
                    wq: tape.leaf(l.wq.clone()),
                    bq: tape.leaf(l.bq.clone()),
                    wk: tape.leaf(l.wk.clone()),
                    bk: tape.leaf(l.bk.clone()),
                    wv: tape.leaf(l.wv.clone()),
                    bv: tape.leaf(l.bv.clone()),
                    wo: tape.leaf(l.wo.clone()),
                    bo: tape.leaf(l.bo.clone()),
                    ln2_g: tape.leaf(l.ln2_g.clone()),
                    ln2_b: tape.leaf(l.ln2_b.clone()),
                    fc_w: tape.leaf(l.fc_w.clone()),
                    fc_b: tape.leaf(l.fc_b.clone()),
                    proj_w: tape.leaf(l.proj_w.clone()),
                    proj_b: tape.leaf(l.proj_b.clone()),
                })
                .collect(),
            lnf_g: tape.leaf(self.lnf_g.clone()),
            lnf_b: tape.leaf(self.lnf_b.clone()),
            head_w: tape.leaf(self.head_w.clone()),
            head_b: tape.leaf(self.head_b.clone()),
        }
    }

    /// Gradients of all parameters after a backward pass, in checkpoint
    /// order; `None` where no gradient flowed.
    pub fn collect_grads(&self, tape: &Tape<T>, p: &TapedParams) -> Vec<Option<Tensor<T>>> {
        let mut vars: Vec<Var> = vec![p.wte];
        for l in &p.layers {
            vars.extend([
                l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_g,
                l.ln2_b, l.fc_w, l.fc_b, l.proj_w, l.proj_b,
            ]);
        }
        vars.extend([p.lnf_g, p.lnf_b, p.head_w, p.head_b]);
        vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }

    /// Token embedding lookup; no positional term exists to add.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        tokens: &TokenBatch,
    ) -> Result<Var, ModelError> {
        Ok(tape.embed(p.wte, &tokens.ids, tokens.batch, tokens.len)?)
    }

    fn attention(
        &self,
        tape: &mut Tape<T>,
        l: &TapedLayer,
        x: Var,
        batch: usize,
        len: usize,
    ) -> Result<Var, ModelError> {
        let d = self.cfg.embed_dim;
        let h = self.cfg.heads;
        let hd = self.cfg.head_dim();
        let project = |tape: &mut Tape<T>, w, b| -> Result<Var, ModelError> {
            let y = tape.matmul(x, w)?;
            let y = tape.add_bias(y, b);
            let y = tape.reshape(y, &[batch, len, h, hd]);
            Ok(tape.swap_axes_12(y)) // [batch, heads, len, head_dim]
        };
        let q = project(tape, l.wq, l.bq)?;
        let k = project(tape, l.wk, l.bk)?;
        let v = project(tape, l.wv, l.bv)?;
        let kt = tape.transpose_last(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, T::from_f64(1.0 / (hd as f64).sqrt()));
        let probs = tape.softmax_rows(scores, true);
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.swap_axes_12(ctx);
        let ctx = tape.reshape(ctx, &[batch, len, d]);
        let out = tape.matmul(ctx, l.wo)?;
        Ok(tape.add_bias(out, l.bo))
    }

    /// One pass through the whole block (`block_depth` pre-norm residual
    /// layers with strictly causal attention).
    pub fn block_forward(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        h: Var,
    ) -> Result<Var, ModelError> {
        let shape = tape.value(h).shape().to_vec();
        let (batch, len) = (shape[0], shape[1]);
        if len > self.cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.cfg.max_seq_len,
            });
        }
        let mut h = h;
        for l in &p.layers {
            let normed = tape.layer_norm(h, l.ln1_g, l.ln1_b);
            let attn = self.attention(tape, l, normed, batch, len)?;
            h = tape.add(h, attn);
            let normed = tape.layer_norm(h, l.ln2_g, l.ln2_b);
            let up = tape.matmul(normed, l.fc_w)?;
            let up = tape.add_bias(up, l.fc_b);
            let act = tape.gelu(up);
            let down = tape.matmul(act, l.proj_w)?;
            let down = tape.add_bias(down, l.proj_b);
            h = tape.add(h, down);
        }
        Ok(h)
    }

    /// Final norm plus the output projection; applied once after the
    /// loop (and per step when tracing the stopping criterion).
    pub fn head_forward(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        h: Var,
    ) -> Result<Var, ModelError> {
        let normed = tape.layer_norm(h, p.lnf_g, p.lnf_b);
        let logits = tape.matmul(normed, p.head_w)?;
        Ok(tape.add_bias(logits, p.head_b))
    }

    /// Applies the block `t` times from a zero initial state with the
    /// input embedding injected each iteration (when configured), then
    /// decodes once through the final norm and output head.
    pub fn loop_forward(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        tokens: &TokenBatch,
        t: usize,
    ) -> Result<Var, ModelError> {
        let hidden = self.loop_hidden(tape, p, tokens, t)?;
        self.head_forward(tape, p, hidden)
    }

    /// Like [`Self::loop_forward`] but emits the logits of every
    /// iteration 1..=t, for the stopping criterion.
    pub fn loop_forward_steps(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        tokens: &TokenBatch,
        t: usize,
    ) -> Result<Vec<Var>, ModelError> {
        if t < 1 {
            return Err(ModelError::ZeroLoopSteps);
        }
        let e = self.embed_tokens(tape, p, tokens)?;
        let mut out = Vec::with_capacity(t);
        let mut h: Option<Var> = None;
        for _ in 0..t {
            let x = match h {
                None => e,
                Some(prev) if self.cfg.input_injection => tape.add(prev, e),
                Some(prev) => prev,
            };
            let next = self.block_forward(tape, p, x)?;
            out.push(self.head_forward(tape, p, next)?);
            h = Some(next);
        }
        Ok(out)
    }

    fn loop_hidden(
        &self,
        tape: &mut Tape<T>,
        p: &TapedParams,
        tokens: &TokenBatch,
        t: usize,
    ) -> Result<Var, ModelError> {
        if t < 1 {
            return Err(ModelError::ZeroLoopSteps);
        }
        let e = self.embed_tokens(tape, p, tokens)?;
        let mut h: Option<Var> = None;
        for _ in 0..t {
            let x = match h {
                None => e,
                Some(prev) if self.cfg.input_injection => tape.add(prev, e),
                Some(prev) => prev,
            };
            h = Some(self.block_forward(tape, p, x)?);
        }
        Ok(h.expect("t >= 1"))
    }
}

/// Per-position argmax over the vocabulary; ties break to the lowest id.
pub fn decode_greedy<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<Tok>> {
    let v = logits.last_dim();
    let shape = logits.shape();
    assert_eq!(shape.len(), 3, "expected [batch, len, vocab] logits");
    let (batch, len) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut row = Vec::with_capacity(len);
        for l in 0..len {
            let base = (b * len + l) * v;
            let slice = &logits.data()[base..base + v];
            let mut best = 0usize;
            for (j, &x) in slice.iter().enumerate() {
                if x > slice[best] {
                    best = j;
                }
            }
            row.push(best as Tok);
        }
        out.push(row);
    }
    out
}

/// Stable hash of the fields that determine parameter shapes; stored in
/// checkpoints to catch loading a model into the wrong configuration.
pub fn model_config_hash(cfg: &ModelConfig) -> u64 {
    let text = format!(
        "vocab={};dim={};heads={};depth={};inject={}",
        cfg.vocab_size, cfg.embed_dim, cfg.heads, cfg.block_depth, cfg.input_injection
    );
    fnv1a64(text.as_bytes())
}
