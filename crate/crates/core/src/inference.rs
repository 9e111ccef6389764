//! Adaptive-depth inference: run the trained looped model with either the
//! ground-truth step count or the maximum-confidence stopping rule, plus
//! the exact-match evaluation harness shared by training probes and the
//! command-line tools.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{decode_greedy, LoopedModel, ModelError, TokenBatch};
use crate::programs::TaskId;
use crate::tape::Tape;
use crate::taskgen::{derive_seed, sample_instance, GenOptions, TaskInstance};
use crate::tensor::Tensor;
use crate::vocab::{Tok, TokenSeq, TOK_EOQ};

/// Rows processed per forward pass; bounds tape memory during deep loops.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferError {
    #[error("prediction length {pred} does not match target length {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("maximum step count must be at least 1")]
    ZeroMaxSteps,
    #[error("query has no end-of-query marker")]
    NoEoq,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// When to stop the loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopCriterion {
    /// Run exactly the ground-truth number of steps.
    Oracle(usize),
    /// Run up to `t_max` steps and keep the step whose decoded output the
    /// logits are most confident about (lowest self cross-entropy over
    /// the answer region). Ties break to the earliest step.
    MaxConfidence { t_max: usize },
    /// Stop at the first step whose self cross-entropy drops below the
    /// threshold; falls back to `t_max`.
    CeThreshold { threshold: f64, t_max: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferResult {
    pub decoded: Vec<Vec<Tok>>,
    pub chosen_steps: Vec<usize>,
}

/// Mean self cross-entropy of greedy decoding over masked positions:
/// `logsumexp(z) - max(z)` per position.
fn self_ce_row(logits: &Tensor<f32>, row: usize, len: usize, mask: &[u8]) -> f64 {
    let v = logits.last_dim();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for l in 0..len {
        if mask[l] == 0 {
            continue;
        }
        let base = (row * len + l) * v;
        let slice = &logits.data()[base..base + v];
        let mx = slice.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = slice.iter().map(|&z| (z - mx).exp()).sum();
        total += (sum.ln()) as f64; // lse - max
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Positions at and after the end-of-query marker; the confidence region.
fn answer_region_mask(row: &[u32]) -> Result<Vec<u8>, InferError> {
    let eoq = row
        .iter()
        .position(|&t| t == TOK_EOQ as u32)
        .ok_or(InferError::NoEoq)?;
    Ok((0..row.len()).map(|i| (i >= eoq) as u8).collect())
}

/// Runs the model on a batch of queries under a stopping criterion.
/// Returns the greedy decode at the chosen step per row.
pub fn infer(
    model: &LoopedModel<f32>,
    tokens: &TokenBatch,
    criterion: &StopCriterion,
) -> Result<InferResult, InferError> {
    let mut decoded = Vec::with_capacity(tokens.batch);
    let mut chosen = Vec::with_capacity(tokens.batch);
    let rows: Vec<&[u32]> = (0..tokens.batch).map(|b| tokens.row(b)).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let toks_u16: Vec<Vec<Tok>> = chunk
            .iter()
            .map(|r| r.iter().map(|&t| t as Tok).collect())
            .collect();
        let refs: Vec<&[Tok]> = toks_u16.iter().map(|r| r.as_slice()).collect();
        let sub = TokenBatch::from_rows(&refs);
        let (mut d, mut c) = infer_chunk(model, &sub, criterion)?;
        decoded.append(&mut d);
        chosen.append(&mut c);
    }
    Ok(InferResult {
        decoded,
        chosen_steps: chosen,
    })
}

fn infer_chunk(
    model: &LoopedModel<f32>,
    tokens: &TokenBatch,
    criterion: &StopCriterion,
) -> Result<(Vec<Vec<Tok>>, Vec<usize>), InferError> {
    match *criterion {
        StopCriterion::Oracle(t) => {
            let mut tape = Tape::new();
            let p = model.stage(&mut tape);
            let logits = model.loop_forward(&mut tape, &p, tokens, t)?;
            Ok((decode_greedy(tape.value(logits)), vec![t; tokens.batch]))
        }
        StopCriterion::MaxConfidence { t_max } | StopCriterion::CeThreshold { t_max, .. } => {
            if t_max < 1 {
                return Err(InferError::ZeroMaxSteps);
            }
            let masks: Vec<Vec<u8>> = (0..tokens.batch)
                .map(|b| answer_region_mask(tokens.row(b)))
                .collect::<Result<_, _>>()?;
            let threshold = match *criterion {
                StopCriterion::CeThreshold { threshold, .. } => Some(threshold),
                _ => None,
            };
            let mut tape = Tape::new();
            let p = model.stage(&mut tape);
            let step_logits = model.loop_forward_steps(&mut tape, &p, tokens, t_max)?;
            let mut best_ce = vec![f64::INFINITY; tokens.batch];
            let mut best_step = vec![1usize; tokens.batch];
            let mut best_decode: Vec<Vec<Tok>> = vec![Vec::new(); tokens.batch];
            let mut frozen = vec![false; tokens.batch];
            for (ti, &lv) in step_logits.iter().enumerate() {
                let t = ti + 1;
                let logits = tape.value(lv);
                let decoded = decode_greedy(logits);
                for b in 0..tokens.batch {
                    if frozen[b] {
                        continue;
                    }
                    let ce = self_ce_row(logits, b, tokens.len, &masks[b]);
                    if ce < best_ce[b] {
                        best_ce[b] = ce;
                        best_step[b] = t;
                        best_decode[b] = decoded[b].clone();
                    }
                    if let Some(th) = threshold {
                        if ce <= th {
                            // First crossing wins for the threshold rule.
                            best_ce[b] = ce;
                            best_step[b] = t;
                            best_decode[b] = decoded[b].clone();
                            frozen[b] = true;
                        }
                    }
                }
            }
            Ok((best_decode, best_step))
        }
    }
}

/// True iff `pred` equals `target` at every supervised position.
pub fn exact_match(pred: &[Tok], target: &TokenSeq, mask: &[u8]) -> Result<bool, InferError> {
    if pred.len() != target.len() || mask.len() != target.len() {
        return Err(InferError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target.0.iter())
        .zip(mask)
        .all(|((&p, &t), &m)| m == 0 || p == t))
}

/// Deterministic evaluation set: `samples` fresh instances of one length.
pub fn gen_eval_instances(
    task: TaskId,
    length: usize,
    samples: usize,
    seed: u64,
    gen: &GenOptions,
) -> Vec<TaskInstance> {
    (0..samples)
        .map(|i| {
            let s = derive_seed(&[seed, length as u64, i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            sample_instance(task, length, &mut rng, gen)
        })
        .collect()
}

fn batch_of(instances: &[&TaskInstance]) -> TokenBatch {
    let rows: Vec<&[Tok]> = instances.iter().map(|i| i.input.as_slice()).collect();
    TokenBatch::from_rows(&rows)
}

/// Groups instances that can share one forward pass (equal step count and
/// padded length), preserving order within groups.
fn exec_groups(instances: &[TaskInstance]) -> Vec<Vec<&TaskInstance>> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut groups: Vec<Vec<&TaskInstance>> = Vec::new();
    for inst in instances {
        let key = (inst.steps, inst.total_length());
        match keys.iter().position(|&k| k == key) {
            Some(i) => groups[i].push(inst),
            None => {
                keys.push(key);
                groups.push(vec![inst]);
            }
        }
    }
    groups
}

/// How many loop iterations evaluation runs per instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecPolicy {
    /// The instance's ground-truth step count (oracle stopping).
    Adaptive,
    /// A fixed count; 1 for the plain fixed-depth baselines.
    Fixed(usize),
}

/// Mean exact match over instances with full-answer inputs, decoding at
/// the policy's step count.
pub fn eval_exact_match(
    model: &LoopedModel<f32>,
    instances: &[TaskInstance],
    policy: ExecPolicy,
) -> Result<f64, InferError> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for group in exec_groups(instances) {
        let t = match policy {
            ExecPolicy::Adaptive => group[0].steps,
            ExecPolicy::Fixed(t) => t,
        };
        for chunk in group.chunks(EVAL_CHUNK) {
            let tokens = batch_of(chunk);
            let res = infer(model, &tokens, &StopCriterion::Oracle(t))?;
            for (b, inst) in chunk.iter().enumerate() {
                if exact_match(&res.decoded[b], &inst.target, &inst.loss_mask)? {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}

#[derive(Clone, Debug)]
pub struct MaxConfOutcome {
    pub accuracy: f64,
    pub chosen_steps: Vec<usize>,
    pub per_instance: Vec<bool>,
}

/// Exact match when the stopping step is picked by maximum confidence.
pub fn eval_max_confidence(
    model: &LoopedModel<f32>,
    instances: &[TaskInstance],
    t_max: usize,
) -> Result<MaxConfOutcome, InferError> {
    let mut chosen_steps = Vec::with_capacity(instances.len());
    let mut per_instance = Vec::with_capacity(instances.len());
    for group in exec_groups(instances) {
        for chunk in group.chunks(EVAL_CHUNK) {
            let tokens = batch_of(chunk);
            let res = infer(model, &tokens, &StopCriterion::MaxConfidence { t_max })?;
            for (b, inst) in chunk.iter().enumerate() {
                chosen_steps.push(res.chosen_steps[b]);
                per_instance.push(exact_match(&res.decoded[b], &inst.target, &inst.loss_mask)?);
            }
        }
    }
    let accuracy =
        per_instance.iter().filter(|&&h| h).count() as f64 / per_instance.len().max(1) as f64;
    Ok(MaxConfOutcome {
        accuracy,
        chosen_steps,
        per_instance,
    })
}

/// Per-step confidence and accuracy curves for a set of instances of one
/// problem; the data behind the stopping-criterion plots.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingCurve {
    /// Mean self cross-entropy per step (index 0 is step 1).
    pub self_ce: Vec<f64>,
    /// Mean exact match per step.
    pub exact_match: Vec<f64>,
    /// Argmin of the mean self cross-entropy; ties to the earliest step.
    pub chosen_step: usize,
}

impl StoppingCurve {
    pub fn t_max(&self) -> usize {
        self.self_ce.len()
    }

    /// CSV rows `step,self_ce,exact_match`.
    pub fn csv(&self) -> String {
        let mut out = String::from("step,self_ce,exact_match\n");
        for (i, (ce, em)) in self.self_ce.iter().zip(&self.exact_match).enumerate() {
            out.push_str(&format!("{},{:.6},{:.6}\n", i + 1, ce, em));
        }
        out
    }
}

pub fn stopping_curve(
    model: &LoopedModel<f32>,
    instances: &[TaskInstance],
    t_max: usize,
) -> Result<StoppingCurve, InferError> {
    if t_max < 1 {
        return Err(InferError::ZeroMaxSteps);
    }
    let mut ce_sums = vec![0.0f64; t_max];
    let mut em_sums = vec![0.0f64; t_max];
    let total = instances.len().max(1);
    for group in exec_groups(instances) {
        for chunk in group.chunks(EVAL_CHUNK) {
            let tokens = batch_of(chunk);
            let mut tape = Tape::new();
            let p = model.stage(&mut tape);
            let step_logits = model.loop_forward_steps(&mut tape, &p, &tokens, t_max)?;
            for (ti, &lv) in step_logits.iter().enumerate() {
                let logits = tape.value(lv);
                let decoded = decode_greedy(logits);
                for (b, inst) in chunk.iter().enumerate() {
                    ce_sums[ti] += self_ce_row(logits, b, tokens.len, &inst.loss_mask);
                    if exact_match(&decoded[b], &inst.target, &inst.loss_mask)? {
                        em_sums[ti] += 1.0;
                    }
                }
            }
        }
    }
    let self_ce: Vec<f64> = ce_sums.iter().map(|s| s / total as f64).collect();
    let exact: Vec<f64> = em_sums.iter().map(|s| s / total as f64).collect();
    let chosen_step = self_ce
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i + 1)
        .unwrap_or(1);
    Ok(StoppingCurve {
        self_ce,
        exact_match: exact,
        chosen_step,
    })
}

/// Autoregressive greedy generation for next-token-trained models: feeds
/// the query (and any pause tokens), then appends one argmax token at a
/// time until each row reaches its full length. Returns mean exact match
/// against the supervised positions.
pub fn eval_ntp(
    model: &LoopedModel<f32>,
    instances: &[TaskInstance],
    loop_steps: usize,
) -> Result<f64, InferError> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for group in exec_groups(instances) {
        for chunk in group.chunks(EVAL_CHUNK) {
            // The prefix runs through the last unsupervised input token:
            // everything up to and including the position of the first
            // supervised prediction.
            let total = chunk[0].total_length();
            let prefix_len = chunk[0].answer_start() + 1;
            let mut rows: Vec<Vec<Tok>> = chunk
                .iter()
                .map(|i| i.input.0[..prefix_len].to_vec())
                .collect();
            while rows[0].len() < total {
                let refs: Vec<&[Tok]> = rows.iter().map(|r| r.as_slice()).collect();
                let tokens = TokenBatch::from_rows(&refs);
                let mut tape = Tape::new();
                let p = model.stage(&mut tape);
                let logits = model.loop_forward(&mut tape, &p, &tokens, loop_steps)?;
                let decoded = decode_greedy(tape.value(logits));
                for (row, d) in rows.iter_mut().zip(&decoded) {
                    row.push(*d.last().expect("nonempty row"));
                }
            }
            for (inst, row) in chunk.iter().zip(&rows) {
                // Compare generated continuations where the target is
                // supervised: position i predicts token i + 1.
                let ok = (0..total - 1).all(|i| {
                    inst.loss_mask[i] == 0 || row[i + 1] == inst.target.0[i]
                });
                if ok {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}

/// Reference-program prediction for a full-answer instance; the loop
/// programs need their own step counts (addition takes n + 1).
pub fn reference_predict(inst: &TaskInstance) -> Option<TokenSeq> {
    let n = inst.problem_length;
    match inst.task {
        TaskId::Parity => crate::programs::parity_loop(&inst.input, n).ok(),
        TaskId::Copy => crate::programs::copy_loop(&inst.input, n).ok(),
        TaskId::Addition => crate::programs::addition_loop(&inst.input, n + 1).ok(),
        _ => None,
    }
}
