//! Step-supervised looped training plus every baseline training mode as
//! a configuration variant. One run is fully determined by its config:
//! data, initialization, and evaluation all derive from the seed.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{fnv1a64, Checkpoint, CheckpointError};
use crate::inference::{self, ExecPolicy, InferError};
use crate::model::{LoopedModel, ModelConfig, ModelError, TokenBatch};
use crate::optim::{adamw_step, cosine_lr, AdamWParams, OptimError, OptimizerState};
use crate::programs::TaskId;
use crate::tape::{Tape, Var};
use crate::taskgen::{
    align_batch, curriculum_tick, derive_seed, sample_instance, CurriculumState, EncodingMode,
    GenOptions, StepSchedule, TaskInstance,
};
use crate::vocab::{Tok, VOCAB_SIZE};

/// Fixed loop count for the weight-tied next-token baseline.
pub const NTP_LOOP_STEPS: usize = 20;
/// Depth multiplier for the fixed-depth baselines when not overridden.
pub const FIXED_DEPTH_MULTIPLIER: usize = 20;

const DOMAIN_INIT: u64 = 0x11;
const DOMAIN_DATA: u64 = 0x22;
const DOMAIN_EVAL: u64 = 0x33;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch rows must share one padded length")]
    RaggedBatch,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Weight-tied block looped for the instance's ground-truth steps.
    LoopedAdaptive,
    /// Ablation: same, without re-adding the input embedding each step.
    LoopedAdaptiveNoInjection,
    /// Fixed-depth full-answer baseline.
    Fap,
    FapPause,
    /// Fixed-depth next-token baseline.
    Ntp,
    NtpPause,
    /// Weight-tied block looped a fixed 20 times, next-token trained.
    NtpLoop,
}

impl TrainMode {
    pub const ALL: [TrainMode; 7] = [
        TrainMode::LoopedAdaptive,
        TrainMode::LoopedAdaptiveNoInjection,
        TrainMode::Fap,
        TrainMode::FapPause,
        TrainMode::Ntp,
        TrainMode::NtpPause,
        TrainMode::NtpLoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::LoopedAdaptive => "looped_adaptive",
            TrainMode::LoopedAdaptiveNoInjection => "looped_adaptive_no_injection",
            TrainMode::Fap => "fap",
            TrainMode::FapPause => "fap_pause",
            TrainMode::Ntp => "ntp",
            TrainMode::NtpPause => "ntp_pause",
            TrainMode::NtpLoop => "ntp_loop",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        TrainMode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn encoding(self) -> EncodingMode {
        match self {
            TrainMode::LoopedAdaptive | TrainMode::LoopedAdaptiveNoInjection | TrainMode::Fap => {
                EncodingMode::Fap
            }
            TrainMode::FapPause => EncodingMode::FapPause,
            TrainMode::Ntp | TrainMode::NtpLoop => EncodingMode::Ntp,
            TrainMode::NtpPause => EncodingMode::NtpPause,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(
            self,
            TrainMode::LoopedAdaptive | TrainMode::LoopedAdaptiveNoInjection
        )
    }
}

/// Per-task block depth of the looped decoder.
pub fn default_block_depth(task: TaskId) -> usize {
    match task {
        TaskId::Parity => 1,
        TaskId::Copy => 2,
        TaskId::Addition | TaskId::BinarySum | TaskId::UniqueSet => 3,
        TaskId::Multiplication => 4,
    }
}

/// Per-task curriculum interval for the full-scale configuration.
pub fn full_scale_interval(task: TaskId) -> usize {
    match task {
        TaskId::Addition => 1600,
        TaskId::Multiplication => 500,
        _ => 1000,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskId,
    pub mode: TrainMode,
    pub dim: usize,
    pub heads: usize,
    pub block_depth: usize,
    pub batch: usize,
    pub steps: u64,
    pub interval: usize,
    pub ceiling: usize,
    pub seed: u64,
    pub inject: bool,
    pub pause_tokens: usize,
    pub step_schedule: StepSchedule,
    /// Total depth of the fixed-depth baselines; `None` resolves to
    /// 20 × block_depth.
    pub fixed_depth: Option<usize>,
    pub clip: bool,
    pub padding_slack: usize,
    pub eval_every: u64,
    pub eval_lengths: Vec<usize>,
    pub eval_samples: usize,
    pub checkpoint_every: u64,
    pub max_seq_len: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: a configuration small enough to train on a
    /// CPU in minutes.
    pub fn desk(task: TaskId, mode: TrainMode) -> Self {
        TrainConfig {
            task,
            mode,
            dim: 64,
            heads: 8,
            block_depth: default_block_depth(task),
            batch: 32,
            steps: 8_000,
            interval: 250,
            ceiling: 8,
            seed: 0,
            inject: true,
            pause_tokens: 20,
            step_schedule: StepSchedule::TaskLength,
            fixed_depth: None,
            clip: false,
            padding_slack: 0,
            eval_every: 500,
            eval_lengths: vec![4, 8, 10, 12],
            eval_samples: 256,
            checkpoint_every: 0,
            max_seq_len: 256,
        }
    }

    /// The full-scale configuration the tasks were originally run at;
    /// hours of GPU-class compute, kept as a named preset.
    pub fn full_scale(task: TaskId, mode: TrainMode) -> Self {
        TrainConfig {
            dim: 256,
            batch: 64,
            steps: 100_000,
            interval: full_scale_interval(task),
            ceiling: 19,
            eval_lengths: vec![10, 20, 30, 40, 50],
            eval_samples: 1024,
            ..TrainConfig::desk(task, mode)
        }
    }

    pub fn effective_injection(&self) -> bool {
        match self.mode {
            TrainMode::LoopedAdaptiveNoInjection => false,
            _ => self.inject,
        }
    }

    /// Depth of the instantiated block: the looped modes keep one block,
    /// the fixed-depth baselines build the whole stack.
    pub fn model_depth(&self) -> usize {
        match self.mode {
            TrainMode::LoopedAdaptive
            | TrainMode::LoopedAdaptiveNoInjection
            | TrainMode::NtpLoop => self.block_depth,
            _ => self
                .fixed_depth
                .unwrap_or(FIXED_DEPTH_MULTIPLIER * self.block_depth),
        }
    }

    /// Loop iterations for a row when the mode is not adaptive.
    pub fn fixed_loop_steps(&self) -> usize {
        match self.mode {
            TrainMode::NtpLoop => NTP_LOOP_STEPS,
            _ => 1,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(VOCAB_SIZE, self.dim, self.heads, self.model_depth());
        cfg.max_seq_len = self.max_seq_len;
        cfg.input_injection = self.effective_injection();
        cfg
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            mode: self.mode.encoding(),
            schedule: self.step_schedule,
            pause_tokens: self.pause_tokens,
            padding_slack: self.padding_slack,
        }
    }

    /// Canonical key=value rendering; this exact text is stored in
    /// checkpoints and hashed into every CSV header.
    pub fn to_text(&self) -> String {
        let lengths = self
            .eval_lengths
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let fixed = match self.fixed_depth {
            Some(d) => d.to_string(),
            None => "auto".to_string(),
        };
        format!(
            "task = {}\nmode = {}\ndim = {}\nheads = {}\nblock_depth = {}\nbatch = {}\n\
             steps = {}\ninterval = {}\nceiling = {}\nseed = {}\ninject = {}\n\
             pause_tokens = {}\nstep_schedule = {}\nfixed_depth = {}\nclip = {}\n\
             padding_slack = {}\neval_every = {}\neval_lengths = {}\neval_samples = {}\n\
             checkpoint_every = {}\nmax_seq_len = {}\n",
            self.task.name(),
            self.mode.name(),
            self.dim,
            self.heads,
            self.block_depth,
            self.batch,
            self.steps,
            self.interval,
            self.ceiling,
            self.seed,
            self.inject,
            self.pause_tokens,
            self.step_schedule.name(),
            fixed,
            self.clip,
            self.padding_slack,
            self.eval_every,
            lengths,
            self.eval_samples,
            self.checkpoint_every,
            self.max_seq_len,
        )
    }

    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Parses key=value text (the format [`Self::to_text`] emits and the
    /// CLI config files use). Unknown keys are rejected by name.
    pub fn from_text(text: &str) -> Result<TrainConfig, TrainError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let find = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let task = match find("task") {
            Some(v) => TaskId::parse(&v)
                .ok_or_else(|| TrainError::Config(format!("unknown task {v:?}")))?,
            None => return Err(TrainError::Config("missing required key task".into())),
        };
        let mode = match find("mode") {
            Some(v) => TrainMode::parse(&v)
                .ok_or_else(|| TrainError::Config(format!("unknown mode {v:?}")))?,
            None => TrainMode::LoopedAdaptive,
        };
        let mut cfg = TrainConfig::desk(task, mode);

        fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
            v.parse()
                .map_err(|_| TrainError::Config(format!("bad value {v:?} for key {key}")))
        }
        fn parse_bool(key: &str, v: &str) -> Result<bool, TrainError> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(TrainError::Config(format!(
                    "bad value {v:?} for key {key} (expected true/false)"
                ))),
            }
        }

        for (k, v) in &pairs {
            match k.as_str() {
                "task" | "mode" => {}
                "dim" => cfg.dim = parse_num(k, v)?,
                "heads" => cfg.heads = parse_num(k, v)?,
                "block_depth" => cfg.block_depth = parse_num(k, v)?,
                "batch" => cfg.batch = parse_num(k, v)?,
                "steps" => cfg.steps = parse_num(k, v)?,
                "interval" => cfg.interval = parse_num(k, v)?,
                "ceiling" => cfg.ceiling = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "inject" => cfg.inject = parse_bool(k, v)?,
                "pause_tokens" => cfg.pause_tokens = parse_num(k, v)?,
                "step_schedule" => {
                    cfg.step_schedule = match v.as_str() {
                        "task_length" => StepSchedule::TaskLength,
                        "proposition" => StepSchedule::Proposition,
                        _ => {
                            return Err(TrainError::Config(format!(
                                "bad value {v:?} for key step_schedule"
                            )))
                        }
                    }
                }
                "fixed_depth" => {
                    cfg.fixed_depth = if v == "auto" {
                        None
                    } else {
                        Some(parse_num(k, v)?)
                    }
                }
                "clip" => cfg.clip = parse_bool(k, v)?,
                "padding_slack" => cfg.padding_slack = parse_num(k, v)?,
                "eval_every" => cfg.eval_every = parse_num(k, v)?,
                "eval_lengths" => {
                    cfg.eval_lengths = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_num("eval_lengths", s.trim()))
                        .collect::<Result<_, _>>()?
                }
                "eval_samples" => cfg.eval_samples = parse_num(k, v)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_num(k, v)?,
                "max_seq_len" => cfg.max_seq_len = parse_num(k, v)?,
                other => {
                    return Err(TrainError::Config(format!("unknown config key {other:?}")))
                }
            }
        }
        if cfg.dim % cfg.heads != 0 {
            return Err(TrainError::Config(format!(
                "dim {} must be divisible by heads {}",
                cfg.dim, cfg.heads
            )));
        }
        if cfg.batch == 0 || cfg.ceiling == 0 {
            return Err(TrainError::Config("batch and ceiling must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f32,
    pub lr: f64,
    pub cur_max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub length: usize,
    pub exact_match: f64,
}

/// Append-only training log; serialized as CSV.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub config_hash: u64,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainReport {
    pub fn train_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={:016x} seed={}\nstep,loss,lr,cur_max_len\n",
            self.config_hash, self.seed
        );
        for r in &self.steps {
            out.push_str(&format!("{},{:.6},{:.8},{}\n", r.step, r.loss, r.lr, r.cur_max_len));
        }
        out
    }

    pub fn eval_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={:016x} seed={}\nstep,length,exact_match\n",
            self.config_hash, self.seed
        );
        for r in &self.evals {
            out.push_str(&format!("{},{},{:.6}\n", r.step, r.length, r.exact_match));
        }
        out
    }
}

/// Partitions batch rows by their ground-truth step count, preserving row
/// order within groups; groups appear in first-occurrence order.
pub fn group_by_steps(batch: &[TaskInstance]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, inst) in batch.iter().enumerate() {
        match groups.iter_mut().find(|(t, _)| *t == inst.steps) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((inst.steps, vec![i])),
        }
    }
    groups
}

fn flatten_targets(batch: &[&TaskInstance]) -> (Vec<u32>, Vec<u8>) {
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for inst in batch {
        targets.extend(inst.target.0.iter().map(|&t| t as u32));
        mask.extend_from_slice(&inst.loss_mask);
    }
    (targets, mask)
}

/// Builds the per-group forward passes and the supervised-position
/// weighted loss on a fresh tape. Shared by training and the frozen-model
/// loss check.
fn forward_batch(
    model: &LoopedModel<f32>,
    batch: &[TaskInstance],
    adaptive: bool,
    fixed_steps: usize,
) -> Result<(Tape<f32>, crate::model::TapedParams, Var), TrainError> {
    let len = batch.first().map(|b| b.total_length()).unwrap_or(0);
    if batch.iter().any(|b| b.total_length() != len) {
        return Err(TrainError::RaggedBatch);
    }
    let mut tape = Tape::new();
    let p = model.stage(&mut tape);
    let groups = if adaptive {
        group_by_steps(batch)
    } else {
        vec![(fixed_steps, (0..batch.len()).collect())]
    };
    let total_supervised: usize = batch
        .iter()
        .map(|b| b.loss_mask.iter().filter(|&&m| m != 0).count())
        .sum();
    let mut terms: Vec<(Var, f32)> = Vec::with_capacity(groups.len());
    for (t, rows) in &groups {
        let insts: Vec<&TaskInstance> = rows.iter().map(|&i| &batch[i]).collect();
        let tok_rows: Vec<&[Tok]> = insts.iter().map(|i| i.input.as_slice()).collect();
        let tokens = TokenBatch::from_rows(&tok_rows);
        let (targets, mask) = flatten_targets(&insts);
        let group_supervised = mask.iter().filter(|&&m| m != 0).count();
        let logits = model.loop_forward(&mut tape, &p, &tokens, *t)?;
        let ce = tape
            .cross_entropy_masked(logits, &targets, &mask)
            .map_err(ModelError::Diff)?;
        terms.push((ce, group_supervised as f32 / total_supervised as f32));
    }
    let loss = tape.weighted_sum(&terms);
    Ok((tape, p, loss))
}

/// Mean masked cross-entropy of a frozen model over a batch; no update.
pub fn batch_loss(
    model: &LoopedModel<f32>,
    batch: &[TaskInstance],
    adaptive: bool,
    fixed_steps: usize,
) -> Result<f32, TrainError> {
    let (tape, _, loss) = forward_batch(model, batch, adaptive, fixed_steps)?;
    Ok(tape.value(loss).item())
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: LoopedModel<f32>,
    pub opt: OptimizerState<f32>,
    pub hp: AdamWParams,
    pub start_step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Self {
        let init_seed = derive_seed(&[cfg.seed, DOMAIN_INIT]);
        let model = LoopedModel::init(cfg.model_config(), init_seed);
        let refs: Vec<&crate::tensor::Tensor<f32>> =
            model.named_params().iter().map(|(_, t)| *t).collect();
        let opt = OptimizerState::new_like(&refs);
        let hp = AdamWParams {
            clip_norm: if cfg.clip { Some(1.0) } else { None },
            ..AdamWParams::default()
        };
        Trainer {
            cfg,
            model,
            opt,
            hp,
            start_step: 0,
        }
    }

    /// Rebuilds a run from a checkpoint; training resumes at the stored
    /// step and reproduces the uninterrupted trajectory bit for bit.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let cfg = TrainConfig::from_text(&ckpt.config_text)?;
        if ckpt.config_hash != cfg.config_hash() {
            return Err(TrainError::Config(
                "checkpoint config hash does not match its config text".into(),
            ));
        }
        let mut trainer = Trainer::new(cfg);
        trainer.model.load_params(&ckpt.params)?;
        if let Some(opt) = &ckpt.opt {
            trainer.opt = opt.clone();
        }
        trainer.start_step = ckpt.step;
        Ok(trainer)
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint {
            config_hash: self.cfg.config_hash(),
            config_text: self.cfg.to_text(),
            step,
            params: self
                .model
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            opt: Some(self.opt.clone()),
        }
    }

    /// The training batch for a global step; every row derives its own
    /// stream from (seed, step, row), so batches are reproducible with no
    /// sampler state.
    pub fn sample_batch(&self, step: u64, cur_max_len: usize) -> Vec<TaskInstance> {
        let opts = self.cfg.gen_options();
        let mut rows: Vec<TaskInstance> = (0..self.cfg.batch)
            .map(|r| {
                let seed = derive_seed(&[self.cfg.seed, DOMAIN_DATA, step, r as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.gen_range(1..=cur_max_len);
                sample_instance(self.cfg.task, n, &mut rng, &opts)
            })
            .collect();
        align_batch(&mut rows);
        rows
    }

    /// One optimization step on a prepared batch. Returns the loss.
    pub fn train_step(&mut self, batch: &[TaskInstance], lr: f64) -> Result<f32, TrainError> {
        let (mut tape, p, loss) = forward_batch(
            &self.model,
            batch,
            self.cfg.mode.is_adaptive(),
            self.cfg.fixed_loop_steps(),
        )?;
        let loss_val = tape.value(loss).item();
        tape.backward(loss).map_err(ModelError::Diff)?;
        let grads = self.model.collect_grads(&tape, &p);
        drop(tape);
        let mut params = self.model.params_mut();
        adamw_step(&mut params, &grads, &mut self.opt, &self.hp, lr)?;
        Ok(loss_val)
    }

    /// Exact-match probe at one length, using the mode's own inference
    /// style (oracle-step looping, single pass, or autoregressive).
    pub fn evaluate(&self, length: usize, samples: usize, at_step: u64) -> Result<f64, TrainError> {
        let eval_seed = derive_seed(&[self.cfg.seed, DOMAIN_EVAL, at_step]);
        evaluate_model(&self.model, &self.cfg, length, samples, eval_seed)
    }

    /// Runs the configured number of steps (resuming mid-run when the
    /// trainer came from a checkpoint). Writes periodic checkpoints into
    /// `out_dir` when configured.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<TrainReport, TrainError> {
        let mut report = TrainReport {
            config_hash: self.cfg.config_hash(),
            seed: self.cfg.seed,
            ..TrainReport::default()
        };
        let curriculum = CurriculumState::new(self.cfg.interval, self.cfg.ceiling);
        let decay_start = curriculum.ceiling_step();
        for step in self.start_step..self.cfg.steps {
            let cur = curriculum_tick(&curriculum, step).current_max_length;
            let lr = cosine_lr(step, decay_start, self.cfg.steps);
            let batch = self.sample_batch(step, cur);
            let loss = self.train_step(&batch, lr)?;
            report.steps.push(StepRecord {
                step,
                loss,
                lr,
                cur_max_len: cur,
            });
            let done = step + 1;
            if self.cfg.eval_every > 0 && done % self.cfg.eval_every == 0 {
                for &len in &self.cfg.eval_lengths.clone() {
                    let em = self.evaluate(len, self.cfg.eval_samples, done)?;
                    report.evals.push(EvalRecord {
                        step: done,
                        length: len,
                        exact_match: em,
                    });
                }
            }
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0 {
                    self.to_checkpoint(done)
                        .save(&dir.join(format!("ckpt_{done}.bin")))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.to_checkpoint(self.cfg.steps)
                .save(&dir.join("ckpt_final.bin"))?;
        }
        Ok(report)
    }
}

/// Mode-aware evaluation of any model/config pair at one length.
pub fn evaluate_model(
    model: &LoopedModel<f32>,
    cfg: &TrainConfig,
    length: usize,
    samples: usize,
    eval_seed: u64,
) -> Result<f64, TrainError> {
    let instances =
        inference::gen_eval_instances(cfg.task, length, samples, eval_seed, &cfg.gen_options());
    let acc = match cfg.mode {
        TrainMode::LoopedAdaptive | TrainMode::LoopedAdaptiveNoInjection => {
            inference::eval_exact_match(model, &instances, ExecPolicy::Adaptive)?
        }
        TrainMode::Fap | TrainMode::FapPause => {
            inference::eval_exact_match(model, &instances, ExecPolicy::Fixed(1))?
        }
        TrainMode::Ntp | TrainMode::NtpPause => inference::eval_ntp(model, &instances, 1)?,
        TrainMode::NtpLoop => inference::eval_ntp(model, &instances, NTP_LOOP_STEPS)?,
    };
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let mut cfg = TrainConfig::desk(TaskId::Copy, TrainMode::NtpLoop);
        cfg.seed = 17;
        cfg.fixed_depth = Some(6);
        cfg.eval_lengths = vec![3, 9];
        let text = cfg.to_text();
        let back = TrainConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let err = TrainConfig::from_text("task = parity\nbogus_key = 3\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn missing_task_is_rejected() {
        assert!(TrainConfig::from_text("dim = 64\n").is_err());
    }

    #[test]
    fn group_by_steps_partitions() {
        let opts = GenOptions::default();
        let mk = |n: usize, seed: u64| {
            crate::taskgen::sample_instance_seeded(TaskId::Parity, n, seed, &opts)
        };
        let batch = vec![mk(2, 1), mk(2, 2), mk(5, 3)];
        let groups = group_by_steps(&batch);
        assert_eq!(groups, vec![(2, vec![0, 1]), (5, vec![2])]);
        let all_same = vec![mk(3, 1), mk(3, 2)];
        assert_eq!(group_by_steps(&all_same), vec![(3, vec![0, 1])]);
    }

    #[test]
    fn ntp_loop_instantiates_one_block() {
        let cfg = TrainConfig::desk(TaskId::Parity, TrainMode::NtpLoop);
        assert_eq!(cfg.model_depth(), cfg.block_depth);
        let trainer = Trainer::new(cfg);
        assert_eq!(trainer.model.layers.len(), 1);
    }

    #[test]
    fn fixed_depth_default_is_twenty_blocks() {
        let cfg = TrainConfig::desk(TaskId::Copy, TrainMode::Ntp);
        assert_eq!(cfg.model_depth(), 20 * cfg.block_depth);
        let explicit = TrainConfig {
            fixed_depth: Some(8),
            ..cfg
        };
        assert_eq!(explicit.model_depth(), 8);
    }

    #[test]
    fn initial_loss_is_near_uniform_entropy() {
        let mut cfg = TrainConfig::desk(TaskId::Parity, TrainMode::LoopedAdaptive);
        cfg.dim = 32;
        cfg.heads = 4;
        cfg.batch = 8;
        let trainer = Trainer::new(cfg);
        let batch = trainer.sample_batch(0, 4);
        let loss = batch_loss(&trainer.model, &batch, true, 1).unwrap();
        let uniform = (VOCAB_SIZE as f32).ln();
        assert!(
            (loss - uniform).abs() < 0.2,
            "loss {loss} vs ln|V| {uniform}"
        );
    }

    #[test]
    fn masked_positions_do_not_move_the_loss() {
        let mut cfg = TrainConfig::desk(TaskId::Parity, TrainMode::LoopedAdaptive);
        cfg.dim = 32;
        cfg.heads = 4;
        let trainer = Trainer::new(cfg);
        let mut batch = trainer.sample_batch(3, 4);
        let base = batch_loss(&trainer.model, &batch, true, 1).unwrap();
        // Corrupt a masked (ignored) target position.
        let victim = batch[0]
            .loss_mask
            .iter()
            .position(|&m| m == 0)
            .expect("has a masked position");
        batch[0].target.0[victim] = 1;
        let after = batch_loss(&trainer.model, &batch, true, 1).unwrap();
        assert_eq!(base.to_bits(), after.to_bits());
    }

    #[test]
    fn loss_is_weighted_mean_of_group_losses() {
        let mut cfg = TrainConfig::desk(TaskId::Parity, TrainMode::LoopedAdaptive);
        cfg.dim = 32;
        cfg.heads = 4;
        cfg.batch = 6;
        let trainer = Trainer::new(cfg);
        let batch = trainer.sample_batch(1, 5);
        let whole = batch_loss(&trainer.model, &batch, true, 1).unwrap() as f64;
        let mut acc = 0.0f64;
        let mut total = 0usize;
        for (_, rows) in group_by_steps(&batch) {
            let group: Vec<TaskInstance> = rows.iter().map(|&i| batch[i].clone()).collect();
            let g_count: usize = group
                .iter()
                .map(|b| b.loss_mask.iter().filter(|&&m| m != 0).count())
                .sum();
            let g_loss = batch_loss(&trainer.model, &group, true, 1).unwrap() as f64;
            acc += g_loss * g_count as f64;
            total += g_count;
        }
        assert!((whole - acc / total as f64).abs() < 1e-6);
    }

    #[test]
    fn fap_and_looped_t1_match_at_init() {
        // With one constant loop step and a matching untied stack, the two
        // modes are the same architecture; identical seeds give identical
        // losses on identical data.
        let mut looped = TrainConfig::desk(TaskId::Parity, TrainMode::LoopedAdaptive);
        looped.dim = 32;
        looped.heads = 4;
        looped.batch = 4;
        let mut fap = looped.clone();
        fap.mode = TrainMode::Fap;
        fap.fixed_depth = Some(looped.block_depth);

        let tl = Trainer::new(looped);
        let tf = Trainer::new(fap);
        // n = 1 rows so the adaptive mode runs exactly one step.
        let batch = tl.sample_batch(0, 1);
        let a = batch_loss(&tl.model, &batch, true, 1).unwrap();
        let b = batch_loss(&tf.model, &batch, false, 1).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ragged_batch_is_rejected() {
        let opts = GenOptions::default();
        let batch = vec![
            crate::taskgen::sample_instance_seeded(TaskId::Parity, 2, 1, &opts),
            crate::taskgen::sample_instance_seeded(TaskId::Parity, 5, 2, &opts),
        ];
        let cfg = TrainConfig::desk(TaskId::Parity, TrainMode::LoopedAdaptive);
        let trainer = Trainer::new(cfg);
        assert!(matches!(
            batch_loss(&trainer.model, &batch, true, 1),
            Err(TrainError::RaggedBatch)
        ));
        let _ = trainer;
    }
}
