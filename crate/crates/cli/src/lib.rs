//! Command implementations behind the `looped-tf` binary: train, eval,
//! stopcurve, oracle-check, and sweep. Exit codes: 0 success, 1
//! configuration/input error, 2 verification failure.

pub mod svg;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use looped_tf::checkpoint::{manifest, Checkpoint};
use looped_tf::inference::{
    self, eval_max_confidence, eval_ntp, exact_match, gen_eval_instances, reference_predict,
    stopping_curve, ExecPolicy,
};
use looped_tf::model::LoopedModel;
use looped_tf::programs::TaskId;
use looped_tf::taskgen::derive_seed;
use looped_tf::trainer::{evaluate_model, TrainConfig, TrainMode, Trainer, NTP_LOOP_STEPS};
use looped_tf::verify;

/// Environment variable naming the directory all outputs land under.
pub const OUT_ROOT_ENV: &str = "LOOPED_TF_OUT";

const DOMAIN_EVAL_CLI: u64 = 0x51;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error on {path}: {err}")]
    Io { path: String, err: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            err: err.to_string(),
        }
    }
}

/// Resolves an output directory against the `LOOPED_TF_OUT` root and
/// creates it.
pub fn resolve_out_dir(flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let base = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let dir = match flag {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => base.join(p),
        None => base,
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = read_file(path)?;
    TrainConfig::from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `train`: runs a configuration end to end, writing the training CSV,
/// the evaluation CSV, the parameter manifest, and checkpoints.
pub fn cmd_train(
    config_path: Option<&Path>,
    resume: Option<&Path>,
    out: Option<&Path>,
    dry_run: bool,
) -> Result<(), CliError> {
    let mut trainer = match (config_path, resume) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--config and --resume are mutually exclusive".into(),
            ))
        }
        (Some(cfg_path), None) => Trainer::new(load_config(cfg_path)?),
        (None, Some(ckpt_path)) => {
            let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::io(ckpt_path, e))?;
            Trainer::from_checkpoint(&ckpt).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, None) => {
            return Err(CliError::Config(
                "train needs --config <file> or --resume <checkpoint>".into(),
            ))
        }
    };
    if dry_run {
        print!("{}", trainer.cfg.to_text());
        println!("config_hash = {:016x}", trainer.cfg.config_hash());
        return Ok(());
    }
    let dir = resolve_out_dir(out)?;
    let report = trainer
        .run(Some(&dir))
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&dir.join("train.csv"), &report.train_csv())?;
    write_file(&dir.join("eval.csv"), &report.eval_csv())?;
    let params: Vec<(String, looped_tf::tensor::Tensor<f32>)> = trainer
        .model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    write_file(&dir.join("manifest.txt"), &manifest(&params))?;
    println!(
        "trained {} steps; outputs in {}",
        trainer.cfg.steps,
        dir.display()
    );
    Ok(())
}

fn load_model(ckpt_path: &Path) -> Result<(TrainConfig, LoopedModel<f32>), CliError> {
    let ckpt = Checkpoint::load(ckpt_path).map_err(|e| CliError::io(ckpt_path, e))?;
    let cfg = TrainConfig::from_text(&ckpt.config_text)
        .map_err(|e| CliError::Config(format!("checkpoint config: {e}")))?;
    if ckpt.config_hash != cfg.config_hash() {
        return Err(CliError::Config(
            "checkpoint config hash mismatch".into(),
        ));
    }
    let mut model = LoopedModel::<f32>::init(cfg.model_config(), 0);
    model
        .load_params(&ckpt.params)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, model))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalCriterion {
    Oracle,
    MaxConfidence,
    Threshold,
}

impl EvalCriterion {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(EvalCriterion::Oracle),
            "maxconf" | "max_confidence" => Some(EvalCriterion::MaxConfidence),
            "threshold" => Some(EvalCriterion::Threshold),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            EvalCriterion::Oracle => "oracle",
            EvalCriterion::MaxConfidence => "maxconf",
            EvalCriterion::Threshold => "threshold",
        }
    }
}

#[allow(clippy::too_many_arguments)]
/// `eval`: exact match per length over fresh instances, written as one
/// CSV row per length. `--reference` swaps the model for the task's loop
/// program (an oracle upper bound).
pub fn cmd_eval(
    checkpoint: Option<&Path>,
    reference_task: Option<TaskId>,
    task_flag: Option<TaskId>,
    lengths: &[usize],
    criterion: EvalCriterion,
    t_max: Option<usize>,
    threshold: f64,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    if lengths.is_empty() {
        return Err(CliError::Config("eval needs at least one length".into()));
    }
    enum Backend {
        Model(Box<(TrainConfig, LoopedModel<f32>)>),
        Reference(TaskId),
    }
    let backend = match (checkpoint, reference_task) {
        (Some(path), None) => {
            let (cfg, model) = load_model(path)?;
            if let Some(t) = task_flag {
                if t != cfg.task {
                    return Err(CliError::Config(format!(
                        "checkpoint was trained on {}, not {}",
                        cfg.task.name(),
                        t.name()
                    )));
                }
            }
            Backend::Model(Box::new((cfg, model)))
        }
        (None, Some(task)) => Backend::Reference(task),
        _ => {
            return Err(CliError::Config(
                "eval needs exactly one of --checkpoint or --reference <task>".into(),
            ))
        }
    };

    let (task, mode_name, cfg_hash, ceiling, gen) = match &backend {
        Backend::Model(b) => (
            b.0.task,
            b.0.mode.name(),
            b.0.config_hash(),
            b.0.ceiling,
            b.0.gen_options(),
        ),
        Backend::Reference(t) => (*t, "reference", 0u64, 0usize, Default::default()),
    };

    let mut csv = format!(
        "# config_hash={cfg_hash:016x} seed={seed} train_ceiling={ceiling} criterion={} samples={samples}\n\
         task,mode,seed,length,exact_match\n",
        criterion.name()
    );
    for &len in lengths {
        let eval_seed = derive_seed(&[seed, DOMAIN_EVAL_CLI, len as u64]);
        let instances = gen_eval_instances(task, len, samples, eval_seed, &gen);
        let acc = match &backend {
            Backend::Reference(_) => {
                let mut hits = 0usize;
                for inst in &instances {
                    let pred = reference_predict(inst).ok_or_else(|| {
                        CliError::Config(format!(
                            "task {} has no reference loop program",
                            task.name()
                        ))
                    })?;
                    if exact_match(&pred.0, &inst.target, &inst.loss_mask)
                        .map_err(|e| CliError::Config(e.to_string()))?
                    {
                        hits += 1;
                    }
                }
                hits as f64 / instances.len().max(1) as f64
            }
            Backend::Model(b) => {
                let (cfg, model) = (&b.0, &b.1);
                match criterion {
                    EvalCriterion::Oracle => {
                        evaluate_model(model, cfg, len, samples, eval_seed)
                            .map_err(|e| CliError::Config(e.to_string()))?
                    }
                    EvalCriterion::MaxConfidence | EvalCriterion::Threshold => {
                        let default_tmax =
                            2 * instances.iter().map(|i| i.steps).max().unwrap_or(1) + 2;
                        let t_max = t_max.unwrap_or(default_tmax);
                        match criterion {
                            EvalCriterion::MaxConfidence => {
                                eval_max_confidence(model, &instances, t_max)
                                    .map_err(|e| CliError::Config(e.to_string()))?
                                    .accuracy
                            }
                            _ => eval_threshold(model, &instances, t_max, threshold)?,
                        }
                    }
                }
            }
        };
        csv.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            task.name(),
            mode_name,
            seed,
            len,
            acc
        ));
    }
    let dir = resolve_out_dir(out)?;
    let path = dir.join("eval.csv");
    write_file(&path, &csv)?;
    print!("{csv}");
    Ok(path)
}

fn eval_threshold(
    model: &LoopedModel<f32>,
    instances: &[looped_tf::taskgen::TaskInstance],
    t_max: usize,
    threshold: f64,
) -> Result<f64, CliError> {
    use looped_tf::inference::{infer, StopCriterion};
    use looped_tf::model::TokenBatch;
    let mut hits = 0usize;
    for inst in instances {
        let tokens = TokenBatch::from_rows(&[inst.input.as_slice()]);
        let res = infer(
            model,
            &tokens,
            &StopCriterion::CeThreshold { threshold, t_max },
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        if exact_match(&res.decoded[0], &inst.target, &inst.loss_mask)
            .map_err(|e| CliError::Config(e.to_string()))?
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len().max(1) as f64)
}

/// `stopcurve`: per-step confidence/accuracy curve at one test length,
/// written as CSV plus a standalone SVG with the chosen-step marker.
pub fn cmd_stopcurve(
    checkpoint: &Path,
    length: usize,
    t_max: usize,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(PathBuf, PathBuf), CliError> {
    let (cfg, model) = load_model(checkpoint)?;
    let eval_seed = derive_seed(&[seed, DOMAIN_EVAL_CLI, length as u64]);
    let instances = gen_eval_instances(cfg.task, length, samples, eval_seed, &cfg.gen_options());
    let curve = stopping_curve(&model, &instances, t_max)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = resolve_out_dir(out)?;
    let csv_path = dir.join("stopcurve.csv");
    let svg_path = dir.join("stopcurve.svg");
    let header = format!(
        "# config_hash={:016x} seed={seed} task={} length={length} t_max={t_max} chosen_step={}\n",
        cfg.config_hash(),
        cfg.task.name(),
        curve.chosen_step
    );
    write_file(&csv_path, &format!("{header}{}", curve.csv()))?;
    let title = format!("{} length {length}", cfg.task.name());
    write_file(&svg_path, &svg::stopcurve_svg(&curve, &title))?;
    println!(
        "stopcurve: chosen step {} of {t_max} (exact match there: {:.3})",
        curve.chosen_step,
        curve.exact_match[curve.chosen_step - 1]
    );
    Ok((csv_path, svg_path))
}

/// `oracle-check`: loop programs against the direct oracles, exhaustive
/// for small lengths and sampled beyond; prints counts per task and
/// fails (exit 2) listing the first counterexample on any mismatch.
pub fn cmd_oracle_check(task: Option<TaskId>, n_max: usize, seed: u64) -> Result<String, CliError> {
    if n_max < 1 {
        return Err(CliError::Config("--n-max must be at least 1".into()));
    }
    let tasks: Vec<TaskId> = match task {
        Some(t) => vec![t],
        None => vec![TaskId::Parity, TaskId::Copy, TaskId::Addition],
    };
    let mut out = String::new();
    for t in tasks {
        let report = verify::check_task(t, n_max, seed).ok_or_else(|| {
            CliError::Config(format!(
                "task {} has no loop program to check (oracle-only)",
                t.name()
            ))
        })?;
        out.push_str(&format!(
            "{}: {} cases, {} mismatches\n",
            t.name(),
            report.cases,
            report.mismatches
        ));
        if !report.passed() {
            print!("{out}");
            return Err(CliError::Verification(
                report.first_counterexample.unwrap_or_default(),
            ));
        }
        if t == TaskId::Parity {
            let necessity = verify::check_parity_needs_full_count(n_max.min(8));
            out.push_str(&format!(
                "parity step-count necessity: {} lengths, {} violations\n",
                necessity.cases, necessity.mismatches
            ));
            if !necessity.passed() {
                print!("{out}");
                return Err(CliError::Verification(
                    necessity.first_counterexample.unwrap_or_default(),
                ));
            }
        }
    }
    print!("{out}");
    Ok(out)
}

/// One sweep job: a config file trained under one seed and evaluated at
/// the sweep lengths.
#[derive(Clone, Debug)]
struct SweepJob {
    config: TrainConfig,
    label: String,
    seed: u64,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub configs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
    pub samples: usize,
}

impl SweepSpec {
    pub fn from_text(text: &str, base_dir: &Path) -> Result<SweepSpec, CliError> {
        let mut configs = Vec::new();
        let mut seeds = Vec::new();
        let mut lengths = Vec::new();
        let mut samples = 256usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("sweep line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let parse_list_u64 = |v: &str| -> Result<Vec<u64>, CliError> {
                v.split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CliError::Config(format!("bad number {s:?} in {k}")))
                    })
                    .collect()
            };
            match k {
                "configs" => {
                    configs = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| base_dir.join(s.trim()))
                        .collect()
                }
                "seeds" => seeds = parse_list_u64(v)?,
                "lengths" => {
                    lengths = parse_list_u64(v)?.into_iter().map(|x| x as usize).collect()
                }
                "samples" => {
                    samples = v
                        .parse()
                        .map_err(|_| CliError::Config(format!("bad samples {v:?}")))?
                }
                other => {
                    return Err(CliError::Config(format!("unknown sweep key {other:?}")))
                }
            }
        }
        if configs.is_empty() || seeds.is_empty() || lengths.is_empty() {
            return Err(CliError::Config(
                "sweep needs configs, seeds, and lengths".into(),
            ));
        }
        Ok(SweepSpec {
            configs,
            seeds,
            lengths,
            samples,
        })
    }
}

/// `sweep`: trains every (config, seed) pair, evaluates each at the sweep
/// lengths, and writes per-row results plus a mean/standard-error summary
/// across seeds.
pub fn cmd_sweep(spec_path: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let spec = SweepSpec::from_text(&read_file(spec_path)?, base)?;
    let dir = resolve_out_dir(out)?;

    let mut jobs = Vec::new();
    for cfg_path in &spec.configs {
        let base_cfg = load_config(cfg_path)?;
        let stem = cfg_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "config".into());
        for &seed in &spec.seeds {
            let mut cfg = base_cfg.clone();
            cfg.seed = seed;
            jobs.push(SweepJob {
                config: cfg,
                label: stem.clone(),
                seed,
            });
        }
    }

    // Jobs are independent; run them on a small worker pool. Results are
    // keyed by job index so scheduling order never shows in the output.
    type RowSet = Vec<(String, String, u64, usize, f64)>;
    let results: Mutex<Vec<Option<RowSet>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let job_dir = dir.join(format!("{}_seed{}", job.label, job.seed));
                let rows = run_sweep_job(job, &job_dir, &spec);
                results.lock().unwrap()[i] = Some(rows.unwrap_or_default());
            });
        }
    });

    let mut rows: RowSet = Vec::new();
    for set in results.into_inner().unwrap().into_iter().flatten() {
        rows.extend(set);
    }
    rows.sort_by(|a, b| (&a.0, &a.1, a.2, a.3).cmp(&(&b.0, &b.1, b.2, b.3)));

    let mut results_csv = String::from("task,mode,seed,length,exact_match\n");
    for (task, mode, seed, len, acc) in &rows {
        results_csv.push_str(&format!("{task},{mode},{seed},{len},{acc:.6}\n"));
    }
    write_file(&dir.join("results.csv"), &results_csv)?;

    // Aggregate across seeds.
    let mut summary = String::from("task,mode,length,mean,stderr,seeds\n");
    let mut keys: Vec<(String, String, usize)> = rows
        .iter()
        .map(|(t, m, _, l, _)| (t.clone(), m.clone(), *l))
        .collect();
    keys.sort();
    keys.dedup();
    for (t, m, l) in keys {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|(rt, rm, _, rl, _)| rt == &t && rm == &m && *rl == l)
            .map(|(_, _, _, _, a)| *a)
            .collect();
        let (mean, stderr) = mean_stderr(&vals);
        summary.push_str(&format!(
            "{t},{m},{l},{mean:.6},{stderr:.6},{}\n",
            vals.len()
        ));
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    println!("sweep complete: {} jobs, results in {}", jobs.len(), dir.display());
    Ok(dir)
}

fn run_sweep_job(job: &SweepJob, job_dir: &Path, spec: &SweepSpec) -> Result<Vec<(String, String, u64, usize, f64)>, CliError> {
    std::fs::create_dir_all(job_dir).map_err(|e| CliError::io(job_dir, e))?;
    let mut trainer = Trainer::new(job.config.clone());
    let report = trainer
        .run(Some(job_dir))
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&job_dir.join("train.csv"), &report.train_csv())?;
    write_file(&job_dir.join("eval.csv"), &report.eval_csv())?;
    let mut rows = Vec::new();
    for &len in &spec.lengths {
        let eval_seed = derive_seed(&[job.seed, DOMAIN_EVAL_CLI, len as u64]);
        let acc = evaluate_model(&trainer.model, &job.config, len, spec.samples, eval_seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        rows.push((
            job.config.task.name().to_string(),
            job.config.mode.name().to_string(),
            job.seed,
            len,
            acc,
        ));
    }
    Ok(rows)
}

/// Sample mean and standard error (ddof = 1; 0 for a single value).
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (0.0, 0.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Used by both eval paths and the NTP baseline comparisons in tests.
pub fn eval_model_exact_match(
    model: &LoopedModel<f32>,
    cfg: &TrainConfig,
    instances: &[looped_tf::taskgen::TaskInstance],
) -> Result<f64, CliError> {
    let acc = match cfg.mode {
        TrainMode::LoopedAdaptive | TrainMode::LoopedAdaptiveNoInjection => {
            inference::eval_exact_match(model, instances, ExecPolicy::Adaptive)
        }
        TrainMode::Fap | TrainMode::FapPause => {
            inference::eval_exact_match(model, instances, ExecPolicy::Fixed(1))
        }
        TrainMode::Ntp | TrainMode::NtpPause => eval_ntp(model, instances, 1),
        TrainMode::NtpLoop => eval_ntp(model, instances, NTP_LOOP_STEPS),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(acc)
}
