//! Online synthetic data generation: samples problem instances, encodes
//! them for full-answer or next-token training, attaches loss masks and
//! ground-truth step counts, and drives the length curriculum.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::programs::{oracle_answer, task_oracle, ProgramError, TaskId};
use crate::vocab::{alphabet_tok, Tok, TokenSeq, ALPHABET_SIZE, TOK_EOQ, TOK_EOS, TOK_IGNORE, TOK_ONE, TOK_PAUSE, TOK_PLUS, TOK_TIMES, TOK_ZERO};

/// How a problem is laid out for the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodingMode {
    /// Query only; the whole answer is produced after internal processing.
    Fap,
    /// Full sequence in, one-position-left-shifted sequence out.
    Ntp,
    FapPause,
    NtpPause,
}

impl EncodingMode {
    pub fn is_ntp(self) -> bool {
        matches!(self, EncodingMode::Ntp | EncodingMode::NtpPause)
    }

    pub fn has_pause(self) -> bool {
        matches!(self, EncodingMode::FapPause | EncodingMode::NtpPause)
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodingMode::Fap => "fap",
            EncodingMode::Ntp => "ntp",
            EncodingMode::FapPause => "fap_pause",
            EncodingMode::NtpPause => "ntp_pause",
        }
    }
}

/// Which step-count schedule the dataset advertises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepSchedule {
    /// Every task uses its problem length (multiplication: the product of
    /// the factor lengths).
    TaskLength,
    /// Like `TaskLength` but addition uses n + 1, the count the reference
    /// program needs.
    Proposition,
}

impl StepSchedule {
    pub fn name(self) -> &'static str {
        match self {
            StepSchedule::TaskLength => "task_length",
            StepSchedule::Proposition => "proposition",
        }
    }
}

/// Problem size; multiplication is the one task sized by two lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemSize {
    Single(usize),
    Pair { len1: usize, len2: usize },
}

/// Ground-truth number of loop steps for a problem of the given size.
pub fn steps_for(task: TaskId, size: ProblemSize, schedule: StepSchedule) -> usize {
    match (task, size) {
        (TaskId::Multiplication, ProblemSize::Pair { len1, len2 }) => len1 * len2,
        (TaskId::Multiplication, ProblemSize::Single(_)) => {
            panic!("multiplication step count needs both factor lengths")
        }
        (TaskId::Addition, ProblemSize::Single(n)) => match schedule {
            StepSchedule::TaskLength => n,
            StepSchedule::Proposition => n + 1,
        },
        (_, ProblemSize::Single(n)) => n,
        (t, s) => panic!("problem size {s:?} does not fit task {t}"),
    }
}

fn answer_bits(value: usize) -> usize {
    (usize::BITS - value.leading_zeros()).max(1) as usize
}

/// Minimal legal EOS padding for a problem of length `n`, sized so the
/// worst-case answer always fits. Multiplication assumes the two-digit
/// first factor.
pub fn padding_for(task: TaskId, n: usize) -> usize {
    match task {
        TaskId::Parity => 0,
        TaskId::Copy => n.saturating_sub(1),
        TaskId::Addition => n,
        TaskId::BinarySum => answer_bits(n) - 1,
        TaskId::Multiplication => n + 2,
        TaskId::UniqueSet => n.min(ALPHABET_SIZE).saturating_sub(1),
    }
}

/// Curriculum position: the largest problem length currently sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumState {
    pub current_max_length: usize,
    pub interval: usize,
    pub ceiling: usize,
}

impl CurriculumState {
    pub fn new(interval: usize, ceiling: usize) -> Self {
        CurriculumState {
            current_max_length: 1,
            interval,
            ceiling,
        }
    }

    /// First step at which the ceiling is reached; learning-rate decay
    /// starts here.
    pub fn ceiling_step(&self) -> u64 {
        (self.ceiling.saturating_sub(1) as u64) * self.interval as u64
    }
}

/// Advances the curriculum to its position at `global_step`.
pub fn curriculum_tick(state: &CurriculumState, global_step: u64) -> CurriculumState {
    let grown = 1 + (global_step / state.interval.max(1) as u64) as usize;
    CurriculumState {
        current_max_length: grown.min(state.ceiling),
        ..*state
    }
}

/// Generation knobs shared by a whole run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenOptions {
    pub mode: EncodingMode,
    pub schedule: StepSchedule,
    /// Pause tokens inserted between query and answer in the pause modes.
    pub pause_tokens: usize,
    /// Extra EOS beyond the minimal legal padding.
    pub padding_slack: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            mode: EncodingMode::Fap,
            schedule: StepSchedule::TaskLength,
            pause_tokens: 20,
            padding_slack: 0,
        }
    }
}

/// One supervised training/evaluation example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub task: TaskId,
    pub input: TokenSeq,
    pub target: TokenSeq,
    /// 1 where the target is supervised, 0 elsewhere; same length as the
    /// input and target.
    pub loss_mask: Vec<u8>,
    /// Ground-truth loop steps T for this instance.
    pub steps: usize,
    pub problem_length: usize,
}

impl TaskInstance {
    pub fn total_length(&self) -> usize {
        self.input.len()
    }

    /// First supervised position; for full-answer layouts this is where
    /// the answer begins.
    pub fn answer_start(&self) -> usize {
        self.loss_mask
            .iter()
            .position(|&m| m == 1)
            .unwrap_or(self.loss_mask.len())
    }
}

fn digit_tok(d: u8) -> Tok {
    if d == 0 {
        TOK_ZERO
    } else {
        TOK_ONE
    }
}

/// Query body (everything before `>`) plus the sampled first-factor
/// length for multiplication.
fn sample_body(task: TaskId, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Tok>, Option<usize>) {
    assert!(n >= 1, "problem length must be at least 1");
    match task {
        TaskId::Parity | TaskId::Copy | TaskId::BinarySum => {
            let body = (0..n).map(|_| digit_tok(rng.gen_range(0..2u8))).collect();
            (body, None)
        }
        TaskId::Addition => {
            let mut body: Vec<Tok> = (0..n).map(|_| digit_tok(rng.gen_range(0..2u8))).collect();
            body.push(TOK_PLUS);
            body.extend((0..n).map(|_| digit_tok(rng.gen_range(0..2u8))));
            (body, None)
        }
        TaskId::Multiplication => {
            let len1 = rng.gen_range(1..=2usize);
            let mut body: Vec<Tok> = (0..len1).map(|_| digit_tok(rng.gen_range(0..2u8))).collect();
            body.push(TOK_TIMES);
            body.extend((0..n).map(|_| digit_tok(rng.gen_range(0..2u8))));
            (body, Some(len1))
        }
        TaskId::UniqueSet => {
            let body = (0..n)
                .map(|_| alphabet_tok(rng.gen_range(1..=ALPHABET_SIZE)))
                .collect();
            (body, None)
        }
    }
}

/// Samples one instance with uniformly distributed characters and the
/// layout of the configured encoding mode.
pub fn sample_instance(
    task: TaskId,
    n: usize,
    rng: &mut ChaCha8Rng,
    opts: &GenOptions,
) -> TaskInstance {
    let (body, len1) = sample_body(task, n, rng);
    let eoq_pos = body.len();
    let mut query = body;
    query.push(TOK_EOQ);
    let query = TokenSeq(query);
    let answer = oracle_answer(task, &query).expect("sampled query is well-formed");

    let size = match len1 {
        Some(len1) => ProblemSize::Pair { len1, len2: n },
        None => ProblemSize::Single(n),
    };
    let steps = steps_for(task, size, opts.schedule);

    let pause = if opts.mode.has_pause() {
        opts.pause_tokens
    } else {
        0
    };

    let (input, target, loss_mask) = if opts.mode.is_ntp() {
        // Full sequence in; the target is the same sequence shifted one
        // position left. Supervision starts at the position that predicts
        // the first answer token and runs through the first EOS after it.
        let trailing = 1 + opts.padding_slack;
        let mut input = query.0.clone();
        input.extend(std::iter::repeat_n(TOK_PAUSE, pause));
        input.extend_from_slice(&answer);
        input.extend(std::iter::repeat_n(TOK_EOS, trailing));
        let total = input.len();
        let mut target: Vec<Tok> = input[1..].to_vec();
        target.push(TOK_EOS);
        let mut loss_mask = vec![0u8; total];
        let sup_from = eoq_pos + pause;
        let sup_to = eoq_pos + pause + answer.len(); // predicts the first EOS
        for m in loss_mask.iter_mut().take(sup_to + 1).skip(sup_from) {
            *m = 1;
        }
        (TokenSeq(input), TokenSeq(target), loss_mask)
    } else {
        // Query only; EOS fills the rest. The answer starts at the
        // end-of-query position (shifted one left of the token it
        // "predicts"), after any pause tokens.
        let padding = padding_for(task, n) + opts.padding_slack;
        let mut input = query.0.clone();
        input.extend(std::iter::repeat_n(TOK_PAUSE, pause));
        input.extend(std::iter::repeat_n(TOK_EOS, padding));
        let total = input.len();
        let ans_from = eoq_pos + pause;
        assert!(
            ans_from + answer.len() <= total,
            "padding_for must cover the worst-case answer"
        );
        let mut target = vec![TOK_IGNORE; ans_from];
        target.extend_from_slice(&answer);
        target.resize(total, TOK_EOS);
        let mut loss_mask = vec![0u8; total];
        for m in loss_mask.iter_mut().skip(ans_from) {
            *m = 1;
        }
        (TokenSeq(input), TokenSeq(target), loss_mask)
    };

    TaskInstance {
        task,
        input,
        target,
        loss_mask,
        steps,
        problem_length: n,
    }
}

/// Deterministic convenience: same (seed, task, n, options) always yields
/// the identical instance.
pub fn sample_instance_seeded(task: TaskId, n: usize, seed: u64, opts: &GenOptions) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_instance(task, n, &mut rng, opts)
}

/// Pads every row with EOS (mask 0) so the batch is rectangular.
pub fn align_batch(rows: &mut [TaskInstance]) {
    let max_len = rows.iter().map(|r| r.total_length()).max().unwrap_or(0);
    for row in rows.iter_mut() {
        row.input.0.resize(max_len, TOK_EOS);
        row.target.0.resize(max_len, TOK_EOS);
        row.loss_mask.resize(max_len, 0);
    }
}

/// Splitmix-style mixing of seed components; used to derive independent
/// per-sample streams from one master seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = state ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// One-line text form of an instance for golden-file tests:
/// `task<TAB>n<TAB>T<TAB>input<TAB>target<TAB>mask`.
pub fn dump_instance(inst: &TaskInstance) -> String {
    let mask = inst
        .loss_mask
        .iter()
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        inst.task.name(),
        inst.problem_length,
        inst.steps,
        inst.input.render(),
        inst.target.render(),
        mask
    )
}

/// Cross-check helper: the target restricted to supervised positions must
/// equal the direct oracle on those positions. NTP rows are checked
/// against the shifted input instead.
pub fn check_against_oracle(inst: &TaskInstance, mode: EncodingMode) -> Result<(), ProgramError> {
    if mode.is_ntp() {
        for i in 0..inst.total_length() - 1 {
            if inst.loss_mask[i] == 1 && inst.target.0[i] != inst.input.0[i + 1] {
                return Err(ProgramError::MalformedQuery(format!(
                    "ntp target mismatch at {i}"
                )));
            }
        }
        return Ok(());
    }
    if mode == EncodingMode::Fap {
        let oracle = task_oracle(inst.task, &inst.input)?;
        for (i, &m) in inst.loss_mask.iter().enumerate() {
            if m == 1 && oracle.0[i] != inst.target.0[i] {
                return Err(ProgramError::MalformedQuery(format!(
                    "target disagrees with oracle at {i}"
                )));
            }
        }
    }
    Ok(())
}
