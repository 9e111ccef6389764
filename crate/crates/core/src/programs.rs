//! Reference sequence programs for parity, copy, and binary addition,
//! written against the [`crate::rasp`] primitives as a loop of one
//! length-preserving step function, plus direct integer oracles for all
//! six tasks. The oracles define ground-truth targets; the loop programs
//! are validated against them.

use thiserror::Error;

use crate::rasp::{
    cumsum, firsts, full, has_seen, index_select, mask, seq_map, shift_right, where_, Int,
    IntSeq, RaspError,
};
use crate::vocab::{
    alphabet_symbol, TokenSeq, ALPHABET_SIZE, TOK_EOQ, TOK_EOS, TOK_IGNORE, TOK_ONE, TOK_PLUS,
    TOK_TIMES, TOK_ZERO,
};

const EOQ: Int = TOK_EOQ as Int;
const EOS: Int = TOK_EOS as Int;
const ADD_SIGN: Int = TOK_PLUS as Int;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskId {
    Parity,
    Copy,
    Addition,
    BinarySum,
    Multiplication,
    UniqueSet,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Parity,
        TaskId::Copy,
        TaskId::Addition,
        TaskId::BinarySum,
        TaskId::Multiplication,
        TaskId::UniqueSet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::Parity => "parity",
            TaskId::Copy => "copy",
            TaskId::Addition => "addition",
            TaskId::BinarySum => "binary_sum",
            TaskId::Multiplication => "multiplication",
            TaskId::UniqueSet => "unique_set",
        }
    }

    pub fn parse(s: &str) -> Option<TaskId> {
        match s {
            "parity" => Some(TaskId::Parity),
            "copy" => Some(TaskId::Copy),
            "addition" => Some(TaskId::Addition),
            "binary_sum" | "binarysum" | "sum" => Some(TaskId::BinarySum),
            "multiplication" | "mult" => Some(TaskId::Multiplication),
            "unique_set" | "uniqueset" | "unique" => Some(TaskId::UniqueSet),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("insufficient padding: answer needs {required} positions after the query, got {available}")]
    InsufficientPadding { required: usize, available: usize },
    #[error("no loop-step program for task {0}")]
    UnsupportedTask(TaskId),
    #[error(transparent)]
    Rasp(#[from] RaspError),
}

// ── elementwise boolean helpers over 0/1 sequences ──────────────────

fn xor(a: &[Int], b: &[Int]) -> IntSeq {
    // A XOR B = (A OR B) AND (NOT (A AND B))
    seq_map(a, b, |x, y| ((x | y) & !(x & y)) & 1).expect("equal lengths")
}

fn and(a: &[Int], b: &[Int]) -> IntSeq {
    seq_map(a, b, |x, y| x & y & 1).expect("equal lengths")
}

fn not(a: &[Int]) -> IntSeq {
    a.iter().map(|&x| 1 - (x & 1)).collect()
}

fn eq_const(a: &[Int], c: Int) -> IntSeq {
    a.iter().map(|&x| (x == c) as Int).collect()
}

// ── loop step functions ─────────────────────────────────────────────

/// One parity iteration: align the next digit with the answer location
/// and fold it into the running XOR.
pub fn parity_step(partial_ans: &[Int], seq: &[Int]) -> (IntSeq, IntSeq) {
    let seq = shift_right(seq, 1, 0);
    let partial_ans = xor(partial_ans, &seq);
    (partial_ans, seq)
}

/// One copy iteration: shift both the symbols and the EOS wavefront.
pub fn copy_step(seq: &[Int], end_seq: &[Int]) -> (IntSeq, IntSeq) {
    (shift_right(seq, 1, 0), shift_right(end_seq, 1, 0))
}

/// One addition iteration: XOR gives the in-place sum (shifted toward the
/// answer region), AND gives the carry sequence.
pub fn addition_step(seq1: &[Int], seq2: &[Int], end_seq: &[Int]) -> (IntSeq, IntSeq, IntSeq) {
    let end_seq = shift_right(end_seq, 1, 0);
    let carry_on = and(seq1, seq2);
    let in_place = shift_right(&xor(seq1, seq2), 1, 0);
    (in_place, carry_on, end_seq)
}

/// The identical per-iteration body of a loop program, applied `T(n)`
/// times between fixed pre/post-processing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepFunction {
    task: TaskId,
}

impl StepFunction {
    pub fn task(&self) -> TaskId {
        self.task
    }

    /// Number of sequences in the loop state.
    pub fn arity(&self) -> usize {
        match self.task {
            TaskId::Parity | TaskId::Copy => 2,
            TaskId::Addition => 3,
            _ => unreachable!("constructed only for loop tasks"),
        }
    }

    pub fn apply(&self, state: &[IntSeq]) -> Vec<IntSeq> {
        assert_eq!(state.len(), self.arity(), "loop state arity");
        match self.task {
            TaskId::Parity => {
                let (a, b) = parity_step(&state[0], &state[1]);
                vec![a, b]
            }
            TaskId::Copy => {
                let (a, b) = copy_step(&state[0], &state[1]);
                vec![a, b]
            }
            TaskId::Addition => {
                let (a, b, c) = addition_step(&state[0], &state[1], &state[2]);
                vec![a, b, c]
            }
            _ => unreachable!("constructed only for loop tasks"),
        }
    }
}

/// Loop-step body for the tasks that have one.
pub fn step_functions(task: TaskId) -> Result<StepFunction, ProgramError> {
    match task {
        TaskId::Parity | TaskId::Copy | TaskId::Addition => Ok(StepFunction { task }),
        other => Err(ProgramError::UnsupportedTask(other)),
    }
}

// ── loop programs ───────────────────────────────────────────────────

fn require_eoq(seq: &[Int]) -> Result<usize, ProgramError> {
    seq.iter()
        .position(|&t| t == EOQ)
        .ok_or_else(|| ProgramError::MalformedQuery("no end-of-query marker".into()))
}

fn parity_loop_core(seq: &[Int], num_step: usize) -> Result<IntSeq, ProgramError> {
    require_eoq(seq)?;
    // get the question part of the prompt
    let prompt_mask = not(&has_seen(seq, &full(seq, EOQ))?);
    let seq = mask(seq, &prompt_mask, 0)?;
    // init answer seq with 0
    let mut partial_ans = full(&seq, 0);
    // generate EOS seq after EOQ
    let mut end_seq = where_(&eq_const(&prompt_mask, 1), &full(&seq, 0), &full(&seq, EOS))?;
    // perform parity steps
    let mut seq = seq;
    for _ in 0..num_step {
        let (p, s) = parity_step(&partial_ans, &seq);
        partial_ans = p;
        seq = s;
    }
    // get answer with EOS
    end_seq = shift_right(&end_seq, 1, 0);
    let ans = where_(&eq_const(&end_seq, EOS), &end_seq, &partial_ans)?;
    Ok(ans)
}

fn copy_loop_core(seq: &[Int], num_step: usize) -> Result<IntSeq, ProgramError> {
    require_eoq(seq)?;
    // generate EOS seq after EOQ
    let end_mask = has_seen(seq, &full(seq, EOQ))?;
    let mut end_seq = where_(&eq_const(&end_mask, 0), &full(seq, 0), &full(seq, EOS))?;
    // perform copy steps
    let mut seq = seq.to_vec();
    for _ in 0..num_step {
        let (s, e) = copy_step(&seq, &end_seq);
        seq = s;
        end_seq = e;
    }
    // get answer with EOS
    let ans = where_(&eq_const(&end_seq, EOS), &end_seq, &seq)?;
    Ok(ans)
}

/// Splits an addition query into the first summand aligned onto the
/// second summand's positions, the masked second summand, and the EOS
/// region marker.
pub fn addition_preprocess(seq: &TokenSeq) -> Result<(IntSeq, IntSeq, IntSeq), ProgramError> {
    let seq = seq.to_ints();
    let seq = &seq[..];
    if !seq.contains(&ADD_SIGN) {
        return Err(ProgramError::MalformedQuery("no + sign".into()));
    }
    require_eoq(seq)?;
    // generate EOS seq after EOQ
    let end_mask = has_seen(seq, &full(seq, EOQ))?;
    let end_seq = where_(&eq_const(&end_mask, 0), &full(seq, 0), &full(seq, EOS))?;
    // masks for the first and second summands
    let seen_tok0 = has_seen(seq, &full(seq, ADD_SIGN))?;
    let seen_tok1 = has_seen(seq, &full(seq, EOQ))?;
    let mask1 = not(&seen_tok0);
    let mask2 = and(&seen_tok0, &not(&seen_tok1));
    let mask2 = and(&mask2, &shift_right(&mask2, 1, 0));
    // the two summands
    let seq1 = mask(seq, &mask1, 0)?;
    let seq2 = mask(seq, &mask2, 0)?;
    // align the first summand with the second
    let induct_num1 = cumsum(&mask1);
    let induct_num2 = cumsum(&mask2);
    let target_index = firsts(&induct_num1, &induct_num2, 0)?;
    let seq1 = index_select(&seq1, &target_index)?;
    let seq1 = mask(&seq1, &mask2, 0)?;
    Ok((seq1, seq2, end_seq))
}

fn addition_loop_core(seq: &TokenSeq, num_step: usize) -> Result<IntSeq, ProgramError> {
    let (mut seq1, mut seq2, mut end_seq) = addition_preprocess(seq)?;
    // perform addition steps
    for _ in 0..num_step {
        let (a, b, e) = addition_step(&seq1, &seq2, &end_seq);
        seq1 = a;
        seq2 = b;
        end_seq = e;
    }
    // get answer with EOS
    let ans = where_(&eq_const(&end_seq, EOS), &end_seq, &seq1)?;
    Ok(ans)
}

/// Replaces everything strictly before the end-of-query position with the
/// ignore token; the loop programs leave junk there and the positions are
/// unsupervised anyway.
fn star_prompt(ans: &[Int], query: &[Int]) -> Result<TokenSeq, ProgramError> {
    let eoq_pos = require_eoq(query)?;
    let out: Vec<Int> = ans
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < eoq_pos { TOK_IGNORE as Int } else { v })
        .collect();
    Ok(TokenSeq::from_ints(&out))
}

/// Runs the parity loop program for `num_step` iterations; correct when
/// `num_step` equals the digit count.
pub fn parity_loop(seq: &TokenSeq, num_step: usize) -> Result<TokenSeq, ProgramError> {
    let ints = seq.to_ints();
    let ans = parity_loop_core(&ints, num_step)?;
    star_prompt(&ans, &ints)
}

/// Runs the copy loop program; correct when `num_step` equals the symbol
/// count and the query carries at least `n - 1` EOS of padding.
pub fn copy_loop(seq: &TokenSeq, num_step: usize) -> Result<TokenSeq, ProgramError> {
    let ints = seq.to_ints();
    let eoq_pos = require_eoq(&ints)?;
    let n = eoq_pos;
    let padding = ints.len() - eoq_pos - 1;
    if n > 0 && padding < n - 1 {
        return Err(ProgramError::InsufficientPadding {
            required: n - 1,
            available: padding,
        });
    }
    let ans = copy_loop_core(&ints, num_step)?;
    star_prompt(&ans, &ints)
}

/// Runs the addition loop program; correct when `num_step` is one more
/// than the summand length and the query carries at least `n` EOS.
pub fn addition_loop(seq: &TokenSeq, num_step: usize) -> Result<TokenSeq, ProgramError> {
    let ints = seq.to_ints();
    let eoq_pos = require_eoq(&ints)?;
    let plus_pos = ints
        .iter()
        .position(|&t| t == ADD_SIGN)
        .ok_or_else(|| ProgramError::MalformedQuery("no + sign".into()))?;
    let n = plus_pos;
    let padding = ints.len() - eoq_pos - 1;
    if padding < n {
        return Err(ProgramError::InsufficientPadding {
            required: n,
            available: padding,
        });
    }
    let ans = addition_loop_core(seq, num_step)?;
    star_prompt(&ans, &ints)
}

// ── direct oracles ──────────────────────────────────────────────────

/// A validated query: its tokens, the end-of-query position, and the
/// body split at task operators.
struct Query {
    toks: Vec<u16>,
    eoq_pos: usize,
}

fn parse_query(query: &TokenSeq) -> Result<Query, ProgramError> {
    let toks = query.0.clone();
    let eoq_pos = toks
        .iter()
        .position(|&t| t == TOK_EOQ)
        .ok_or_else(|| ProgramError::MalformedQuery("no end-of-query marker".into()))?;
    if toks[eoq_pos + 1..].iter().any(|&t| t != TOK_EOS) {
        return Err(ProgramError::MalformedQuery(
            "query tail after > must be all #".into(),
        ));
    }
    Ok(Query { toks, eoq_pos })
}

fn binary_digits(toks: &[u16]) -> Result<Vec<u8>, ProgramError> {
    toks.iter()
        .map(|&t| match t {
            TOK_ZERO => Ok(0u8),
            TOK_ONE => Ok(1u8),
            other => Err(ProgramError::MalformedQuery(format!(
                "expected binary digit, got token id {other}"
            ))),
        })
        .collect()
}

fn digits_to_value(digits: &[u8]) -> u128 {
    digits.iter().fold(0u128, |acc, &d| (acc << 1) | d as u128)
}

/// Most-significant-bit-first rendering of `value` in exactly `width`
/// digits. Callers size the width so the value always fits.
fn value_to_digits_msb(value: u128, width: usize) -> Vec<u8> {
    debug_assert!(width >= 128 || value >> width == 0, "value does not fit");
    (0..width)
        .rev()
        .map(|i| ((value >> i) & 1) as u8)
        .collect()
}

/// Least-significant-bit-first rendering in exactly `width` digits.
fn value_to_digits_lsb(value: u128, width: usize) -> Vec<u8> {
    (0..width).map(|i| ((value >> i) & 1) as u8).collect()
}

fn digit_tok(d: u8) -> u16 {
    if d == 0 {
        TOK_ZERO
    } else {
        TOK_ONE
    }
}

/// Computes just the answer tokens for a well-formed query.
pub fn oracle_answer(task: TaskId, query: &TokenSeq) -> Result<Vec<u16>, ProgramError> {
    let q = parse_query(query)?;
    let body = &q.toks[..q.eoq_pos];
    match task {
        TaskId::Parity => {
            let digits = binary_digits(body)?;
            if digits.is_empty() {
                return Err(ProgramError::MalformedQuery("empty parity query".into()));
            }
            let p = digits.iter().fold(0u8, |a, &d| a ^ d);
            Ok(vec![digit_tok(p)])
        }
        TaskId::Copy => {
            let digits = binary_digits(body)?;
            if digits.is_empty() {
                return Err(ProgramError::MalformedQuery("empty copy query".into()));
            }
            Ok(body.to_vec())
        }
        TaskId::Addition => {
            let plus = body
                .iter()
                .position(|&t| t == TOK_PLUS)
                .ok_or_else(|| ProgramError::MalformedQuery("no + sign".into()))?;
            let x = binary_digits(&body[..plus])?;
            let y = binary_digits(&body[plus + 1..])?;
            if x.is_empty() || x.len() != y.len() {
                return Err(ProgramError::MalformedQuery(
                    "summands must be nonempty and equal length".into(),
                ));
            }
            let sum = digits_to_value(&x) + digits_to_value(&y);
            // Keep the leading digit so every n-digit pair yields n+1 digits.
            let out = value_to_digits_msb(sum, x.len() + 1);
            Ok(out.into_iter().map(digit_tok).collect())
        }
        TaskId::BinarySum => {
            let digits = binary_digits(body)?;
            if digits.is_empty() {
                return Err(ProgramError::MalformedQuery("empty sum query".into()));
            }
            let s: u128 = digits.iter().map(|&d| d as u128).sum();
            let width = (128 - s.leading_zeros()).max(1) as usize;
            // Answer is emitted least-significant bit first.
            let out = value_to_digits_lsb(s, width);
            Ok(out.into_iter().map(digit_tok).collect())
        }
        TaskId::Multiplication => {
            let times = body
                .iter()
                .position(|&t| t == TOK_TIMES)
                .ok_or_else(|| ProgramError::MalformedQuery("no × sign".into()))?;
            let a = binary_digits(&body[..times])?;
            let b = binary_digits(&body[times + 1..])?;
            if a.is_empty() || b.is_empty() {
                return Err(ProgramError::MalformedQuery("empty factor".into()));
            }
            if a.len() > 2 {
                return Err(ProgramError::MalformedQuery(
                    "first factor is limited to two digits".into(),
                ));
            }
            let prod = digits_to_value(&a) * digits_to_value(&b);
            // Least-significant bit first, fixed width with the leading
            // zero kept (one more than the factor lengths combined).
            let out = value_to_digits_lsb(prod, a.len() + b.len() + 1);
            Ok(out.into_iter().map(digit_tok).collect())
        }
        TaskId::UniqueSet => {
            let mut seen = [false; ALPHABET_SIZE + 1];
            let mut out = Vec::new();
            for &t in body {
                let sym = alphabet_symbol(t).ok_or_else(|| {
                    ProgramError::MalformedQuery(format!("token id {t} is not an alphabet symbol"))
                })?;
                if !seen[sym] {
                    seen[sym] = true;
                    out.push(t);
                }
            }
            if out.is_empty() {
                return Err(ProgramError::MalformedQuery("empty unique-set query".into()));
            }
            Ok(out)
        }
    }
}

/// Ground-truth target for a well-formed query: the ignore region covers
/// everything before the end-of-query marker, the answer starts at the
/// marker's position, and EOS fills the tail.
pub fn task_oracle(task: TaskId, query: &TokenSeq) -> Result<TokenSeq, ProgramError> {
    let q = parse_query(query)?;
    let answer = oracle_answer(task, query)?;
    let total = q.toks.len();
    let required = q.eoq_pos + answer.len();
    if required > total {
        return Err(ProgramError::InsufficientPadding {
            required: answer.len() - 1,
            available: total - q.eoq_pos - 1,
        });
    }
    let mut out = vec![TOK_IGNORE; q.eoq_pos];
    out.extend_from_slice(&answer);
    out.resize(total, TOK_EOS);
    Ok(TokenSeq(out))
}

/// Position of the end-of-query marker in a query or target sequence.
pub fn eoq_position(seq: &TokenSeq) -> Result<usize, ProgramError> {
    seq.0
        .iter()
        .position(|&t| t == TOK_EOQ)
        .ok_or_else(|| ProgramError::MalformedQuery("no end-of-query marker".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::NumeralMode;

    fn parse_bin(s: &str) -> TokenSeq {
        TokenSeq::parse(s, NumeralMode::Binary).unwrap()
    }

    #[test]
    fn parity_loop_matches_listing_header() {
        let input = parse_bin("1 1 0 1 > # # #");
        let out = parity_loop(&input, 4).unwrap();
        assert_eq!(out.render(), "* * * * 1 # # #");
    }

    #[test]
    fn parity_loop_worked_example() {
        let input = parse_bin("0 0 0 1 1 > # #");
        let out = parity_loop(&input, 5).unwrap();
        assert_eq!(out.render(), "* * * * * 0 # #");
    }

    #[test]
    fn parity_loop_rejects_missing_eoq() {
        let input = parse_bin("1 0 1");
        assert!(matches!(
            parity_loop(&input, 3),
            Err(ProgramError::MalformedQuery(_))
        ));
    }

    #[test]
    fn copy_loop_matches_listing_header() {
        let input = parse_bin("0 1 0 1 1 > # # # # # #");
        let out = copy_loop(&input, 5).unwrap();
        assert_eq!(out.render(), "* * * * * 0 1 0 1 1 # #");
    }

    #[test]
    fn copy_loop_worked_example() {
        let input = parse_bin("1 0 1 > # # # #");
        let out = copy_loop(&input, 3).unwrap();
        assert_eq!(out.render(), "* * * 1 0 1 # #");
    }

    #[test]
    fn copy_loop_rejects_insufficient_padding() {
        // n = 3 needs at least 2 EOS.
        let input = parse_bin("1 0 1 > #");
        assert_eq!(
            copy_loop(&input, 3),
            Err(ProgramError::InsufficientPadding {
                required: 2,
                available: 1
            })
        );
    }

    #[test]
    fn addition_preprocess_aligns_first_summand() {
        let input = parse_bin("0 0 1 + 1 1 1 > # # # # # #");
        let (seq1, seq2, end_seq) = addition_preprocess(&input).unwrap();
        // First summand digits land on the second summand's positions 4..=6.
        assert_eq!(&seq1[4..7], &[0, 0, 1]);
        assert!(seq1[..4].iter().all(|&v| v == 0));
        assert!(seq1[7..].iter().all(|&v| v == 0));
        assert_eq!(&seq2[4..7], &[1, 1, 1]);
        let eos = TOK_EOS as Int;
        assert_eq!(&end_seq[7..], &[eos; 7][..]);
        assert!(end_seq[..7].iter().all(|&v| v == 0));
    }

    #[test]
    fn addition_preprocess_single_digit() {
        let input = parse_bin("1 + 1 > #");
        let (seq1, seq2, _) = addition_preprocess(&input).unwrap();
        assert_eq!(seq1[2], 1);
        assert_eq!(seq2[2], 1);
    }

    #[test]
    fn addition_preprocess_mask_symmetric_under_swap() {
        let a = parse_bin("1 0 + 0 1 > # #");
        let b = parse_bin("0 1 + 1 0 > # #");
        let (s1a, s2a, _) = addition_preprocess(&a).unwrap();
        let (s1b, s2b, _) = addition_preprocess(&b).unwrap();
        // Swapping the summands swaps the value patterns between the two
        // aligned sequences.
        assert_eq!(s1a, s2b);
        assert_eq!(s2a, s1b);
    }

    #[test]
    fn addition_loop_matches_listing_header() {
        let input = parse_bin("0 0 1 + 1 1 1 > # # # # # #");
        let out = addition_loop(&input, 4).unwrap();
        assert_eq!(out.render(), "* * * * * * * 1 0 0 0 # # #");
    }

    #[test]
    fn addition_loop_worked_example() {
        let input = parse_bin("1 0 + 1 1 > # # # #");
        let out = addition_loop(&input, 3).unwrap();
        assert_eq!(out.render(), "* * * * * 1 0 1 # #");
    }

    #[test]
    fn addition_loop_rejects_missing_plus() {
        let input = parse_bin("1 0 1 > # # #");
        assert!(matches!(
            addition_loop(&input, 3),
            Err(ProgramError::MalformedQuery(_))
        ));
    }

    #[test]
    fn step_functions_compose_to_loops() {
        // Composing the exposed step function must reproduce the loop
        // programs' answers.
        for n in 1..=8usize {
            for bits in 0..(1u32 << n) {
                let mut toks: Vec<u16> = (0..n)
                    .map(|i| digit_tok(((bits >> (n - 1 - i)) & 1) as u8))
                    .collect();
                toks.push(TOK_EOQ);
                toks.extend(std::iter::repeat_n(TOK_EOS, 2));
                let seq = TokenSeq(toks);
                let direct = parity_loop(&seq, n).unwrap();

                // Re-run via StepFunction on the preprocessed state.
                let ints = seq.to_ints();
                let prompt_mask = not(&has_seen(&ints, &full(&ints, EOQ)).unwrap());
                let masked = mask(&ints, &prompt_mask, 0).unwrap();
                let end0 =
                    where_(&eq_const(&prompt_mask, 1), &full(&ints, 0), &full(&ints, EOS))
                        .unwrap();
                let step = step_functions(TaskId::Parity).unwrap();
                let mut state = vec![full(&ints, 0), masked];
                for _ in 0..n {
                    state = step.apply(&state);
                }
                let end1 = shift_right(&end0, 1, 0);
                let ans = where_(&eq_const(&end1, EOS), &end1, &state[0]).unwrap();
                let starred = star_prompt(&ans, &ints).unwrap();
                assert_eq!(starred, direct, "n={n} bits={bits:b}");
            }
        }
    }

    #[test]
    fn copy_step_is_shift_right_on_both_sequences() {
        let step = step_functions(TaskId::Copy).unwrap();
        let state = vec![vec![1, 0, 1, 0], vec![0, 0, 5, 5]];
        let next = step.apply(&state);
        assert_eq!(next[0], shift_right(&state[0], 1, 0));
        assert_eq!(next[1], shift_right(&state[1], 1, 0));
    }

    #[test]
    fn addition_step_without_carry_settles_in_one_extra_step() {
        // Disjoint bits: no carry is generated, the second step only
        // shifts the settled digits.
        let seq1 = vec![0, 0, 1, 0, 0, 0];
        let seq2 = vec![0, 0, 0, 1, 0, 0];
        let end = vec![0, 0, 0, 0, 55, 55];
        let (a1, b1, _) = addition_step(&seq1, &seq2, &end);
        assert!(b1.iter().all(|&c| c == 0), "no carries expected");
        assert_eq!(a1, shift_right(&xor(&seq1, &seq2), 1, 0));
    }

    #[test]
    fn step_functions_rejects_oracle_only_tasks() {
        assert_eq!(
            step_functions(TaskId::BinarySum),
            Err(ProgramError::UnsupportedTask(TaskId::BinarySum))
        );
    }

    #[test]
    fn oracle_binary_sum_example() {
        let input = parse_bin("1 0 1 1 > # # # #");
        let out = task_oracle(TaskId::BinarySum, &input).unwrap();
        assert_eq!(out.render(), "* * * * 1 1 # # #");
    }

    #[test]
    fn oracle_multiplication_example() {
        // 11b × 110b = 3 × 6 = 18; answer is least-significant first,
        // padded to six digits. The query needs six EOS for it to fit.
        let input = TokenSeq::parse("1 1 × 1 1 0 > # # # # # #", NumeralMode::Binary).unwrap();
        let out = task_oracle(TaskId::Multiplication, &input).unwrap();
        assert_eq!(out.render(), "* * * * * * 0 1 0 0 1 0 #");
    }

    #[test]
    fn oracle_unique_set_example() {
        let input = TokenSeq::parse("1 4 2 2 4 3 > # # # # #", NumeralMode::Alphabet).unwrap();
        let out = task_oracle(TaskId::UniqueSet, &input).unwrap();
        assert_eq!(out.render(), "* * * * * * 1 4 2 3 # #");
    }

    #[test]
    fn oracle_reports_insufficient_padding() {
        let input = parse_bin("1 0 1 > #"); // copy answer needs 3 slots, has 2
        assert!(matches!(
            task_oracle(TaskId::Copy, &input),
            Err(ProgramError::InsufficientPadding { .. })
        ));
    }

    #[test]
    fn oracle_is_deterministic() {
        let input = parse_bin("1 0 1 1 > # # # #");
        let a = task_oracle(TaskId::BinarySum, &input).unwrap();
        let b = task_oracle(TaskId::BinarySum, &input).unwrap();
        assert_eq!(a, b);
    }
}
