//! Equivalence checks between the loop programs and the direct oracles:
//! exhaustive where feasible, sampled beyond that. Backs the
//! `oracle-check` command and the test suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::programs::{addition_loop, copy_loop, parity_loop, task_oracle, TaskId};
use crate::vocab::{TokenSeq, TOK_EOQ, TOK_EOS, TOK_ONE, TOK_PLUS, TOK_ZERO};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckReport {
    pub cases: usize,
    pub mismatches: usize,
    pub first_counterexample: Option<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_counterexample.is_none() {
                self.first_counterexample = Some(describe());
            }
        }
    }
}

fn digit(bit: u32) -> u16 {
    if bit == 0 {
        TOK_ZERO
    } else {
        TOK_ONE
    }
}

fn bits_query(bits: u64, n: usize, padding: usize) -> TokenSeq {
    let mut toks: Vec<u16> = (0..n)
        .map(|i| digit(((bits >> (n - 1 - i)) & 1) as u32))
        .collect();
    toks.push(TOK_EOQ);
    toks.extend(std::iter::repeat_n(TOK_EOS, padding));
    TokenSeq(toks)
}

fn addition_query(x: u64, y: u64, n: usize, padding: usize) -> TokenSeq {
    let mut toks: Vec<u16> = (0..n)
        .map(|i| digit(((x >> (n - 1 - i)) & 1) as u32))
        .collect();
    toks.push(TOK_PLUS);
    toks.extend((0..n).map(|i| digit(((y >> (n - 1 - i)) & 1) as u32)));
    toks.push(TOK_EOQ);
    toks.extend(std::iter::repeat_n(TOK_EOS, padding));
    TokenSeq(toks)
}

/// Exhaustive parity check: every bit pattern for every n up to `n_max`.
/// The loop program with T = n must reproduce the direct oracle exactly.
pub fn check_parity(n_max: usize) -> CheckReport {
    let mut report = CheckReport::default();
    for n in 1..=n_max {
        for bits in 0..(1u64 << n) {
            let q = bits_query(bits, n, 2);
            let want = task_oracle(TaskId::Parity, &q).expect("well-formed");
            let got = parity_loop(&q, n).expect("well-formed");
            report.record(got == want, || {
                format!("parity n={n} input [{q}]: got [{got}], want [{want}]")
            });
        }
    }
    report
}

/// Exhaustive copy check with the minimal legal padding plus slack.
pub fn check_copy(n_max: usize) -> CheckReport {
    let mut report = CheckReport::default();
    for n in 1..=n_max {
        for bits in 0..(1u64 << n) {
            let q = bits_query(bits, n, n.saturating_sub(1) + 2);
            let want = task_oracle(TaskId::Copy, &q).expect("well-formed");
            let got = copy_loop(&q, n).expect("well-formed");
            report.record(got == want, || {
                format!("copy n={n} input [{q}]: got [{got}], want [{want}]")
            });
        }
    }
    report
}

/// Addition check: exhaustive over all digit pairs up to
/// `n_max_exhaustive`, then `samples` random pairs per length in
/// `random_lengths`. The loop program runs T = n + 1 steps.
pub fn check_addition(
    n_max_exhaustive: usize,
    random_lengths: std::ops::RangeInclusive<usize>,
    samples: usize,
    seed: u64,
) -> CheckReport {
    let mut report = CheckReport::default();
    let one = |x: u64, y: u64, n: usize, report: &mut CheckReport| {
        let q = addition_query(x, y, n, n + 2);
        let want = task_oracle(TaskId::Addition, &q).expect("well-formed");
        let got = addition_loop(&q, n + 1).expect("well-formed");
        report.record(got == want, || {
            format!("addition n={n} input [{q}]: got [{got}], want [{want}]")
        });
    };
    for n in 1..=n_max_exhaustive {
        for x in 0..(1u64 << n) {
            for y in 0..(1u64 << n) {
                one(x, y, n, &mut report);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in random_lengths {
        for _ in 0..samples {
            let x = rng.gen_range(0..(1u64 << n));
            let y = rng.gen_range(0..(1u64 << n));
            one(x, y, n, &mut report);
        }
    }
    report
}

/// Step-count necessity: with one step fewer than required, the parity
/// program must fail on at least one input per length.
pub fn check_parity_needs_full_count(n_max: usize) -> CheckReport {
    let mut report = CheckReport::default();
    for n in 1..=n_max {
        let mut some_failure = false;
        for bits in 0..(1u64 << n) {
            let q = bits_query(bits, n, 2);
            let want = task_oracle(TaskId::Parity, &q).expect("well-formed");
            let got = parity_loop(&q, n - 1).expect("well-formed");
            if got != want {
                some_failure = true;
                break;
            }
        }
        report.record(some_failure, || {
            format!("parity n={n}: n-1 steps unexpectedly solve every input")
        });
    }
    report
}

/// Run the default verification suite for one task; `None` for tasks that
/// are oracle-only (their targets are definitional, nothing to compare).
pub fn check_task(task: TaskId, n_max: usize, seed: u64) -> Option<CheckReport> {
    match task {
        TaskId::Parity => Some(check_parity(n_max)),
        TaskId::Copy => Some(check_copy(n_max)),
        TaskId::Addition => {
            let exhaustive = n_max.min(6);
            Some(check_addition(exhaustive, 7..=n_max.max(7), 1000, seed))
        }
        _ => None,
    }
}
