//! Generator-level properties: oracle agreement of every sampled target,
//! reference-program self-consistency, seeded determinism, curriculum
//! length statistics, and the instance dump golden lines.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use looped_tf::inference::{exact_match, reference_predict};
use looped_tf::programs::TaskId;
use looped_tf::taskgen::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_targets_agree_with_oracle(
        seed in 0u64..10_000,
        n in 1usize..10,
        task_idx in 0usize..6,
        mode_idx in 0usize..4,
    ) {
        let task = TaskId::ALL[task_idx];
        let mode = [EncodingMode::Fap, EncodingMode::Ntp, EncodingMode::FapPause, EncodingMode::NtpPause][mode_idx];
        let opts = GenOptions { mode, pause_tokens: 4, ..GenOptions::default() };
        let inst = sample_instance_seeded(task, n, seed, &opts);
        prop_assert_eq!(inst.total_length(), inst.target.len());
        prop_assert_eq!(inst.total_length(), inst.loss_mask.len());
        prop_assert!(check_against_oracle(&inst, mode).is_ok());
        prop_assert!(inst.loss_mask.iter().any(|&m| m == 1), "at least one supervised position");
    }

    #[test]
    fn reference_programs_solve_every_sampled_instance(
        seed in 0u64..10_000,
        n in 1usize..12,
        task_idx in 0usize..3,
    ) {
        let task = [TaskId::Parity, TaskId::Copy, TaskId::Addition][task_idx];
        let inst = sample_instance_seeded(task, n, seed, &GenOptions::default());
        let pred = reference_predict(&inst).unwrap();
        prop_assert!(exact_match(&pred.0, &inst.target, &inst.loss_mask).unwrap());
    }

    #[test]
    fn step_counts_follow_schedule(seed in 0u64..1000, n in 1usize..10) {
        for task in [TaskId::Parity, TaskId::Copy, TaskId::BinarySum, TaskId::UniqueSet] {
            let inst = sample_instance_seeded(task, n, seed, &GenOptions::default());
            prop_assert_eq!(inst.steps, n);
        }
        let add = sample_instance_seeded(TaskId::Addition, n, seed, &GenOptions::default());
        prop_assert_eq!(add.steps, n);
        let prop_opts = GenOptions { schedule: StepSchedule::Proposition, ..GenOptions::default() };
        let add2 = sample_instance_seeded(TaskId::Addition, n, seed, &prop_opts);
        prop_assert_eq!(add2.steps, n + 1);
        let mult = sample_instance_seeded(TaskId::Multiplication, n, seed, &GenOptions::default());
        prop_assert!(mult.steps == n || mult.steps == 2 * n);
    }
}

#[test]
fn uniform_character_distribution() {
    // Binary digits should be close to 50/50 over many samples.
    let mut ones = 0usize;
    let mut total = 0usize;
    for seed in 0..2000u64 {
        let inst = sample_instance_seeded(TaskId::Parity, 8, seed, &GenOptions::default());
        for &t in &inst.input.0[..8] {
            total += 1;
            ones += (t == 1) as usize;
        }
    }
    let frac = ones as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.01, "digit frequency {frac}");
}

#[test]
fn curriculum_length_distribution_is_uniform() {
    // 10^5 draws at a fixed current max; each length within 3 sigma of
    // the binomial expectation.
    let m = 8usize;
    let samples = 100_000usize;
    let mut counts = vec![0usize; m + 1];
    for i in 0..samples {
        let seed = derive_seed(&[42, 0x77, i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rand::Rng::gen_range(&mut rng, 1..=m);
        counts[n] += 1;
    }
    let p = 1.0 / m as f64;
    let expect = samples as f64 * p;
    let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
    for n in 1..=m {
        let dev = (counts[n] as f64 - expect).abs();
        assert!(dev < 3.0 * sigma, "length {n}: count {} vs {expect}", counts[n]);
    }
}

#[test]
fn dump_lines_are_stable() {
    // Golden lines: any change to the sampler, vocabulary, or layout
    // shows up here first.
    let opts = GenOptions::default();
    let parity = sample_instance_seeded(TaskId::Parity, 4, 11, &opts);
    assert_eq!(
        dump_instance(&parity),
        "parity\t4\t4\t0 0 1 0 >\t* * * * 1\t0 0 0 0 1"
    );
    let copy = sample_instance_seeded(TaskId::Copy, 3, 11, &opts);
    assert_eq!(
        dump_instance(&copy),
        "copy\t3\t3\t0 0 1 > # #\t* * * 0 0 1\t0 0 0 1 1 1"
    );
    let add = sample_instance_seeded(TaskId::Addition, 2, 11, &opts);
    assert_eq!(
        dump_instance(&add),
        "addition\t2\t2\t0 0 + 1 0 > # #\t* * * * * 0 1 0\t0 0 0 0 0 1 1 1"
    );
    let unique = sample_instance_seeded(TaskId::UniqueSet, 4, 11, &opts);
    assert_eq!(
        dump_instance(&unique),
        "unique_set\t4\t4\t5 20 28 11 > # # #\t* * * * 5 20 28 11\t0 0 0 0 1 1 1 1"
    );
}

#[test]
fn curriculum_is_monotone_and_capped() {
    let s = CurriculumState::new(250, 8);
    let mut prev = 0usize;
    for step in (0..5000u64).step_by(50) {
        let cur = curriculum_tick(&s, step).current_max_length;
        assert!(cur >= prev);
        assert!(cur <= 8);
        prev = cur;
    }
    assert_eq!(prev, 8);
    assert_eq!(s.ceiling_step(), 1750);
}
