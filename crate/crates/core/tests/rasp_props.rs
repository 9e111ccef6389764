//! Property tests for the sequence-primitive layer: length preservation,
//! causality under perturbation, and agreement with brute-force
//! references.

use proptest::prelude::*;

use looped_tf::rasp::*;

fn seq(max_len: usize) -> impl Strategy<Value = Vec<Int>> {
    prop::collection::vec(-8i64..8, 0..max_len)
}

fn pos_seq(max_len: usize) -> impl Strategy<Value = Vec<Int>> {
    prop::collection::vec(1i64..9, 0..max_len)
}


// O(L²) causal-mean reference, written independently of kqv.
fn kqv_brute(k: &[Int], q: &[Int], v: &[Int], default: Int) -> Vec<Int> {
    (0..k.len())
        .map(|i| {
            let hits: Vec<Int> = (0..=i).filter(|&j| k[j] == q[i]).map(|j| v[j]).collect();
            if hits.is_empty() {
                default
            } else {
                hits.iter().sum::<Int>() / hits.len() as Int
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn all_ops_preserve_length(x in seq(48), n in 0usize..6, c in -4i64..4) {
        prop_assert_eq!(full(&x, c).len(), x.len());
        prop_assert_eq!(indices(&x).len(), x.len());
        prop_assert_eq!(shift_right(&x, n, c).len(), x.len());
        prop_assert_eq!(cumsum(&x).len(), x.len());
        let y: Vec<Int> = x.iter().rev().cloned().collect();
        prop_assert_eq!(kqv(&x, &y, &x, equals, c).unwrap().len(), x.len());
        prop_assert_eq!(has_seen(&x, &y).unwrap().len(), x.len());
        prop_assert_eq!(firsts(&x, &y, c).unwrap().len(), x.len());
        prop_assert_eq!(seq_map(&x, &y, |a, b| a * b).unwrap().len(), x.len());
    }

    #[test]
    fn kqv_matches_brute_force(len in 1usize..64, salt in 0u64..1000) {
        // Small alphabet so matches actually occur.
        let k: Vec<Int> = (0..len).map(|i| ((i as u64 * 7 + salt) % 5) as Int).collect();
        let q: Vec<Int> = (0..len).map(|i| ((i as u64 * 11 + salt / 3) % 5) as Int).collect();
        let v: Vec<Int> = (0..len).map(|i| ((i as u64 * 13 + salt) % 17) as Int).collect();
        prop_assert_eq!(kqv(&k, &q, &v, equals, -1).unwrap(), kqv_brute(&k, &q, &v, -1));
    }

    #[test]
    fn causality_under_future_perturbation(x in prop::collection::vec(0i64..5, 2..32), bump in 1i64..5) {
        // Mutating position j leaves every output before j unchanged, for
        // every op that reads the sequence.
        let j = x.len() - 1;
        let mut x2 = x.clone();
        x2[j] += bump;
        let q = full(&x, 3);

        let pairs: [(Vec<Int>, Vec<Int>); 4] = [
            (kqv(&x, &q, &x, equals, 0).unwrap(), kqv(&x2, &q, &x2, equals, 0).unwrap()),
            (has_seen(&x, &q).unwrap(), has_seen(&x2, &q).unwrap()),
            (cumsum(&x), cumsum(&x2)),
            (shift_right(&x, 1, 0), shift_right(&x2, 1, 0)),
        ];
        for (a, b) in pairs {
            prop_assert_eq!(&a[..j], &b[..j]);
        }
    }

    #[test]
    fn shift_right_composes_additively(x in seq(40), a in 0usize..5, b in 0usize..5) {
        prop_assume!(a + b < x.len().max(1));
        let two_step = shift_right(&shift_right(&x, a, 0), b, 0);
        let one_step = shift_right(&x, a + b, 0);
        prop_assert_eq!(two_step, one_step);
    }

    #[test]
    fn where_decomposes_into_masks(len in 1usize..32, salt in 0u64..100) {
        // With strictly positive values the two-mask decomposition is
        // exact (the zero sentinel never collides).
        let x: Vec<Int> = (0..len).map(|i| 1 + ((i as u64 + salt) % 7) as Int).collect();
        let y: Vec<Int> = (0..len).map(|i| 1 + ((i as u64 * 3 + salt) % 7) as Int).collect();
        let c: Vec<Int> = (0..len).map(|i| ((i as u64 * 5 + salt) % 2) as Int).collect();
        let direct = where_(&c, &x, &y).unwrap();
        let not_c: Vec<Int> = c.iter().map(|&v| 1 - v).collect();
        let xm = mask(&x, &c, 0).unwrap();
        let ym = mask(&y, &not_c, 0).unwrap();
        let composed = seq_map(&xm, &ym, |a, b| a + b).unwrap();
        prop_assert_eq!(direct, composed);
    }

    #[test]
    fn select_is_causal(len in 1usize..24, salt in 0u64..50) {
        let k: Vec<Int> = (0..len).map(|i| ((i as u64 + salt) % 3) as Int).collect();
        let a = select(&k, &k, equals, true).unwrap();
        for qi in 0..len {
            for kj in qi + 1..len {
                prop_assert!(!a.get(qi, kj), "future position selected");
            }
        }
    }

    #[test]
    fn index_select_identity(x in pos_seq(32)) {
        prop_assume!(!x.is_empty());
        let idx = indices(&x);
        prop_assert_eq!(index_select(&x, &idx).unwrap(), x);
    }
}

#[test]
fn empty_sequences_are_legal_everywhere() {
    let e: Vec<Int> = vec![];
    assert_eq!(full(&e, 5), e);
    assert_eq!(indices(&e), e);
    assert_eq!(shift_right(&e, 3, 0), e);
    assert_eq!(cumsum(&e), e);
    assert_eq!(kqv(&e, &e, &e, equals, 0).unwrap(), e);
    assert_eq!(has_seen(&e, &e).unwrap(), e);
    assert_eq!(where_(&e, &e, &e).unwrap(), e);
    assert_eq!(mask(&e, &e, 9).unwrap(), e);
    assert_eq!(firsts(&e, &e, 0).unwrap(), e);
    assert_eq!(index_select(&e, &e).unwrap(), e);
    assert_eq!(sel_width(&select(&e, &e, equals, true).unwrap()), e);
}

#[test]
fn masked_positions_never_affect_earlier_outputs() {
    // Deterministic spot check of the same causality property used above,
    // with interior positions.
    let x = vec![1, 0, 1, 1, 0, 1];
    let q = full(&x, 1);
    for j in 1..x.len() {
        let mut x2 = x.clone();
        x2[j] = 1 - x2[j];
        let a = kqv(&x, &q, &x, equals, 0).unwrap();
        let b = kqv(&x2, &q, &x2, equals, 0).unwrap();
        assert_eq!(&a[..j], &b[..j], "perturbing {j} leaked backward");
    }
}
