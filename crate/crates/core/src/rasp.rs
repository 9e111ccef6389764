//! Causal sequence-operation library: the primitive layer the reference
//! programs are written against.
//!
//! Every operation is length-preserving and causal: `output[i]` depends
//! only on positions `0..=i` of the inputs. All arithmetic is exact
//! integer arithmetic so program outputs are bit-exact and usable as
//! training oracles.

use thiserror::Error;

pub type Int = i64;
pub type IntSeq = Vec<Int>;

/// Binary relation on (key, query) pairs. Must be a pure function of its
/// two arguments; it never sees positions.
pub trait Predicate: Fn(Int, Int) -> bool {}
impl<F: Fn(Int, Int) -> bool> Predicate for F {}

/// The one predicate the reference programs need.
pub fn equals(k: Int, q: Int) -> bool {
    k == q
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RaspError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("index {index} at position {pos} is not a causal gather (want 0..={pos})")]
    NonCausalIndex { pos: usize, index: Int },
}

fn check_len(a: &[Int], b: &[Int]) -> Result<(), RaspError> {
    if a.len() != b.len() {
        return Err(RaspError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// L×L boolean selector matrix. Entry `(qi, kj)` says whether query
/// position `qi` selects key position `kj`; causal construction leaves
/// everything above the diagonal false.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMatrix {
    size: usize,
    bits: Vec<bool>,
}

impl AttnMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, qi: usize, kj: usize) -> bool {
        self.bits[qi * self.size + kj]
    }

    /// Builds from explicit rows; mostly for tests. Rows may be ragged
    /// (lower-triangle form) and are zero-extended to the right.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let size = rows.len();
        let mut bits = vec![false; size * size];
        for (qi, row) in rows.iter().enumerate() {
            assert!(row.len() <= size, "row {qi} longer than matrix size");
            for (kj, &b) in row.iter().enumerate() {
                bits[qi * size + kj] = b;
            }
        }
        AttnMatrix { size, bits }
    }
}

/// Constant sequence with the shape of `x`.
pub fn full(x: &[Int], cnst: Int) -> IntSeq {
    vec![cnst; x.len()]
}

/// `output[i] = i`.
pub fn indices(x: &[Int]) -> IntSeq {
    (0..x.len() as Int).collect()
}

/// Attention selector: `A[qi][kj] = pred(k[kj], q[qi])`, restricted to
/// `kj <= qi` when `causal`.
pub fn select(
    k: &[Int],
    q: &[Int],
    pred: impl Predicate,
    causal: bool,
) -> Result<AttnMatrix, RaspError> {
    check_len(k, q)?;
    let size = k.len();
    let mut bits = vec![false; size * size];
    for qi in 0..size {
        let hi = if causal { qi + 1 } else { size };
        for kj in 0..hi {
            bits[qi * size + kj] = pred(k[kj], q[qi]);
        }
    }
    Ok(AttnMatrix { size, bits })
}

/// Number of selected keys per query row.
pub fn sel_width(a: &AttnMatrix) -> IntSeq {
    (0..a.size)
        .map(|qi| (0..a.size).filter(|&kj| a.get(qi, kj)).count() as Int)
        .collect()
}

/// Mean of `v` over each row's selected positions, truncated toward zero;
/// `default` where a row selects nothing. The programs only aggregate
/// singleton or uniform selections, where truncation is exact.
pub fn aggr_mean(a: &AttnMatrix, v: &[Int], default: Int) -> IntSeq {
    assert_eq!(a.size, v.len(), "row count of A must equal length of v");
    (0..a.size)
        .map(|qi| {
            let mut sum: Int = 0;
            let mut count: Int = 0;
            for kj in 0..a.size {
                if a.get(qi, kj) {
                    sum += v[kj];
                    count += 1;
                }
            }
            if count == 0 {
                default
            } else {
                sum / count // truncates toward zero, matching an int cast
            }
        })
        .collect()
}

/// Causal attention step: select then aggregate.
pub fn kqv(
    k: &[Int],
    q: &[Int],
    v: &[Int],
    pred: impl Predicate,
    default: Int,
) -> Result<IntSeq, RaspError> {
    check_len(k, v)?;
    let a = select(k, q, pred, true)?;
    Ok(aggr_mean(&a, v, default))
}

/// `output[i] = x[i - n]` for `i >= n`, else `default`.
pub fn shift_right(x: &[Int], n: usize, default: Int) -> IntSeq {
    (0..x.len())
        .map(|i| if i >= n { x[i - n] } else { default })
        .collect()
}

/// Elementwise conditional; `condition` is 0/1-valued.
pub fn where_(condition: &[Int], x_if: &[Int], y_else: &[Int]) -> Result<IntSeq, RaspError> {
    check_len(condition, x_if)?;
    check_len(condition, y_else)?;
    Ok(condition
        .iter()
        .zip(x_if.iter().zip(y_else))
        .map(|(&c, (&x, &y))| if c != 0 { x } else { y })
        .collect())
}

/// `output[i] = 1` iff some `x[j]` with `j <= i` equals `queries[i]`.
pub fn has_seen(x: &[Int], queries: &[Int]) -> Result<IntSeq, RaspError> {
    check_len(x, queries)?;
    kqv(x, queries, &full(x, 1), equals, 0)
}

/// Keeps `x` where the mask is 1, writes `mask_val` elsewhere.
pub fn mask(x: &[Int], bool_mask: &[Int], mask_val: Int) -> Result<IntSeq, RaspError> {
    check_len(x, bool_mask)?;
    Ok(x.iter()
        .zip(bool_mask)
        .map(|(&v, &m)| if m != 0 { v } else { mask_val })
        .collect())
}

/// `output[i] = f(x[i], y[i])`.
pub fn seq_map(x: &[Int], y: &[Int], f: impl Fn(Int, Int) -> Int) -> Result<IntSeq, RaspError> {
    check_len(x, y)?;
    Ok(x.iter().zip(y).map(|(&a, &b)| f(a, b)).collect())
}

/// Causal prefix sum.
pub fn cumsum(mask_seq: &[Int]) -> IntSeq {
    let mut acc = 0;
    mask_seq
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// `output[i]` = smallest `j <= i` with `k[j] = q[i]`, else `default`.
pub fn firsts(k: &[Int], q: &[Int], default: Int) -> Result<IntSeq, RaspError> {
    check_len(k, q)?;
    Ok((0..k.len())
        .map(|i| {
            (0..=i)
                .find(|&j| k[j] == q[i])
                .map(|j| j as Int)
                .unwrap_or(default)
        })
        .collect())
}

/// Causal gather: `output[i] = x[idx[i]]` with `0 <= idx[i] <= i`.
pub fn index_select(x: &[Int], idx: &[Int]) -> Result<IntSeq, RaspError> {
    check_len(x, idx)?;
    let mut out = Vec::with_capacity(x.len());
    for (i, &j) in idx.iter().enumerate() {
        if j < 0 || j as usize > i {
            return Err(RaspError::NonCausalIndex { pos: i, index: j });
        }
        out.push(x[j as usize]);
    }
    Ok(out)
}
