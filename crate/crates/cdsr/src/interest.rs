//! Cross-domain interest groups and message propagation.
//!
//! Users from different domains are grouped when the pointwise similarity
//! of their encoded sequences clears a threshold; sequences of grouped
//! users are then projected and fused into the target's representation,
//! turning a single-domain encoder into a cross-domain model.
//!
//! Thresholded flags are constants with respect to gradients. The
//! similarity transforms receive a training signal only through the
//! optional regularizer weight in [`crate::loss`]; with the weight at its
//! default of zero they stay at initialisation.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Real (non-padded) rows of a `T × d` value matrix projected by a `d × d`
/// transform: the reusable half of a similarity computation.
pub fn project_real_rows(h: &[f64], real_len: usize, d: usize, w: &Tensor) -> Vec<f64> {
    assert_eq!(h.len() % d, 0, "project_real_rows: not a T×d matrix");
    let rows = h.len() / d;
    crate::tensor::matmul(&h[(rows - real_len) * d..], &w.data, real_len, d, d)
}

/// Maximum pairwise dot product between two projected row sets.
pub fn similarity_from_projections(a: &[f64], b: &[f64], d: usize) -> f64 {
    let (ra, rb) = (a.len() / d, b.len() / d);
    if ra == 0 || rb == 0 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for p in 0..ra {
        for q in 0..rb {
            let dot: f64 = (0..d).map(|c| a[p * d + c] * b[q * d + c]).sum();
            best = best.max(dot);
        }
    }
    best
}

/// Pointwise interest similarity of two encoded sequences: the maximum
/// entry of `(H_i W1)(H_j W2)ᵀ` over real positions. Padded positions are
/// excluded; if either side is all padding the similarity is 0.
pub fn interest_similarity(
    h_i: &[f64],
    real_i: usize,
    h_j: &[f64],
    real_j: usize,
    d: usize,
    w1: &Tensor,
    w2: &Tensor,
) -> f64 {
    assert_eq!(h_i.len() % d, 0, "interest_similarity: H_i not a T×d matrix");
    assert_eq!(h_j.len() % d, 0, "interest_similarity: H_j not a T×d matrix");
    if real_i == 0 || real_j == 0 {
        return 0.0;
    }
    let a = project_real_rows(h_i, real_i, d, w1);
    let b = project_real_rows(h_j, real_j, d, w2);
    similarity_from_projections(&a, &b, d)
}

/// Tape variant of [`interest_similarity`], used when the similarity
/// transforms are trained through the auxiliary regularizer. Returns `None`
/// when either side is all padding.
pub fn interest_similarity_var(
    tape: &mut Tape,
    h_i: Var,
    real_i: usize,
    h_j: Var,
    real_j: usize,
    w1: Var,
    w2: Var,
) -> Option<Var> {
    if real_i == 0 || real_j == 0 {
        return None;
    }
    let (t_i, _) = tape.shape(h_i);
    let (t_j, _) = tape.shape(h_j);
    let ri = tape.slice_rows(h_i, t_i - real_i, t_i);
    let rj = tape.slice_rows(h_j, t_j - real_j, t_j);
    let a = tape.matmul(ri, w1);
    let b = tape.matmul(rj, w2);
    let bt = tape.transpose(b);
    let prod = tape.matmul(a, bt);
    Some(tape.max_all(prod))
}

/// Binary group flags: 1 where the similarity reaches the threshold
/// (boundary inclusive). Empty source slots carry no similarity and are
/// passed as `None`.
pub fn group_flags(similarities: &[Option<f64>], k: f64) -> Vec<u8> {
    assert!(k.is_finite(), "group_flags: threshold must be finite");
    similarities
        .iter()
        .map(|s| match s {
            Some(v) if *v >= k => 1,
            _ => 0,
        })
        .collect()
}

/// Cross-domain messages for one target: slot `j` holds `H_j · W_ip` when
/// flagged, `None` (a zero message) otherwise.
pub fn propagate_messages(
    tape: &mut Tape,
    flags: &[u8],
    sources: &[Option<Var>],
    w_ip: Var,
) -> Vec<Option<Var>> {
    assert_eq!(flags.len(), sources.len(), "propagate_messages: flag/source length mismatch");
    flags
        .iter()
        .zip(sources)
        .map(|(&flag, src)| match (flag, src) {
            (1, Some(h)) => Some(tape.matmul(*h, w_ip)),
            _ => None,
        })
        .collect()
}

/// Contract the stacked messages over the source axis with `W_C` (N×1):
/// `fused[t,c] = Σ_j W_C[j] · m_j[t,c]`. All-zero stacks fuse to zero.
pub fn fuse_messages(
    tape: &mut Tape,
    messages: &[Option<Var>],
    w_c: Var,
    t: usize,
    d: usize,
) -> Var {
    let (n, one) = tape.shape(w_c);
    assert_eq!(one, 1, "fuse_messages: W_C must be N×1");
    assert_eq!(n, messages.len(), "fuse_messages: expected {n} message slots, got {}", messages.len());
    let mut acc: Option<Var> = None;
    for (j, msg) in messages.iter().enumerate() {
        if let Some(m) = msg {
            let weight = tape.slice_rows(w_c, j, j + 1);
            let scaled = tape.scale(*m, weight);
            acc = Some(match acc {
                Some(a) => tape.add(a, scaled),
                None => scaled,
            });
        }
    }
    acc.unwrap_or_else(|| tape.zeros(t, d))
}

/// Enhanced sequence: the encoder output stacked on the fused messages,
/// then mixed by `W_F`.
#[derive(Debug, Clone, Copy)]
pub struct EnhancedSequence {
    /// `2T × d` final representation.
    pub s_star: Var,
    /// `2T × d` concatenation before `W_F`; its bottom half is exactly zero
    /// for a target with no flagged sources.
    pub concat: Var,
    /// `T × d` fused message block.
    pub fused: Var,
}

pub fn enhance(tape: &mut Tape, h: Var, fused: Var, w_f: Var) -> EnhancedSequence {
    let (t, d) = tape.shape(h);
    let (tf, df) = tape.shape(fused);
    assert_eq!((t, d), (tf, df), "enhance: H is {t}x{d} but fused block is {tf}x{df}");
    let concat = tape.concat_rows(h, fused);
    let s_star = tape.matmul(concat, w_f);
    EnhancedSequence { s_star, concat, fused }
}
