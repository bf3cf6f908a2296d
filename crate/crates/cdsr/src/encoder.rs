//! Embedding lookup and single-domain sequence encoders.
//!
//! Sequences arrive left-padded with the reserved id 0; real items are a
//! contiguous suffix. Padding rows never touch the embedding tables, so
//! table row 0 stays zero and receives no gradient. Both encoders are
//! causal: the output at position `t` depends only on positions `<= t`.

use crate::tape::{Tape, Var};

/// Which sequence encoder wraps the embedded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Running mean over the real prefix; useful as a debug backbone.
    PrefixMean,
    /// Gated recurrent unit with update/reset gates and tanh candidate.
    Gru,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prefix_mean" => Some(EncoderKind::PrefixMean),
            "gru" => Some(EncoderKind::Gru),
            _ => None,
        }
    }
}

/// Leaf handles for the embedding parameters of one domain.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    /// `(V+1) × d`; row 0 is the all-zero padding row.
    pub item_table: Var,
    /// `T × d`, shared across domains.
    pub position_table: Var,
}

/// Leaf handles for one GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub u_update: Var,
    pub b_update: Var,
    pub w_reset: Var,
    pub u_reset: Var,
    pub b_reset: Var,
    pub w_cand: Var,
    pub u_cand: Var,
    pub b_cand: Var,
}

/// Encoder weights on the tape.
#[derive(Debug, Clone, Copy)]
pub enum EncoderVars {
    PrefixMean,
    Gru(GruVars),
}

/// Encoded sequence: `T × d` output with zero rows at padded positions.
#[derive(Debug, Clone, Copy)]
pub struct EncodedSequence {
    pub h: Var,
    /// Number of real (non-padding) trailing positions.
    pub real_len: usize,
}

/// Number of real items in a left-padded row.
pub fn real_length(ids: &[u32]) -> usize {
    ids.iter().skip_while(|&&i| i == 0).count()
}

/// Embed a padded id row: `item_table[id] + position_table[pos]` for real
/// items, zero rows for padding.
pub fn embed_sequence(tape: &mut Tape, ids: &[u32], emb: &EmbeddingVars) -> Var {
    let t = ids.len();
    let (_, d) = tape.shape(emb.item_table);
    let real = real_length(ids);
    assert!(
        ids[..t - real].iter().all(|&i| i == 0),
        "embed_sequence: padding must be a prefix of the row"
    );
    if real == 0 {
        return tape.zeros(t, d);
    }
    let pad = t - real;
    let real_ids: Vec<usize> = ids[pad..].iter().map(|&i| i as usize).collect();
    let gathered = tape.gather(emb.item_table, &real_ids);
    let positions = tape.slice_rows(emb.position_table, pad, t);
    let embedded = tape.add(gathered, positions);
    if pad == 0 {
        embedded
    } else {
        let zeros = tape.zeros(pad, d);
        tape.concat_rows(zeros, embedded)
    }
}

/// Run the configured encoder over an embedded sequence.
pub fn encode(tape: &mut Tape, s_prime: Var, real_len: usize, vars: &EncoderVars) -> EncodedSequence {
    let (t, d) = tape.shape(s_prime);
    assert!(real_len <= t, "encode: real_len {real_len} exceeds T {t}");
    if real_len == 0 {
        return EncodedSequence { h: tape.zeros(t, d), real_len };
    }
    let pad = t - real_len;
    let h = match vars {
        EncoderVars::PrefixMean => {
            let mut rows = Vec::with_capacity(real_len);
            let mut running = tape.slice_rows(s_prime, pad, pad + 1);
            rows.push(running);
            for k in 1..real_len {
                let row = tape.slice_rows(s_prime, pad + k, pad + k + 1);
                running = tape.add(running, row);
                rows.push(tape.mul_const(running, 1.0 / (k + 1) as f64));
            }
            stack_rows(tape, pad, d, rows)
        }
        EncoderVars::Gru(g) => {
            let mut state = tape.zeros(1, d);
            let ones = tape.constant(&crate::Tensor::matrix(1, d, vec![1.0; d]));
            let mut rows = Vec::with_capacity(real_len);
            for k in 0..real_len {
                let x = tape.slice_rows(s_prime, pad + k, pad + k + 1);
                let update = gate(tape, x, state, g.w_update, g.u_update, g.b_update);
                let update = tape.sigmoid(update);
                let reset = gate(tape, x, state, g.w_reset, g.u_reset, g.b_reset);
                let reset = tape.sigmoid(reset);
                let gated_state = tape.mul(reset, state);
                let cand = gate(tape, x, gated_state, g.w_cand, g.u_cand, g.b_cand);
                let cand = tape.tanh(cand);
                let keep = tape.sub(ones, update);
                let kept = tape.mul(keep, state);
                let new = tape.mul(update, cand);
                state = tape.add(kept, new);
                rows.push(state);
            }
            stack_rows(tape, pad, d, rows)
        }
    };
    EncodedSequence { h, real_len }
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    let hu = tape.matmul(h, u);
    let sum = tape.add(xw, hu);
    tape.add(sum, b)
}

fn stack_rows(tape: &mut Tape, pad: usize, d: usize, rows: Vec<Var>) -> Var {
    let mut acc = if pad > 0 { Some(tape.zeros(pad, d)) } else { None };
    for row in rows {
        acc = Some(match acc {
            Some(a) => tape.concat_rows(a, row),
            None => row,
        });
    }
    acc.expect("stack_rows: at least one row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{finite_diff_check, Tape};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tables(v: usize, t: usize, d: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
        let mut item = Tensor::uniform_init(v + 1, d, rng);
        for j in 0..d {
            item.data[j] = 0.0; // padding row
        }
        let pos = Tensor::uniform_init(t, d, rng);
        (item, pos)
    }

    fn gru_tensors(d: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let mut out = Vec::new();
        for _ in 0..3 {
            out.push(Tensor::uniform_init(d, d, rng)); // W
            out.push(Tensor::uniform_init(d, d, rng)); // U
            out.push(Tensor::zeros(vec![1, d])); // b
        }
        out
    }

    fn gru_vars(leaves: &[Var]) -> EncoderVars {
        EncoderVars::Gru(GruVars {
            w_update: leaves[0],
            u_update: leaves[1],
            b_update: leaves[2],
            w_reset: leaves[3],
            u_reset: leaves[4],
            b_reset: leaves[5],
            w_cand: leaves[6],
            u_cand: leaves[7],
            b_cand: leaves[8],
        })
    }

    #[test]
    fn all_padding_embeds_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (item, pos) = tables(5, 4, 3, &mut rng);
        let mut tape = Tape::new();
        let emb = EmbeddingVars { item_table: tape.leaf(&item), position_table: tape.leaf(&pos) };
        let s = embed_sequence(&mut tape, &[0, 0, 0, 0], &emb);
        assert_eq!(tape.shape(s), (4, 3));
        assert!(tape.value(s).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_item_with_zero_positions_is_its_embedding_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (item, _) = tables(5, 4, 3, &mut rng);
        let pos = Tensor::zeros(vec![4, 3]);
        let mut tape = Tape::new();
        let emb = EmbeddingVars { item_table: tape.leaf(&item), position_table: tape.leaf(&pos) };
        let s = embed_sequence(&mut tape, &[0, 0, 0, 2], &emb);
        let got = &tape.value(s)[9..12];
        assert_eq!(got, &item.data[6..9]);
        assert!(tape.value(s)[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_matches_gather_then_add_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (item, pos) = tables(9, 6, 4, &mut rng);
        let ids = [0u32, 0, 7, 1, 9, 3];
        let mut tape = Tape::new();
        let emb = EmbeddingVars { item_table: tape.leaf(&item), position_table: tape.leaf(&pos) };
        let s = embed_sequence(&mut tape, &ids, &emb);
        for (row, &id) in ids.iter().enumerate() {
            for j in 0..4 {
                let expect = if id == 0 {
                    0.0
                } else {
                    item.data[id as usize * 4 + j] + pos.data[row * 4 + j]
                };
                assert!((tape.value(s)[row * 4 + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    #[should_panic(expected = "gather: id")]
    fn out_of_range_id_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (item, pos) = tables(3, 2, 2, &mut rng);
        let mut tape = Tape::new();
        let emb = EmbeddingVars { item_table: tape.leaf(&item), position_table: tape.leaf(&pos) };
        embed_sequence(&mut tape, &[0, 9], &emb);
    }

    #[test]
    fn gru_with_zero_weights_outputs_zero() {
        let d = 3;
        let zeros: Vec<Tensor> = (0..9)
            .map(|k| if k % 3 == 2 { Tensor::zeros(vec![1, d]) } else { Tensor::zeros(vec![d, d]) })
            .collect();
        let mut tape = Tape::new();
        let leaves: Vec<Var> = zeros.iter().map(|t| tape.leaf(t)).collect();
        let s_prime = tape.constant(&Tensor::matrix(4, d, (0..12).map(|i| i as f64 * 0.1).collect()));
        let enc = encode(&mut tape, s_prime, 4, &gru_vars(&leaves));
        assert!(tape.value(enc.h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_mean_of_constant_rows_is_that_constant() {
        let d = 2;
        let row = [0.4, -1.2];
        let mut data = vec![0.0; 2 * d];
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
        let mut tape = Tape::new();
        let s_prime = tape.constant(&Tensor::matrix(5, d, data));
        let enc = encode(&mut tape, s_prime, 3, &EncoderVars::PrefixMean);
        let h = tape.value(enc.h);
        assert!(h[..2 * d].iter().all(|&v| v == 0.0), "padded rows stay zero");
        for k in 2..5 {
            assert!((h[k * d] - 0.4).abs() < 1e-12);
            assert!((h[k * d + 1] + 1.2).abs() < 1e-12);
        }
    }

    /// Unrolled three-step recurrence computed with scalar arithmetic.
    #[test]
    fn gru_matches_unrolled_recurrence_oracle() {
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let weights = gru_tensors(d, &mut rng);
        let x_rows: Vec<Vec<f64>> =
            (0..3).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

        let sig = crate::tensor::sigmoid;
        let mv = |h: &[f64], w: &Tensor| -> Vec<f64> {
            (0..d).map(|j| (0..d).map(|i| h[i] * w.data[i * d + j]).sum()).collect()
        };
        let mut h = vec![0.0; d];
        let mut expect_rows = Vec::new();
        for x in &x_rows {
            let zx = mv(x, &weights[0]);
            let zh = mv(&h, &weights[1]);
            let z: Vec<f64> = (0..d).map(|j| sig(zx[j] + zh[j] + weights[2].data[j])).collect();
            let rx = mv(x, &weights[3]);
            let rh = mv(&h, &weights[4]);
            let r: Vec<f64> = (0..d).map(|j| sig(rx[j] + rh[j] + weights[5].data[j])).collect();
            let rh_state: Vec<f64> = (0..d).map(|j| r[j] * h[j]).collect();
            let cx = mv(x, &weights[6]);
            let ch = mv(&rh_state, &weights[7]);
            let c: Vec<f64> = (0..d).map(|j| (cx[j] + ch[j] + weights[8].data[j]).tanh()).collect();
            h = (0..d).map(|j| (1.0 - z[j]) * h[j] + z[j] * c[j]).collect();
            expect_rows.push(h.clone());
        }

        let mut tape = Tape::new();
        let leaves: Vec<Var> = weights.iter().map(|w| tape.leaf(w)).collect();
        let flat: Vec<f64> = x_rows.iter().flatten().copied().collect();
        let s_prime = tape.constant(&Tensor::matrix(3, d, flat));
        let enc = encode(&mut tape, s_prime, 3, &gru_vars(&leaves));
        let got = tape.value(enc.h);
        for (k, row) in expect_rows.iter().enumerate() {
            for j in 0..d {
                assert!(
                    (got[k * d + j] - row[j]).abs() <= 1e-10,
                    "step {k} dim {j}: {} vs {}",
                    got[k * d + j],
                    row[j]
                );
            }
        }
    }

    #[test]
    fn encoders_are_causal() {
        let d = 3;
        let t = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let weights = gru_tensors(d, &mut rng);
        let base = Tensor::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut edited = base.clone();
        for j in 0..d {
            edited.data[(t - 1) * d + j] = 9.0; // perturb only the last position
        }
        for kind in [0, 1] {
            let run = |input: &Tensor| -> Vec<f64> {
                let mut tape = Tape::new();
                let leaves: Vec<Var> = weights.iter().map(|w| tape.leaf(w)).collect();
                let vars = if kind == 0 { EncoderVars::PrefixMean } else { gru_vars(&leaves) };
                let s = tape.constant(input);
                let enc = encode(&mut tape, s, t, &vars);
                tape.value(enc.h).to_vec()
            };
            let a = run(&base);
            let b = run(&edited);
            assert_eq!(a[..(t - 1) * d], b[..(t - 1) * d], "prefix must not see the future");
            assert_ne!(a[(t - 1) * d..], b[(t - 1) * d..]);
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = gru_tensors(d, &mut rng);
        params.push(Tensor::matrix(4, d, (0..4 * d).map(|_| rng.gen_range(-1.0..1.0)).collect()));
        let err = finite_diff_check(&params, 1e-5, |tape, leaves| {
            let vars = gru_vars(&leaves[..9]);
            let enc = encode(tape, leaves[9], 3, &vars);
            let sq = tape.square(enc.h);
            tape.sum_all(sq)
        });
        assert!(err <= 1e-5, "gru finite-diff error {err}");

        let input = Tensor::matrix(4, d, (0..4 * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = finite_diff_check(&[input], 1e-5, |tape, leaves| {
            let enc = encode(tape, leaves[0], 4, &EncoderVars::PrefixMean);
            let sq = tape.square(enc.h);
            tape.sum_all(sq)
        });
        assert!(err <= 1e-5, "prefix_mean finite-diff error {err}");
    }

    #[test]
    fn output_shape_is_always_t_by_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let weights = gru_tensors(3, &mut rng);
        for real in 0..=5usize {
            let mut tape = Tape::new();
            let leaves: Vec<Var> = weights.iter().map(|w| tape.leaf(w)).collect();
            let s = tape.zeros(5, 3);
            let enc = encode(&mut tape, s, real, &gru_vars(&leaves));
            assert_eq!(tape.shape(enc.h), (5, 3));
        }
    }
}
