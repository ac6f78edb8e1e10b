//! Shared recurrent encoding of question and document sentences, word-level
//! co-attention between them, and sentence-level representation building.
//!
//! One bidirectional LSTM encodes the question and every sentence with the
//! same weights. For each sentence, a bilinear alignment grid against the
//! question yields co-attention weights in both directions; pooling word
//! states under those weights gives one vector per sentence (`M_s`) and one
//! question vector (`M_q`) averaged over its per-sentence views.

use crate::error::Result;
use crate::numerics::{bilstm, LstmVars, Scalar, Tape, Var};

/// Tape handles for the encoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    /// bilinear co-attention form, d_h x d_h
    pub coatt_u: Var,
}

/// Everything downstream modules need from the encoder.
pub struct EncoderOutput {
    /// question word states, L_q x d_h
    pub h_q: Var,
    /// per-sentence word states, each L_i x d_h
    pub h_s: Vec<Var>,
    /// all sentence states stacked in order, (Σ L_i) x d_h
    pub h_d: Var,
    /// question sentence-level vector, d_h
    pub m_q: Var,
    /// document sentence matrix, n x d_h
    pub m_s: Var,
    /// co-attention over question words, one per sentence
    pub alpha_q: Vec<Var>,
    /// co-attention over sentence words, one per sentence
    pub alpha_s: Vec<Var>,
    /// document read state: last sentence's forward end, first sentence's
    /// backward end (d_h), used to seed the decoder
    pub final_state: Var,
}

/// Run the shared encoder over the question and each sentence.
///
/// `drop_masks`, when present, multiplies each state matrix elementwise
/// (inverted-dropout masks, one per sequence: question first, then
/// sentences).
pub fn encode_shared<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    q_emb: Var,
    sent_embs: &[Var],
    drop_masks: Option<&[Vec<F>]>,
) -> Result<(Var, Vec<Var>, Var)> {
    let apply = |tape: &mut Tape<F>, states: Var, k: usize| -> Result<Var> {
        match drop_masks {
            Some(masks) => tape.mul_mask(states, masks[k].clone()),
            None => Ok(states),
        }
    };

    let q = bilstm(tape, &vars.fwd, &vars.bwd, q_emb)?;
    let h_q = apply(tape, q.states, 0)?;

    let mut h_s = Vec::with_capacity(sent_embs.len());
    let mut first_bwd = None;
    let mut last_fwd = None;
    for (i, &emb) in sent_embs.iter().enumerate() {
        let out = bilstm(tape, &vars.fwd, &vars.bwd, emb)?;
        if i == 0 {
            first_bwd = Some(out.last_bwd);
        }
        last_fwd = Some(out.last_fwd);
        h_s.push(apply(tape, out.states, i + 1)?);
    }
    let final_state = tape.concat(&[last_fwd.unwrap(), first_bwd.unwrap()])?;
    Ok((h_q, h_s, final_state))
}

/// Word-level co-attention between the question and one sentence.
///
/// The alignment grid is `O = tanh(H_q U H_iᵀ)` (L_q x L_i). Question
/// weights take the per-question-word maximum over sentence words and
/// softmax over question positions; sentence weights do the mirror image.
pub fn coattend<F: Scalar>(
    tape: &mut Tape<F>,
    coatt_u: Var,
    h_q: Var,
    h_s_i: Var,
    q_mask: &[bool],
    s_mask: &[bool],
) -> Result<(Var, Var)> {
    let qu = tape.matmul(h_q, coatt_u)?;
    let h_s_t = tape.transpose(h_s_i)?;
    let grid = tape.matmul(qu, h_s_t)?;
    let grid = tape.tanh(grid);

    let q_scores = tape.row_max(grid)?;
    let alpha_q = tape.masked_softmax(q_scores, q_mask, 0)?;

    let grid_t = tape.transpose(grid)?;
    let s_scores = tape.row_max(grid_t)?;
    let alpha_s = tape.masked_softmax(s_scores, s_mask, 0)?;
    Ok((alpha_q, alpha_s))
}

/// Pool word states into sentence-level representations.
///
/// `M_q` averages the question's per-sentence attention readouts; row `i` of
/// `M_s` is sentence `i`'s own readout.
pub fn sentence_reps<F: Scalar>(
    tape: &mut Tape<F>,
    h_q: Var,
    h_s: &[Var],
    alpha_q: &[Var],
    alpha_s: &[Var],
) -> Result<(Var, Var)> {
    let n = h_s.len();
    let mut m_q_sum: Option<Var> = None;
    let mut m_s_rows = Vec::with_capacity(n);
    for i in 0..n {
        let q_read = tape.vecmat(alpha_q[i], h_q)?;
        m_q_sum = Some(match m_q_sum {
            Some(acc) => tape.add(acc, q_read)?,
            None => q_read,
        });
        m_s_rows.push(tape.vecmat(alpha_s[i], h_s[i])?);
    }
    let m_q = tape.scale(m_q_sum.unwrap(), F::from_f64(1.0 / n as f64));
    let m_s = tape.stack_rows(&m_s_rows)?;
    Ok((m_q, m_s))
}

/// Full encoder pass: shared recurrent encoding, per-sentence co-attention,
/// and sentence-level pooling.
pub fn encode<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    q_emb: Var,
    sent_embs: &[Var],
    drop_masks: Option<&[Vec<F>]>,
) -> Result<EncoderOutput> {
    let (h_q, h_s, final_state) = encode_shared(tape, vars, q_emb, sent_embs, drop_masks)?;
    let l_q = tape.shape(h_q)[0];

    let mut alpha_q = Vec::with_capacity(h_s.len());
    let mut alpha_s = Vec::with_capacity(h_s.len());
    for &h_s_i in &h_s {
        let l_s = tape.shape(h_s_i)[0];
        let (aq, as_) = coattend(
            tape,
            vars.coatt_u,
            h_q,
            h_s_i,
            &vec![true; l_q],
            &vec![true; l_s],
        )?;
        alpha_q.push(aq);
        alpha_s.push(as_);
    }
    let (m_q, m_s) = sentence_reps(tape, h_q, &h_s, &alpha_q, &alpha_s)?;
    let h_d = tape.concat_rows(&h_s)?;
    Ok(EncoderOutput {
        h_q,
        h_s,
        h_d,
        m_q,
        m_s,
        alpha_q,
        alpha_s,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::numerics::Tensor;

    use super::*;

    fn encoder_vars(
        tape: &mut Tape<f64>,
        emb: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> EncoderVars {
        let mut t = |shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            tape.leaf(Tensor::uniform(shape, -0.2, 0.2, rng))
        };
        EncoderVars {
            fwd: LstmVars {
                wx: t(vec![emb, 4 * hidden], rng),
                wh: t(vec![hidden, 4 * hidden], rng),
                b: t(vec![4 * hidden], rng),
            },
            bwd: LstmVars {
                wx: t(vec![emb, 4 * hidden], rng),
                wh: t(vec![hidden, 4 * hidden], rng),
                b: t(vec![4 * hidden], rng),
            },
            coatt_u: t(vec![2 * hidden, 2 * hidden], rng),
        }
    }

    #[test]
    fn identical_question_and_sentence_share_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::<f64>::new();
        let vars = encoder_vars(&mut tape, 3, 4, &mut rng);
        let words = Tensor::uniform(vec![5, 3], -1.0, 1.0, &mut rng);
        let q = tape.constant(words.clone());
        let s = tape.constant(words);
        let (h_q, h_s, _) = encode_shared(&mut tape, &vars, q, &[s], None).unwrap();
        assert_eq!(tape.value(h_q), tape.value(h_s[0]));
    }

    #[test]
    fn output_width_is_twice_the_hidden_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f64>::new();
        let vars = encoder_vars(&mut tape, 3, 4, &mut rng);
        let q = tape.constant(Tensor::uniform(vec![2, 3], -1.0, 1.0, &mut rng));
        let s = tape.constant(Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut rng));
        let out = encode(&mut tape, &vars, q, &[s], None).unwrap();
        assert_eq!(tape.shape(out.h_q), &[2, 8]);
        assert_eq!(tape.shape(out.m_s), &[1, 8]);
        assert_eq!(tape.shape(out.m_q), &[8]);
        assert_eq!(tape.shape(out.final_state), &[8]);
    }

    #[test]
    fn zero_alignment_gives_uniform_coattention() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::<f64>::new();
        let u = tape.leaf(Tensor::zeros(vec![4, 4]));
        let h_q = tape.constant(Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
        let h_s = tape.constant(Tensor::uniform(vec![5, 4], -1.0, 1.0, &mut rng));
        let (aq, as_) = coattend(&mut tape, u, h_q, h_s, &[true; 3], &[true; 5]).unwrap();
        for &v in tape.value(aq) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        for &v in tape.value(as_) {
            assert!((v - 1.0 / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_question_word_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::<f64>::new();
        let u = tape.leaf(Tensor::uniform(vec![4, 4], -0.5, 0.5, &mut rng));
        let h_q = tape.constant(Tensor::uniform(vec![1, 4], -1.0, 1.0, &mut rng));
        let h_s = tape.constant(Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
        let (aq, _) = coattend(&mut tape, u, h_q, h_s, &[true], &[true; 3]).unwrap();
        assert_eq!(tape.value(aq), &[1.0]);
    }

    #[test]
    fn hand_alignment_grid_reproduces_softmax_of_row_maxes() {
        // feed a grid through the same pooling the encoder uses: maxes
        // [0.5, 0.9] then softmax
        let mut tape = Tape::<f64>::new();
        let grid = tape.constant(Tensor::matrix(2, 2, vec![0.5, 0.1, 0.2, 0.9]));
        let maxes = tape.row_max(grid).unwrap();
        assert_eq!(tape.value(maxes), &[0.5, 0.9]);
        let alpha = tape.softmax(maxes).unwrap();
        let e0 = (0.5f64 - 0.9).exp();
        let expected0 = e0 / (e0 + 1.0);
        assert!((tape.value(alpha)[0] - expected0).abs() < 1e-12);
        assert!((tape.value(alpha)[0] + tape.value(alpha)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_roles_transposes_the_alignment() {
        // with a symmetric bilinear form, swapping question and sentence
        // swaps the two attention vectors
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::<f64>::new();
        let sym_data = {
            let raw = Tensor::uniform(vec![4, 4], -0.5, 0.5, &mut rng);
            let mut data = raw.data().to_vec();
            for i in 0..4 {
                for j in 0..i {
                    let avg = (data[i * 4 + j] + data[j * 4 + i]) / 2.0;
                    data[i * 4 + j] = avg;
                    data[j * 4 + i] = avg;
                }
            }
            Tensor::matrix(4, 4, data)
        };
        let u = tape.leaf(sym_data);
        let a = tape.constant(Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
        let b = tape.constant(Tensor::uniform(vec![5, 4], -1.0, 1.0, &mut rng));

        let (aq1, as1) = coattend(&mut tape, u, a, b, &[true; 3], &[true; 5]).unwrap();
        let (aq2, as2) = coattend(&mut tape, u, b, a, &[true; 5], &[true; 3]).unwrap();
        for (x, y) in tape.value(aq1).iter().zip(tape.value(as2)) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in tape.value(as1).iter().zip(tape.value(aq2)) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_words_are_excluded_from_coattention() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::<f64>::new();
        let u = tape.leaf(Tensor::uniform(vec![4, 4], -0.5, 0.5, &mut rng));
        let h_q = tape.constant(Tensor::uniform(vec![2, 4], -1.0, 1.0, &mut rng));
        let h_s = tape.constant(Tensor::uniform(vec![4, 4], -1.0, 1.0, &mut rng));
        let (aq, as_) =
            coattend(&mut tape, u, h_q, h_s, &[true, false], &[true, true, false, true]).unwrap();
        assert_eq!(tape.value(aq)[1], 0.0);
        assert_eq!(tape.value(as_)[2], 0.0);
        let sum: f64 = tape.value(as_).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_hot_attention_selects_a_word_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::<f64>::new();
        let h_q = tape.constant(Tensor::uniform(vec![2, 4], -1.0, 1.0, &mut rng));
        let h_s_data = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng);
        let h_s = tape.constant(h_s_data.clone());
        let aq = tape.constant(Tensor::vector(vec![0.5, 0.5]));
        let as_ = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let (_, m_s) =
            sentence_reps(&mut tape, h_q, &[h_s], &[aq], &[as_]).unwrap();
        assert_eq!(tape.value(m_s), &h_s_data.data()[4..8]);
    }

    #[test]
    fn duplicating_a_sentence_preserves_m_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let vars = encoder_vars(&mut tape, 3, 4, &mut rng);
        let q = tape.constant(Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut rng));
        let s_data = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng);
        let s1 = tape.constant(s_data.clone());
        let once = encode(&mut tape, &vars, q, &[s1], None).unwrap();

        let q2 = tape.constant(tape.tensor(q));
        let s2a = tape.constant(s_data.clone());
        let s2b = tape.constant(s_data);
        let twice = encode(&mut tape, &vars, q2, &[s2a, s2b], None).unwrap();

        for (a, b) in tape.value(once.m_q).iter().zip(tape.value(twice.m_q)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_reaches_the_word_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut tape = Tape::<f64>::new();
        let vars = encoder_vars(&mut tape, 3, 2, &mut rng);
        let q = tape.leaf(Tensor::uniform(vec![2, 3], -1.0, 1.0, &mut rng));
        let s = tape.leaf(Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut rng));
        let out = encode(&mut tape, &vars, q, &[s], None).unwrap();
        let pooled = tape.sum(out.m_q);
        let pooled2 = tape.sum(out.m_s);
        let loss = tape.add(pooled, pooled2).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(q).unwrap().iter().any(|&g| g != 0.0));
        assert!(tape.grad(s).unwrap().iter().any(|&g| g != 0.0));
    }
}
