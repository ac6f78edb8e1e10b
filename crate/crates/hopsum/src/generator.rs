//! The selective pointer decoder: per-view word attention with a coverage
//! feature, a sentence gate that reweights document attention, and a
//! three-way mixture of generating from the vocabulary, copying from the
//! question, and copying from the document.

use crate::error::{Error, Result};
use crate::numerics::{lstm_step, LstmVars, Scalar, Tape, Var};

/// Nonlinearity applied to the per-sentence gate scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Sigmoid,
    Softmax,
}

/// Attention parameters for one view (question or document).
#[derive(Debug, Clone, Copy)]
pub struct ViewAttnVars {
    /// word-state projection, d_h x d_a
    pub wh: Var,
    /// decoder-state projection, d_dec x d_a
    pub ws: Var,
    /// bias, d_a
    pub b: Var,
    /// readout, d_a
    pub v: Var,
    /// coverage feature weights, d_a
    pub wcov: Var,
}

/// Sentence-gate parameters.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    /// sentence-representation projection, d_h x d_a
    pub wz: Var,
    /// decoder-state projection, d_dec x d_a
    pub ws: Var,
    /// bias, d_a
    pub b: Var,
    /// readout, d_a
    pub v: Var,
}

/// Tape handles for all decoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars {
    pub dec: LstmVars,
    pub init_h_w: Var,
    pub init_h_b: Var,
    pub init_c_w: Var,
    pub init_c_b: Var,
    pub att_q: ViewAttnVars,
    pub att_d: ViewAttnVars,
    pub gate: GateVars,
    /// feature fusion, (d_dec + 2 d_h) x d_dec
    pub out_w1: Var,
    pub out_b1: Var,
    /// vocabulary projection, d_dec x |V|
    pub out_w2: Var,
    pub out_b2: Var,
    /// view-mixture projection, (d_dec + 2 d_h) x 3
    pub rho_w: Var,
    pub rho_b: Var,
}

/// One view's word states with the attention projection applied once, so
/// each decoding step only pays for the state-dependent part.
pub struct ViewAttention {
    pub h: Var,
    pub pre: Var,
    pub mask: Vec<bool>,
}

/// Project a view's word states for repeated attention queries.
pub fn prepare_view<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ViewAttnVars,
    h: Var,
    mask: Vec<bool>,
) -> Result<ViewAttention> {
    let pre = tape.matmul(h, vars.wh)?;
    Ok(ViewAttention { h, pre, mask })
}

/// Word attention over one view.
///
/// Scores are `e_i = vᵀ tanh(W_h H_i + W_s s_t + w_cov cov_i + b)`; the
/// coverage feature drops out when no coverage vector is supplied. Returns
/// the raw scores and the masked softmax.
pub fn attend_view<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ViewAttnVars,
    view: &ViewAttention,
    s: Var,
    coverage: Option<Var>,
) -> Result<(Var, Var)> {
    let mut base = view.pre;
    if let Some(cov) = coverage {
        let cov_term = tape.outer(cov, vars.wcov)?;
        base = tape.add(base, cov_term)?;
    }
    let query = tape.vecmat(s, vars.ws)?;
    let query = tape.add(query, vars.b)?;
    let shifted = tape.add_row_broadcast(base, query)?;
    let act = tape.tanh(shifted);
    let e = tape.matvec(act, vars.v)?;
    let alpha = tape.masked_softmax(e, &view.mask, 0)?;
    Ok((e, alpha))
}

/// Seed the decoder's hidden and cell state from the encoder's document
/// read state through separate learned tanh projections.
pub fn init_state<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &GeneratorVars,
    final_enc: Var,
) -> Result<(Var, Var)> {
    let h = tape.vecmat(final_enc, vars.init_h_w)?;
    let h = tape.add(h, vars.init_h_b)?;
    let h = tape.tanh(h);
    let c = tape.vecmat(final_enc, vars.init_c_w)?;
    let c = tape.add(c, vars.init_c_b)?;
    let c = tape.tanh(c);
    Ok((h, c))
}

/// Project the aggregated sentence matrix for repeated gate queries.
pub fn prepare_gate<F: Scalar>(tape: &mut Tape<F>, vars: &GateVars, z: Var) -> Result<Var> {
    tape.matmul(z, vars.wz)
}

/// Per-sentence gate values from the aggregated document representation and
/// the decoder state: independent sigmoids by default, a masked softmax
/// over sentences in the ablation mode.
pub fn gate_sentences<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &GateVars,
    gate_pre: Var,
    s: Var,
    mode: GateMode,
    sent_mask: &[bool],
) -> Result<Var> {
    let query = tape.vecmat(s, vars.ws)?;
    let query = tape.add(query, vars.b)?;
    let shifted = tape.add_row_broadcast(gate_pre, query)?;
    let act = tape.tanh(shifted);
    let scores = tape.matvec(act, vars.v)?;
    match mode {
        GateMode::Sigmoid => Ok(tape.sigmoid(scores)),
        GateMode::Softmax => tape.masked_softmax(scores, sent_mask, 0),
    }
}

/// Reweight word-level document attention by each word's sentence gate and
/// renormalize.
///
/// Returns the reweighted distribution and a flag that is true when the
/// denominator underflowed to zero and the input attention was passed
/// through unchanged.
pub fn reweight_doc_attention<F: Scalar>(
    tape: &mut Tape<F>,
    alpha_d: Var,
    beta: Var,
    word_sent: &[usize],
) -> Result<(Var, bool)> {
    let len = tape.shape(alpha_d)[0];
    if word_sent.len() != len {
        return Err(Error::BadShape {
            op: "reweight_doc_attention",
            expected: format!("sentence map of length {len}"),
            got: vec![word_sent.len()],
        });
    }
    let per_word = tape.gather_vec(beta, word_sent)?;
    let weighted = tape.mul(alpha_d, per_word)?;
    let denom = tape.sum(weighted);
    let d = tape.scalar_value(denom).to_f64();
    if !(d.is_finite() && d > 0.0) {
        return Ok((alpha_d, true));
    }
    let hat = tape.div_scalar(weighted, denom)?;
    Ok((hat, false))
}

/// Mix the vocabulary distribution with the two copy distributions under
/// the view weights `rho`, producing a distribution over the extended
/// vocabulary. Also returns the scattered question and document copy
/// distributions.
pub fn mix_views<F: Scalar>(
    tape: &mut Tape<F>,
    rho: Var,
    p_vocab: Var,
    alpha_q: Var,
    alpha_d_hat: Var,
    q_ext: &[usize],
    d_ext: &[usize],
    ext_size: usize,
) -> Result<(Var, Var, Var)> {
    let p_q = tape.scatter_add(alpha_q, q_ext, ext_size)?;
    let p_d = tape.scatter_add(alpha_d_hat, d_ext, ext_size)?;
    let p_v = tape.pad_zeros(p_vocab, ext_size)?;
    let rho_v = tape.index(rho, 0)?;
    let rho_q = tape.index(rho, 1)?;
    let rho_d = tape.index(rho, 2)?;
    let t_v = tape.mul_scalar(p_v, rho_v)?;
    let t_q = tape.mul_scalar(p_q, rho_q)?;
    let t_d = tape.mul_scalar(p_d, rho_d)?;
    let sum = tape.add(t_v, t_q)?;
    let p = tape.add(sum, t_d)?;
    Ok((p, p_q, p_d))
}

/// Everything produced by one decoding step.
pub struct StepOutput {
    pub alpha_q: Var,
    pub alpha_d: Var,
    pub alpha_d_hat: Var,
    pub beta: Var,
    pub ctx_q: Var,
    pub ctx_d: Var,
    pub rho: Var,
    pub p_vocab: Var,
    pub p_q: Var,
    pub p_d: Var,
    pub p_final: Var,
    /// new recurrent state
    pub h: Var,
    pub c: Var,
    /// coverage after adding this step's attention (present when coverage
    /// vectors were supplied)
    pub cov_q: Option<Var>,
    pub cov_d: Option<Var>,
    pub gate_fallback: bool,
}

/// Per-step inputs that stay fixed across the whole unroll of one example.
pub struct StepContext<'a> {
    pub qview: &'a ViewAttention,
    pub dview: &'a ViewAttention,
    pub gate_pre: Var,
    pub sent_mask: &'a [bool],
    pub q_ext: &'a [usize],
    pub d_ext: &'a [usize],
    pub ext_size: usize,
    pub word_sent: &'a [usize],
    pub gate_mode: GateMode,
    pub question_pointer: bool,
}

/// Advance the decoder one step: recurrent update, both attention views,
/// sentence gating, and the three-view mixture over the extended
/// vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn decoder_step<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &GeneratorVars,
    ctx: &StepContext,
    x_emb: Var,
    h_prev: Var,
    c_prev: Var,
    cov_q: Option<Var>,
    cov_d: Option<Var>,
    drop_mask: Option<&[F]>,
    step: usize,
) -> Result<StepOutput> {
    let (h, c) = lstm_step(tape, &vars.dec, x_emb, h_prev, c_prev)?;
    let s = match drop_mask {
        Some(m) => tape.mul_mask(h, m.to_vec())?,
        None => h,
    };

    let (_, alpha_q) = attend_view(tape, &vars.att_q, ctx.qview, s, cov_q)?;
    let (_, alpha_d) = attend_view(tape, &vars.att_d, ctx.dview, s, cov_d)?;

    let beta = gate_sentences(tape, &vars.gate, ctx.gate_pre, s, ctx.gate_mode, ctx.sent_mask)?;
    let (alpha_d_hat, gate_fallback) =
        reweight_doc_attention(tape, alpha_d, beta, ctx.word_sent)?;

    let ctx_q = tape.vecmat(alpha_q, ctx.qview.h)?;
    let ctx_d = tape.vecmat(alpha_d_hat, ctx.dview.h)?;

    let feat = tape.concat(&[s, ctx_q, ctx_d])?;
    let fused = tape.vecmat(feat, vars.out_w1)?;
    let fused = tape.add(fused, vars.out_b1)?;
    let logits = tape.vecmat(fused, vars.out_w2)?;
    let logits = tape.add(logits, vars.out_b2)?;
    let p_vocab = tape.softmax(logits)?;

    let rho_logits = tape.vecmat(feat, vars.rho_w)?;
    let rho_logits = tape.add(rho_logits, vars.rho_b)?;
    let rho_mask = if ctx.question_pointer {
        vec![true, true, true]
    } else {
        vec![true, false, true]
    };
    let rho = tape.masked_softmax(rho_logits, &rho_mask, 0)?;

    let (p_final, p_q, p_d) = mix_views(
        tape,
        rho,
        p_vocab,
        alpha_q,
        alpha_d_hat,
        ctx.q_ext,
        ctx.d_ext,
        ctx.ext_size,
    )?;
    if tape.value(p_final).iter().any(|v| !v.to_f64().is_finite()) {
        return Err(Error::NonFinite {
            context: format!("decoder step {step}: probability over extended vocabulary"),
        });
    }

    let cov_q = match cov_q {
        Some(cv) => Some(tape.add(cv, alpha_q)?),
        None => None,
    };
    let cov_d = match cov_d {
        Some(cv) => Some(tape.add(cv, alpha_d_hat)?),
        None => None,
    };

    Ok(StepOutput {
        alpha_q,
        alpha_d,
        alpha_d_hat,
        beta,
        ctx_q,
        ctx_d,
        rho,
        p_vocab,
        p_q,
        p_d,
        p_final,
        h,
        c,
        cov_q,
        cov_d,
        gate_fallback,
    })
}
