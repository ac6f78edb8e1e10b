//! Multi-hop reweighting of sentence representations.
//!
//! Starting from the co-attended sentence matrix, each hop optionally
//! re-encodes the sentence sequence with its own bidirectional LSTM and then
//! rescales every sentence row by a relevance score. The first hop scores
//! sentences against the question alone; later hops add a mutual-attention
//! term so a sentence can be pulled in because it resembles an
//! already-relevant one. A final aggregation step collapses the per-hop
//! matrices into one document representation.

use crate::error::{Error, Result};
use crate::numerics::{bilstm, LstmVars, Scalar, Tape, Var};

/// Tape handles for the hop parameters. Scoring weights are shared across
/// hops; each hop owns one refiner.
#[derive(Debug)]
pub struct HopVars {
    /// question-relevance projection, 2d_h x d_a
    pub att_w: Var,
    /// question-relevance readout, d_a
    pub att_v: Var,
    /// bilinear question similarity, d_h x d_h
    pub mar_u1: Var,
    /// bilinear sentence-sentence similarity, d_h x d_h
    pub mar_u2: Var,
    /// per-hop sequence refiners (forward, backward)
    pub refiners: Vec<(LstmVars, LstmVars)>,
}

/// Switches controlling how the hops run.
#[derive(Debug, Clone, Copy)]
pub struct HopConfig {
    pub hops: usize,
    pub mar_unit: bool,
    pub sentence_refiner: bool,
    pub lambda_mar: f64,
}

/// One hop's outputs.
#[derive(Debug)]
pub struct HopState {
    /// 1-based hop index
    pub hop: usize,
    /// sentence matrix after this hop's refiner, n x d_h
    pub refined: Var,
    /// sentence matrix after rescaling, n x d_h
    pub weighted: Var,
    /// raw per-sentence weights: softmax attention on hop 1, sigmoid gates
    /// on mutual-attention hops (masked entries zero)
    pub scores: Var,
}

/// Per-hop sentence weights normalized for reporting; masked positions 0.
#[derive(Debug, Clone)]
pub struct HopTrace {
    pub hops: Vec<Vec<f64>>,
}

/// How per-hop sentence matrices combine into the document representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    Merge,
    Last,
    Uniform,
}

/// The aggregated document matrix plus, in merge mode, the per-sentence
/// distribution over hops.
#[derive(Debug)]
pub struct AggregatedDoc {
    pub z: Var,
    pub hop_weights: Option<Vec<Var>>,
}

fn mask_values<F: Scalar>(mask: &[bool]) -> Vec<F> {
    mask.iter()
        .map(|&m| F::from_f64(if m { 1.0 } else { 0.0 }))
        .collect()
}

/// Score sentences against the question and rescale their rows.
///
/// Each sentence row is concatenated with the question vector, projected
/// through a tanh layer, and read out to a scalar; a masked softmax over
/// sentences gives the scaling weights.
pub fn attentive_unit<F: Scalar>(
    tape: &mut Tape<F>,
    att_w: Var,
    att_v: Var,
    m_s: Var,
    m_q: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let n = tape.shape(m_s)[0];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.row(m_s, i)?;
        rows.push(tape.concat(&[row, m_q])?);
    }
    let cat = tape.stack_rows(&rows)?;
    let proj = tape.matmul(cat, att_w)?;
    let proj = tape.tanh(proj);
    let scores = tape.matvec(proj, att_v)?;
    let alpha = tape.masked_softmax(scores, mask, 0)?;
    let weighted = tape.scale_rows(m_s, alpha)?;
    Ok((weighted, alpha))
}

/// Mutual-attention relevance scores.
///
/// Blends a bilinear question similarity with the strongest
/// softmax-normalized similarity to any *other* unmasked sentence. With a
/// single unmasked sentence the second term is zero. Masked entries are
/// zeroed.
pub fn mar_scores<F: Scalar>(
    tape: &mut Tape<F>,
    mar_u1: Var,
    mar_u2: Var,
    m_s: Var,
    m_q: Var,
    mask: &[bool],
    lambda: f64,
) -> Result<Var> {
    let n = tape.shape(m_s)[0];
    if mask.len() != n {
        return Err(Error::BadShape {
            op: "mar_scores",
            expected: format!("mask of length {n}"),
            got: vec![mask.len()],
        });
    }
    let proj_q = tape.matmul(m_s, mar_u1)?;
    let sim_q = tape.matvec(proj_q, m_q)?;

    let proj_s = tape.matmul(m_s, mar_u2)?;
    let m_s_t = tape.transpose(m_s)?;
    let grid = tape.matmul(proj_s, m_s_t)?;
    let grid = tape.tanh(grid);

    let mut seconds = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i && mask[j]).collect();
        if !mask[i] || others.is_empty() {
            seconds.push(tape.zeros_vec(1));
            continue;
        }
        let row = tape.row(grid, i)?;
        let sub = tape.gather_vec(row, &others)?;
        let sm = tape.softmax(sub)?;
        seconds.push(tape.vec_max(sm)?);
    }
    let second = tape.concat(&seconds)?;

    let blended = {
        let a = tape.scale(sim_q, F::from_f64(lambda));
        let b = tape.scale(second, F::from_f64(1.0 - lambda));
        tape.add(a, b)?
    };
    tape.mul_mask(blended, mask_values(mask))
}

/// Rescale sentence rows by sigmoided mutual-attention scores; masked rows
/// come out zero.
pub fn mar_unit<F: Scalar>(
    tape: &mut Tape<F>,
    mar_u1: Var,
    mar_u2: Var,
    m_s: Var,
    m_q: Var,
    mask: &[bool],
    lambda: f64,
) -> Result<(Var, Var)> {
    let scores = mar_scores(tape, mar_u1, mar_u2, m_s, m_q, mask, lambda)?;
    let gates = tape.sigmoid(scores);
    let gates = tape.mul_mask(gates, mask_values(mask))?;
    let weighted = tape.scale_rows(m_s, gates)?;
    Ok((weighted, gates))
}

/// Run the configured number of hops over the sentence matrix.
///
/// Hop 1 always uses the question-attentive unit; later hops use the
/// mutual-attention unit unless it is switched off. Each hop's refiner
/// re-encodes the previous hop's output when the refiner is enabled.
pub fn run_hops<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &HopVars,
    m_s: Var,
    m_q: Var,
    mask: &[bool],
    cfg: &HopConfig,
) -> Result<(Vec<HopState>, HopTrace)> {
    if cfg.hops < 1 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    if cfg.sentence_refiner && vars.refiners.len() < cfg.hops {
        return Err(Error::Config(format!(
            "need {} sentence refiners, have {}",
            cfg.hops,
            vars.refiners.len()
        )));
    }

    let mut states = Vec::with_capacity(cfg.hops);
    let mut trace = Vec::with_capacity(cfg.hops);
    let mut current = m_s;
    for k in 0..cfg.hops {
        let refined = if cfg.sentence_refiner {
            let (fwd, bwd) = &vars.refiners[k];
            bilstm(tape, fwd, bwd, current)?.states
        } else {
            current
        };
        let (weighted, scores) = if k == 0 || !cfg.mar_unit {
            attentive_unit(tape, vars.att_w, vars.att_v, refined, m_q, mask)?
        } else {
            mar_unit(
                tape, vars.mar_u1, vars.mar_u2, refined, m_q, mask, cfg.lambda_mar,
            )?
        };
        trace.push(normalize_for_report(tape.value(scores), mask));
        states.push(HopState {
            hop: k + 1,
            refined,
            weighted,
            scores,
        });
        current = weighted;
    }
    Ok((states, HopTrace { hops: trace }))
}

fn normalize_for_report<F: Scalar>(scores: &[F], mask: &[bool]) -> Vec<f64> {
    let total: f64 = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| s.to_f64())
        .sum();
    scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| {
            if m && total > 0.0 {
                s.to_f64() / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Collapse per-hop sentence matrices into one document matrix.
pub fn aggregate_hops<F: Scalar>(
    tape: &mut Tape<F>,
    agg_w: Var,
    agg_v: Var,
    states: &[HopState],
    mode: AggregationMode,
) -> Result<AggregatedDoc> {
    if states.is_empty() {
        return Err(Error::Config("cannot aggregate zero hops".into()));
    }
    match mode {
        AggregationMode::Last => Ok(AggregatedDoc {
            z: states.last().unwrap().weighted,
            hop_weights: None,
        }),
        AggregationMode::Uniform => {
            let mut acc = states[0].weighted;
            for st in &states[1..] {
                acc = tape.add(acc, st.weighted)?;
            }
            let z = tape.scale(acc, F::from_f64(1.0 / states.len() as f64));
            Ok(AggregatedDoc {
                z,
                hop_weights: None,
            })
        }
        AggregationMode::Merge => {
            let n = tape.shape(states[0].weighted)[0];
            let mut z_rows = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for i in 0..n {
                let mut rows = Vec::with_capacity(states.len());
                for st in states {
                    rows.push(tape.row(st.weighted, i)?);
                }
                let stack = tape.stack_rows(&rows)?;
                let proj = tape.matmul(stack, agg_w)?;
                let proj = tape.tanh(proj);
                let sc = tape.matvec(proj, agg_v)?;
                let alpha = tape.softmax(sc)?;
                z_rows.push(tape.vecmat(alpha, stack)?);
                weights.push(alpha);
            }
            Ok(AggregatedDoc {
                z: tape.stack_rows(&z_rows)?,
                hop_weights: Some(weights),
            })
        }
    }
}
