//! LSTM building blocks shared by the encoder, per-hop refiners, and decoder.
//!
//! Weights use a packed gate layout: the input projection maps `input_dim` to
//! `4 * hidden` and the recurrent projection `hidden` to `4 * hidden`, with
//! gates ordered input, forget, output, candidate.

use crate::error::{Error, Result};

use super::{Scalar, Tape, Var};

/// Tape handles for one direction's LSTM weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// input projection, `input_dim x 4*hidden`
    pub wx: Var,
    /// recurrent projection, `hidden x 4*hidden`
    pub wh: Var,
    /// gate bias, `4*hidden`
    pub b: Var,
}

impl LstmVars {
    pub fn hidden_dim<F: Scalar>(&self, tape: &Tape<F>) -> usize {
        tape.shape(self.wh)[0]
    }
}

/// One LSTM cell update. Returns the new hidden and cell states.
pub fn lstm_step<F: Scalar>(
    tape: &mut Tape<F>,
    w: &LstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hidden = w.hidden_dim(tape);
    let xs = tape.shape(x).to_vec();
    if xs.len() != 1 || xs[0] != tape.shape(w.wx)[0] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            lhs: xs,
            rhs: tape.shape(w.wx).to_vec(),
        });
    }

    let from_x = tape.vecmat(x, w.wx)?;
    let from_h = tape.vecmat(h_prev, w.wh)?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add(pre, w.b)?;

    let i_pre = tape.slice_vec(pre, 0, hidden)?;
    let f_pre = tape.slice_vec(pre, hidden, hidden)?;
    let o_pre = tape.slice_vec(pre, 2 * hidden, hidden)?;
    let g_pre = tape.slice_vec(pre, 3 * hidden, hidden)?;

    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

/// Output of a bidirectional pass over one sequence.
pub struct BiLstmOut {
    /// per-position states, `len x 2*hidden` (forward then backward halves)
    pub states: Var,
    /// final forward hidden state
    pub last_fwd: Var,
    /// final backward hidden state (state at position 0 of the reverse pass)
    pub last_bwd: Var,
}

/// Run forward and backward LSTMs over rows of `xs` (a `len x input_dim`
/// matrix) and concatenate per-position states.
pub fn bilstm<F: Scalar>(
    tape: &mut Tape<F>,
    fwd: &LstmVars,
    bwd: &LstmVars,
    xs: Var,
) -> Result<BiLstmOut> {
    let shape = tape.shape(xs).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::BadShape {
            op: "bilstm",
            expected: "non-empty 2-d input".into(),
            got: shape,
        });
    }
    let len = shape[0];
    let hidden = fwd.hidden_dim(tape);

    let mut h = tape.zeros_vec(hidden);
    let mut c = tape.zeros_vec(hidden);
    let mut fwd_states = Vec::with_capacity(len);
    for t in 0..len {
        let x = tape.row(xs, t)?;
        let (nh, nc) = lstm_step(tape, fwd, x, h, c)?;
        h = nh;
        c = nc;
        fwd_states.push(h);
    }
    let last_fwd = h;

    let mut h = tape.zeros_vec(hidden);
    let mut c = tape.zeros_vec(hidden);
    let mut bwd_states = vec![last_fwd; len];
    for t in (0..len).rev() {
        let x = tape.row(xs, t)?;
        let (nh, nc) = lstm_step(tape, bwd, x, h, c)?;
        h = nh;
        c = nc;
        bwd_states[t] = h;
    }
    let last_bwd = h;

    let mut rows = Vec::with_capacity(len);
    for t in 0..len {
        rows.push(tape.concat(&[fwd_states[t], bwd_states[t]])?);
    }
    let states = tape.stack_rows(&rows)?;
    Ok(BiLstmOut {
        states,
        last_fwd,
        last_bwd,
    })
}
