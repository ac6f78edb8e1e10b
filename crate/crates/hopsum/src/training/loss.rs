//! The two training losses: mean negative log likelihood of the reference
//! tokens, and a coverage penalty that charges each view for re-attending
//! to positions it has already used, weighted by how much that view
//! actually contributed to the output mixture.

use crate::error::{Error, Result};
use crate::model::StepRecord;
use crate::numerics::{Scalar, Tape, Var};

/// Loss values for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub nll: f64,
    pub cov: f64,
    pub total: f64,
}

/// Mean negative log likelihood of the target ids under per-step
/// distributions, with probabilities clamped at 1e-12 before the log.
pub fn nll_from_probs<F: Scalar>(
    tape: &mut Tape<F>,
    probs: &[Var],
    targets: &[usize],
) -> Result<Var> {
    if probs.len() != targets.len() {
        return Err(Error::BadShape {
            op: "nll_loss",
            expected: format!("{} target ids", probs.len()),
            got: vec![targets.len()],
        });
    }
    if probs.is_empty() {
        return Err(Error::Config("cannot score an empty target".into()));
    }
    let mut terms = Vec::with_capacity(probs.len());
    for (&p, &w) in probs.iter().zip(targets) {
        let pt = tape.index(p, w)?;
        let pt = tape.clamp_min(pt, F::from_f64(1e-12));
        terms.push(tape.ln(pt));
    }
    let stacked = tape.concat(&terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, F::from_f64(-1.0 / probs.len() as f64)))
}

/// Teacher-forced wrapper over [`nll_from_probs`].
pub fn nll_loss<F: Scalar>(
    tape: &mut Tape<F>,
    steps: &[StepRecord],
    targets: &[usize],
) -> Result<Var> {
    let probs: Vec<Var> = steps.iter().map(|s| s.out.p_final).collect();
    nll_from_probs(tape, &probs, targets)
}

/// One timestep's ingredients for the coverage loss.
pub struct CoverageStep {
    pub alpha_q: Var,
    pub cov_q: Var,
    pub alpha_d: Var,
    pub cov_d: Var,
    /// three-way view weights; only the two copy entries matter here
    pub rho: Var,
}

/// Coverage loss over a full unroll.
///
/// Per step, each copy view pays `sum_i min(alpha_i, coverage_i)` scaled by
/// its share of the copy mass `rho_v / (rho_q + rho_d)`; the step charges
/// are averaged over time.
pub fn mvc_from_parts<F: Scalar>(tape: &mut Tape<F>, steps: &[CoverageStep]) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::Config("cannot score an empty unroll".into()));
    }
    let mut terms = Vec::with_capacity(steps.len());
    for st in steps {
        let rho_q = tape.index(st.rho, 1)?;
        let rho_d = tape.index(st.rho, 2)?;
        let denom = tape.add(rho_q, rho_d)?;
        let denom = tape.clamp_min(denom, F::from_f64(1e-12));
        let rhat_q = tape.div_scalar(rho_q, denom)?;
        let rhat_d = tape.div_scalar(rho_d, denom)?;

        let overlap_q = tape.min2(st.alpha_q, st.cov_q)?;
        let charge_q = tape.sum(overlap_q);
        let weighted_q = tape.mul(rhat_q, charge_q)?;

        let overlap_d = tape.min2(st.alpha_d, st.cov_d)?;
        let charge_d = tape.sum(overlap_d);
        let weighted_d = tape.mul(rhat_d, charge_d)?;

        terms.push(tape.add(weighted_q, weighted_d)?);
    }
    let stacked = tape.concat(&terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, F::from_f64(1.0 / steps.len() as f64)))
}

/// Teacher-forced wrapper over [`mvc_from_parts`]. The document view is
/// charged on the gate-reweighted attention, the same distribution that
/// feeds the copy probabilities.
pub fn mvc_loss<F: Scalar>(tape: &mut Tape<F>, steps: &[StepRecord]) -> Result<Var> {
    let parts: Result<Vec<CoverageStep>> = steps
        .iter()
        .map(|rec| {
            let cov_q = rec.cov_q_prev.ok_or_else(|| {
                Error::Config("coverage loss needs coverage histories; run with coverage on".into())
            })?;
            let cov_d = rec.cov_d_prev.ok_or_else(|| {
                Error::Config("coverage loss needs coverage histories; run with coverage on".into())
            })?;
            Ok(CoverageStep {
                alpha_q: rec.out.alpha_q,
                cov_q,
                alpha_d: rec.out.alpha_d_hat,
                cov_d,
                rho: rec.out.rho,
            })
        })
        .collect();
    mvc_from_parts(tape, &parts?)
}

#[cfg(test)]
mod tests {
    use crate::numerics::Tensor;

    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mut tape = Tape::<f64>::new();
        let p1 = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let p2 = tape.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let loss = nll_from_probs(&mut tape, &[p1, p2], &[1, 0]).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn uniform_over_one_hundred_slots_scores_ln_one_hundred() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::vector(vec![0.01; 100]));
        let loss = nll_from_probs(&mut tape, &[p], &[42]).unwrap();
        assert!((tape.scalar_value(loss) - 4.6052).abs() < 1e-4);
    }

    #[test]
    fn vanishing_probabilities_are_clamped_before_the_log() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let loss = nll_from_probs(&mut tape, &[p], &[0]).unwrap();
        let v = tape.scalar_value(loss);
        assert!(v.is_finite());
        assert!((v - (-(1e-12f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::vector(vec![0.5, 0.5]));
        assert!(nll_from_probs(&mut tape, &[p], &[0, 1]).is_err());
    }

    fn coverage_step(
        tape: &mut Tape<f64>,
        alpha_d: Vec<f64>,
        cov_d: Vec<f64>,
        rho: Vec<f64>,
    ) -> CoverageStep {
        let alpha_q = tape.constant(Tensor::vector(vec![1.0]));
        let cov_q = tape.constant(Tensor::vector(vec![0.0]));
        CoverageStep {
            alpha_q,
            cov_q,
            alpha_d: tape.constant(Tensor::vector(alpha_d)),
            cov_d: tape.constant(Tensor::vector(cov_d)),
            rho: tape.constant(Tensor::vector(rho)),
        }
    }

    #[test]
    fn first_step_coverage_is_free() {
        let mut tape = Tape::<f64>::new();
        let st = coverage_step(
            &mut tape,
            vec![0.3, 0.7],
            vec![0.0, 0.0],
            vec![0.2, 0.3, 0.5],
        );
        let loss = mvc_from_parts(&mut tape, &[st]).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn repeating_a_one_hot_attention_costs_half_over_two_steps() {
        let mut tape = Tape::<f64>::new();
        // document view holds all copy mass; attention revisits position 0
        let s0 = coverage_step(
            &mut tape,
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.5, 0.0, 0.5],
        );
        let s1 = coverage_step(
            &mut tape,
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.0, 0.5],
        );
        let loss = mvc_from_parts(&mut tape, &[s0, s1]).unwrap();
        assert!((tape.scalar_value(loss) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn copy_shares_split_the_charge_between_views() {
        let mut tape = Tape::<f64>::new();
        // both views fully covered at their attended position; rho splits
        // the copy mass 1:3 between question and document
        let alpha_q = tape.constant(Tensor::vector(vec![1.0]));
        let cov_q = tape.constant(Tensor::vector(vec![1.0]));
        let st = CoverageStep {
            alpha_q,
            cov_q,
            alpha_d: tape.constant(Tensor::vector(vec![1.0])),
            cov_d: tape.constant(Tensor::vector(vec![1.0])),
            rho: tape.constant(Tensor::vector(vec![0.6, 0.1, 0.3])),
        };
        let loss = mvc_from_parts(&mut tape, &[st]).unwrap();
        // rhat_q = 0.25, rhat_d = 0.75, both charges are 1
        assert!((tape.scalar_value(loss) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn the_renormalized_copy_weights_always_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        for rho in [
            vec![0.98, 0.01, 0.01],
            vec![0.1, 0.6, 0.3],
            vec![0.0, 0.0, 1.0],
        ] {
            let r = tape.constant(Tensor::vector(rho));
            let rho_q = tape.index(r, 1).unwrap();
            let rho_d = tape.index(r, 2).unwrap();
            let denom = tape.add(rho_q, rho_d).unwrap();
            let denom = tape.clamp_min(denom, 1e-12);
            let rhat_q = tape.div_scalar(rho_q, denom).unwrap();
            let rhat_d = tape.div_scalar(rho_d, denom).unwrap();
            let total = tape.scalar_value(rhat_q) + tape.scalar_value(rhat_d);
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
