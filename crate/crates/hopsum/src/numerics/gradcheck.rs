//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{GradMap, ParamStore};

/// Outcome of a gradient check over sampled parameter coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// worst relative discrepancy seen
    pub max_rel_err: f64,
    /// parameter name and flat coordinate where it occurred
    pub worst_param: String,
    pub worst_coord: usize,
    /// analytic and numeric values at the worst coordinate
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// number of coordinates compared
    pub checked: usize,
}

/// Compare the analytic gradients of `f` against central finite differences.
///
/// `f` evaluates the loss on the given parameters and returns it together
/// with its analytic gradients (typically one tape forward plus backward).
/// For each parameter, up to `samples_per_param` coordinates are drawn with
/// the seeded generator, nudged by `±eps`, and re-evaluated. The report
/// carries the maximum relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`; the floor keeps
/// coordinates whose gradient sits at roundoff scale from swamping the reading
/// with finite-difference noise. The caller decides what tolerance to enforce,
/// so nondifferentiable points are reported rather than asserted away.
pub fn grad_check<E>(
    mut f: impl FnMut(&ParamStore<f64>) -> std::result::Result<(f64, GradMap<f64>), E>,
    params: &mut ParamStore<f64>,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    E: std::fmt::Display,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let run = |f: &mut dyn FnMut(&ParamStore<f64>) -> std::result::Result<(f64, GradMap<f64>), E>,
               params: &ParamStore<f64>,
               context: &str|
     -> Result<(f64, GradMap<f64>)> {
        let (loss, grads) = f(params).map_err(|e| Error::Config(format!("{context}: {e}")))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient check {context} loss"),
            });
        }
        Ok((loss, grads))
    };

    let (_, analytic) = run(&mut f, params, "base evaluation")?;

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };

    for name in &names {
        let len = params.get(name).len();
        if len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..len)).collect()
        };
        for coord in coords {
            let original = params.get(name).data()[coord];

            params.value_mut(name).data_mut()[coord] = original + eps;
            let (up, _) = run(&mut f, params, "plus-eps evaluation")?;
            params.value_mut(name).data_mut()[coord] = original - eps;
            let (down, _) = run(&mut f, params, "minus-eps evaluation")?;
            params.value_mut(name).data_mut()[coord] = original;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g[coord]);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_coord = coord;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
