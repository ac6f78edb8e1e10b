//! Adaptive-gradient parameter updates with global-norm clipping.

use std::collections::BTreeMap;

use crate::error::Result;

use super::{ParamStore, Scalar, Tape, Var};

/// Gradients keyed by parameter name.
pub type GradMap<F> = BTreeMap<String, Vec<F>>;

/// Pull gradients off a tape after `backward`, keyed by the attachment map
/// from [`ParamStore::attach`]. Parameters the loss never touched are absent.
pub fn collect_grads<F: Scalar>(tape: &Tape<F>, vars: &BTreeMap<String, Var>) -> GradMap<F> {
    let mut grads = GradMap::new();
    for (name, &var) in vars {
        if let Some(g) = tape.grad(var) {
            grads.insert(name.clone(), g.to_vec());
        }
    }
    grads
}

/// Euclidean norm over every gradient entry, computed in `f64`.
pub fn global_norm<F: Scalar>(grads: &GradMap<F>) -> f64 {
    let mut total = 0.0;
    for g in grads.values() {
        for &x in g {
            let x = x.to_f64();
            total += x * x;
        }
    }
    total.sqrt()
}

/// Scale all gradients down so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<F: Scalar>(grads: &mut GradMap<F>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = F::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x = *x * scale;
            }
        }
    }
    norm
}

/// One optimizer step: for each gradient, grow that parameter's squared
/// accumulator and move against the gradient scaled by `lr / sqrt(acc)`.
/// A non-finite gradient entry aborts with the parameter's name.
pub fn adagrad_step<F: Scalar>(
    store: &mut ParamStore<F>,
    grads: &GradMap<F>,
    lr: F,
) -> Result<()> {
    for (name, g) in grads {
        store.update(name, g, lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::numerics::Tensor;

    use super::*;

    fn scalar_store(value: f64, acc: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(value));
        store.fill_accumulators(acc);
        store
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // lr 0.15, accumulator 0.1, gradient 1: step is -0.15 / sqrt(1.1)
        let mut store = scalar_store(0.0, 0.1);
        let mut grads = GradMap::new();
        grads.insert("x".to_string(), vec![1.0]);
        adagrad_step(&mut store, &grads, 0.15).unwrap();
        let expected = -0.15 / 1.1f64.sqrt();
        let got = store.get("x").data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got + 0.14302).abs() < 1e-5);
    }

    #[test]
    fn repeated_identical_grads_shrink_the_step() {
        let mut store = scalar_store(0.0, 0.1);
        let mut grads = GradMap::new();
        grads.insert("x".to_string(), vec![1.0]);
        let mut prev_value = 0.0;
        let mut prev_step = f64::INFINITY;
        for _ in 0..10 {
            adagrad_step(&mut store, &grads, 0.15).unwrap();
            let value = store.get("x").data()[0];
            let step = (value - prev_value).abs();
            assert!(step < prev_step);
            prev_step = step;
            prev_value = value;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = scalar_store(0.0, 0.1);
        let mut grads = GradMap::new();
        grads.insert("x".to_string(), vec![f64::NAN]);
        let err = adagrad_step(&mut store, &grads, 0.15).unwrap_err();
        assert!(err.to_string().contains("x"), "{err}");
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads: GradMap<f64> = GradMap::new();
        grads.insert("a".to_string(), vec![3.0, 0.0]);
        grads.insert("b".to_string(), vec![0.0, 4.0]);
        let before = clip_gradients(&mut grads, 2.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((global_norm(&grads) - 2.0).abs() < 1e-12);
        // direction is preserved
        assert!((grads["a"][0] / grads["b"][1] - 3.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_gradients_are_left_alone() {
        let mut grads: GradMap<f64> = GradMap::new();
        grads.insert("a".to_string(), vec![0.3, 0.4]);
        let before = clip_gradients(&mut grads, 2.0);
        assert!((before - 0.5).abs() < 1e-12);
        assert_eq!(grads["a"], vec![0.3, 0.4]);
    }

    #[test]
    fn untouched_parameters_stay_fixed() {
        let mut store = ParamStore::<f64>::new();
        store.insert("used", Tensor::scalar(1.0));
        store.insert("unused", Tensor::scalar(1.0));
        store.fill_accumulators(0.1);
        let mut grads = GradMap::new();
        grads.insert("used".to_string(), vec![0.5]);
        adagrad_step(&mut store, &grads, 0.15).unwrap();
        assert_eq!(store.get("unused").data()[0], 1.0);
        assert!(store.get("used").data()[0] < 1.0);
    }
}
