//! The two-phase training loop: plain likelihood training first, then the
//! coverage penalty joins the objective. Batches are rebuilt each epoch
//! from a seeded shuffle, gradients are norm-clipped, and parameters are
//! checkpointed every epoch alongside a best-by-dev-loss copy.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{make_batch, Batch, RawExample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{attach_model, teacher_forced, ExampleView};
use crate::numerics::{adagrad_step, clip_gradients, collect_grads, ParamStore, Scalar, Tape};
use crate::training::config::TrainConfig;
use crate::training::loss::{mvc_loss, nll_loss, LossBreakdown};

/// One optimizer step's losses, logged as a JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub nll: f64,
    pub cov: f64,
    pub total: f64,
}

/// One epoch's summary.
#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: usize,
    pub coverage_phase: bool,
    pub train: LossBreakdown,
    pub dev: Option<LossBreakdown>,
}

/// Everything a training run reports back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    pub logs: Vec<BatchLog>,
    pub best_epoch: usize,
    pub gate_fallbacks: usize,
}

struct BatchRun<F: Scalar> {
    tape: Tape<F>,
    vars: std::collections::BTreeMap<String, crate::numerics::Var>,
    total: crate::numerics::Var,
    losses: LossBreakdown,
    gate_fallbacks: usize,
}

fn run_batch<F: Scalar>(
    cfg: &TrainConfig,
    vocab_size: usize,
    store: &ParamStore<F>,
    batch: &Batch,
    coverage: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchRun<F>> {
    let mut tape = Tape::<F>::new();
    let (model, vars) = attach_model(store, &mut tape);
    let mut nll_terms = Vec::with_capacity(batch.len());
    let mut cov_terms = Vec::with_capacity(batch.len());
    let mut gate_fallbacks = 0;
    for b in 0..batch.len() {
        let ex = ExampleView::from_batch(batch, b);
        let fwd = teacher_forced(
            &mut tape,
            &model,
            cfg,
            &ex,
            vocab_size,
            coverage,
            dropout_rng.as_deref_mut(),
        )?;
        gate_fallbacks += fwd.gate_fallbacks;
        nll_terms.push(nll_loss(&mut tape, &fwd.steps, &ex.target)?);
        if coverage {
            cov_terms.push(mvc_loss(&mut tape, &fwd.steps)?);
        }
    }
    let nll_stack = tape.concat(&nll_terms)?;
    let nll_mean = tape.mean(nll_stack);
    let (cov_value, total) = if coverage {
        let cov_stack = tape.concat(&cov_terms)?;
        let cov_mean = tape.mean(cov_stack);
        let scaled = tape.scale(cov_mean, F::from_f64(cfg.lambda_cov));
        let total = tape.add(nll_mean, scaled)?;
        (tape.scalar_value(cov_mean).to_f64(), total)
    } else {
        (0.0, nll_mean)
    };
    let losses = LossBreakdown {
        nll: tape.scalar_value(nll_mean).to_f64(),
        cov: cov_value,
        total: tape.scalar_value(total).to_f64(),
    };
    Ok(BatchRun {
        tape,
        vars,
        total,
        losses,
        gate_fallbacks,
    })
}

fn batched<'a>(examples: &[&'a RawExample], batch_size: usize) -> Vec<Vec<RawExample>> {
    examples
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&ex| ex.clone()).collect())
        .collect()
}

/// Average loss of a dataset under the current parameters, without dropout
/// or updates.
pub fn dataset_loss<F: Scalar>(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    examples: &[RawExample],
    store: &ParamStore<F>,
    coverage: bool,
) -> Result<LossBreakdown> {
    let limits = cfg.limits();
    let mut nll = 0.0;
    let mut cov = 0.0;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(cfg.batch_size) {
        let batch = make_batch(chunk, vocab, &limits)?;
        let run = run_batch(cfg, vocab.size(), store, &batch, coverage, None)?;
        let w = batch.len() as f64;
        nll += run.losses.nll * w;
        cov += run.losses.cov * w;
        total += run.losses.total * w;
        count += batch.len();
    }
    let n = count.max(1) as f64;
    Ok(LossBreakdown {
        nll: nll / n,
        cov: cov / n,
        total: total / n,
    })
}

/// Run the two-phase schedule from `start_epoch` (0 to resume-free train).
///
/// Epochs below `phase1_epochs` optimize the likelihood alone; later epochs
/// add the scaled coverage loss when the coverage switch is on. Each epoch
/// shuffles with an epoch-keyed seed so interrupted runs can resume
/// exactly from a checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Scalar>(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train_set: &[RawExample],
    dev_set: &[RawExample],
    store: &mut ParamStore<F>,
    start_epoch: usize,
    checkpoint_dir: Option<&Path>,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let limits = cfg.limits();
    let total_epochs = cfg.phase1_epochs + cfg.phase2_epochs;
    let mut outcome = TrainOutcome {
        epochs: Vec::new(),
        logs: Vec::new(),
        best_epoch: start_epoch,
        gate_fallbacks: 0,
    };
    let mut best_loss = f64::INFINITY;

    for epoch in start_epoch..total_epochs {
        let coverage = cfg.mvc && epoch >= cfg.phase1_epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64);
        let mut order: Vec<&RawExample> = train_set.iter().collect();
        order.shuffle(&mut rng);

        let mut epoch_nll = 0.0;
        let mut epoch_cov = 0.0;
        let mut epoch_total = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in batched(&order, cfg.batch_size).into_iter().enumerate() {
            let batch = make_batch(&chunk, vocab, &limits)?;
            let mut run = run_batch(
                cfg,
                vocab.size(),
                store,
                &batch,
                coverage,
                Some(&mut rng),
            )?;
            if !run.losses.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            run.tape.backward(run.total)?;
            let mut grads = collect_grads(&run.tape, &run.vars);
            clip_gradients(&mut grads, cfg.clip_norm);
            adagrad_step(store, &grads, F::from_f64(cfg.lr))?;

            outcome.gate_fallbacks += run.gate_fallbacks;
            let entry = BatchLog {
                epoch,
                batch: batch_idx,
                nll: run.losses.nll,
                cov: run.losses.cov,
                total: run.losses.total,
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&entry)?;
                writeln!(w, "{line}").map_err(|e| Error::io("<train log>", e))?;
            }
            outcome.logs.push(entry);

            let w = batch.len() as f64;
            epoch_nll += run.losses.nll * w;
            epoch_cov += run.losses.cov * w;
            epoch_total += run.losses.total * w;
            seen += batch.len();
        }

        let n = seen.max(1) as f64;
        let train_losses = LossBreakdown {
            nll: epoch_nll / n,
            cov: epoch_cov / n,
            total: epoch_total / n,
        };
        let dev_losses = if dev_set.is_empty() {
            None
        } else {
            Some(dataset_loss(cfg, vocab, dev_set, store, coverage)?)
        };

        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            store.save(&dir.join(format!("epoch_{epoch}.ckpt")))?;
        }
        let gauge = dev_losses.map(|d| d.total).unwrap_or(train_losses.total);
        if gauge < best_loss {
            best_loss = gauge;
            outcome.best_epoch = epoch;
            if let Some(dir) = checkpoint_dir {
                store.save(&dir.join("best.ckpt"))?;
            }
        }

        outcome.epochs.push(EpochSummary {
            epoch,
            coverage_phase: coverage,
            train: train_losses,
            dev: dev_losses,
        });
    }
    Ok(outcome)
}
