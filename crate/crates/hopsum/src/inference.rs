//! Decoding: greedy and beam search over a trained model, with copied
//! out-of-vocabulary words restored from each example's own word list.
//!
//! Both searches walk the decoder one step at a time, feeding the chosen
//! token back in (out-of-vocabulary copies fall back to the unknown-word
//! embedding). Beam search keeps a pool of finished candidates and ranks
//! them by average log probability at the end, so longer answers are not
//! punished for accumulating more terms.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batch, RawExample, Vocabulary, EOS, SOS, UNK};
use crate::error::{Error, Result};
use crate::generator::decoder_step;
use crate::model::{attach_model, prepare_example, ExampleView, ModelVars, PreparedExample};
use crate::multihop::HopTrace;
use crate::numerics::{ParamStore, Scalar, Tape, Var};
use crate::training::TrainConfig;

/// One decoded sequence: extended-vocabulary ids without the end marker.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub ids: Vec<usize>,
    /// summed token log probabilities, end marker included when finished
    pub logp: f64,
    pub avg_logp: f64,
    /// whether the end marker was reached before the length cap
    pub finished: bool,
}

/// A decoded answer with everything needed to report it.
#[derive(Debug, Clone)]
pub struct GeneratedAnswer {
    pub id: String,
    pub answer: String,
    pub ids: Vec<usize>,
    pub logp: f64,
    pub avg_logp: f64,
    pub finished: bool,
    /// per-hop sentence weights from the encoder pass
    pub hop_weights: Vec<Vec<f64>>,
}

/// Map an extended id onto an embeddable one.
fn feed_id(id: usize, vocab_size: usize) -> usize {
    if id >= vocab_size {
        UNK
    } else {
        id
    }
}

fn scored_steps(ids_emitted: usize, finished: bool) -> usize {
    (ids_emitted + usize::from(finished)).max(1)
}

/// Indices of the `k` largest entries, ties to the lower index.
fn top_k<F: Scalar>(p: &[F], k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    for (i, v) in p.iter().enumerate() {
        let v = v.to_f64();
        if best.len() < k || v > best.last().unwrap().1 {
            let pos = best
                .iter()
                .position(|&(_, b)| v > b)
                .unwrap_or(best.len());
            best.insert(pos, (i, v));
            best.truncate(k);
        }
    }
    best
}

fn ln_prob(p: f64) -> f64 {
    p.max(1e-12).ln()
}

#[derive(Clone)]
struct Hypothesis {
    ids: Vec<usize>,
    logp: f64,
    h: Var,
    c: Var,
    cov_q: Option<Var>,
    cov_d: Option<Var>,
}

impl Hypothesis {
    fn last(&self) -> usize {
        self.ids.last().copied().unwrap_or(SOS)
    }
}

/// Decode one prepared example by always taking the most probable token.
pub fn decode_greedy<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    cfg: &TrainConfig,
    prep: &PreparedExample,
    vocab_size: usize,
    coverage: bool,
) -> Result<Decoded> {
    let ctx = prep.step_ctx(cfg);
    let mut h = prep.h0;
    let mut c = prep.c0;
    let mut cov_q = coverage.then(|| tape.zeros_vec(prep.q_ext.len()));
    let mut cov_d = coverage.then(|| tape.zeros_vec(prep.d_ext.len()));
    let mut ids = Vec::new();
    let mut logp = 0.0;
    let mut finished = false;
    for step in 0..cfg.max_answer_len {
        let x = tape.row(vars.embedding, feed_id(ids.last().copied().unwrap_or(SOS), vocab_size))?;
        let out = decoder_step(tape, &vars.gen, &ctx, x, h, c, cov_q, cov_d, None, step)?;
        let best = top_k(tape.value(out.p_final), 1)[0];
        logp += ln_prob(best.1);
        h = out.h;
        c = out.c;
        cov_q = out.cov_q;
        cov_d = out.cov_d;
        if best.0 == EOS {
            finished = true;
            break;
        }
        ids.push(best.0);
    }
    let avg_logp = logp / scored_steps(ids.len(), finished) as f64;
    Ok(Decoded {
        ids,
        logp,
        avg_logp,
        finished,
    })
}

/// Decode one prepared example with beam search of the given width.
///
/// Finished candidates retire into a pool; the search stops once the pool
/// holds `width` answers or the length cap is hit, and the pool winner is
/// picked by average log probability.
pub fn decode_beam<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    cfg: &TrainConfig,
    prep: &PreparedExample,
    vocab_size: usize,
    coverage: bool,
    width: usize,
) -> Result<Decoded> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let ctx = prep.step_ctx(cfg);
    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        logp: 0.0,
        h: prep.h0,
        c: prep.c0,
        cov_q: coverage.then(|| tape.zeros_vec(prep.q_ext.len())),
        cov_d: coverage.then(|| tape.zeros_vec(prep.d_ext.len())),
    }];
    let mut done: Vec<Decoded> = Vec::new();

    for step in 0..cfg.max_answer_len {
        let mut candidates = Vec::with_capacity(live.len() * (width + 1));
        for hyp in &live {
            let x = tape.row(vars.embedding, feed_id(hyp.last(), vocab_size))?;
            let out = decoder_step(
                tape, &vars.gen, &ctx, x, hyp.h, hyp.c, hyp.cov_q, hyp.cov_d, None, step,
            )?;
            for (id, p) in top_k(tape.value(out.p_final), width + 1) {
                candidates.push(Hypothesis {
                    ids: {
                        let mut ids = hyp.ids.clone();
                        ids.push(id);
                        ids
                    },
                    logp: hyp.logp + ln_prob(p),
                    h: out.h,
                    c: out.c,
                    cov_q: out.cov_q,
                    cov_d: out.cov_d,
                });
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap());
        live.clear();
        for cand in candidates {
            if *cand.ids.last().unwrap() == EOS {
                if done.len() < width {
                    let ids: Vec<usize> =
                        cand.ids[..cand.ids.len() - 1].to_vec();
                    let avg = cand.logp / scored_steps(ids.len(), true) as f64;
                    done.push(Decoded {
                        ids,
                        logp: cand.logp,
                        avg_logp: avg,
                        finished: true,
                    });
                }
            } else if live.len() < width {
                live.push(cand);
            }
            if live.len() == width && done.len() >= width {
                break;
            }
        }
        if done.len() >= width || live.is_empty() {
            break;
        }
    }

    for hyp in live {
        let avg = hyp.logp / scored_steps(hyp.ids.len(), false) as f64;
        done.push(Decoded {
            ids: hyp.ids,
            logp: hyp.logp,
            avg_logp: avg,
            finished: false,
        });
    }
    done.sort_by(|a, b| {
        b.finished
            .cmp(&a.finished)
            .then(b.avg_logp.partial_cmp(&a.avg_logp).unwrap())
    });
    done.into_iter()
        .next()
        .ok_or_else(|| Error::Config("beam search produced no candidates".into()))
}

/// The `k` highest-weight sentence indices per hop, ties to the lower index.
pub fn top_justifications(trace: &HopTrace, k: usize) -> Vec<Vec<usize>> {
    trace
        .hops
        .iter()
        .map(|weights| {
            top_k(weights, k.min(weights.len()))
                .into_iter()
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// Run the full pipeline on one raw example and return the answer text.
pub fn generate<F: Scalar>(
    cfg: &TrainConfig,
    store: &ParamStore<F>,
    vocab: &Vocabulary,
    example: &RawExample,
) -> Result<GeneratedAnswer> {
    let batch = make_batch(std::slice::from_ref(example), vocab, &cfg.limits())?;
    let mut tape = Tape::<F>::new();
    let (model, _) = attach_model(store, &mut tape);
    let ex = ExampleView::from_batch(&batch, 0);
    let mut no_dropout: Option<&mut ChaCha8Rng> = None;
    let prep = prepare_example(&mut tape, &model, cfg, &ex, vocab.size(), &mut no_dropout)?;
    let decoded = if cfg.beam_size == 1 {
        decode_greedy(&mut tape, &model, cfg, &prep, vocab.size(), cfg.mvc)?
    } else {
        decode_beam(
            &mut tape,
            &model,
            cfg,
            &prep,
            vocab.size(),
            cfg.mvc,
            cfg.beam_size,
        )?
    };
    let words: Vec<&str> = decoded
        .ids
        .iter()
        .map(|&id| vocab.decode_extended(id, ex.oovs))
        .collect();
    Ok(GeneratedAnswer {
        id: ex.id.to_string(),
        answer: words.join(" "),
        ids: decoded.ids,
        logp: decoded.logp,
        avg_logp: decoded.avg_logp,
        finished: decoded.finished,
        hop_weights: prep.trace.hops,
    })
}
