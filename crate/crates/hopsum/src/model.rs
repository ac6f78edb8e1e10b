//! Assembles the full network: parameter construction, the encoder to
//! multi-hop to decoder forward pass for one example, and the
//! teacher-forced unroll that training and evaluation both run on.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::corpus::Batch;
use crate::encoder::{encode, EncoderVars};
use crate::error::Result;
use crate::generator::{
    decoder_step, init_state, prepare_gate, prepare_view, GateVars, GeneratorVars, StepContext,
    StepOutput, ViewAttention, ViewAttnVars,
};
use crate::multihop::{aggregate_hops, run_hops, HopConfig, HopTrace, HopVars};
use crate::numerics::{LstmVars, ParamStore, Scalar, Tape, Var};
use crate::training::TrainConfig;

/// One example's unpadded view into a batch.
pub struct ExampleView<'a> {
    pub id: &'a str,
    pub question: Vec<usize>,
    pub question_ext: Vec<usize>,
    pub sentences: Vec<Vec<usize>>,
    pub sentences_ext: Vec<Vec<usize>>,
    pub target: Vec<usize>,
    pub decoder_input: Vec<usize>,
    pub oovs: &'a [String],
}

impl<'a> ExampleView<'a> {
    pub fn from_batch(batch: &'a Batch, b: usize) -> Self {
        let take = |ids: &[usize], mask: &[bool]| -> Vec<usize> {
            ids.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&id, _)| id)
                .collect()
        };
        let n = batch.sentence_count(b);
        let mut sentences = Vec::with_capacity(n);
        let mut sentences_ext = Vec::with_capacity(n);
        for i in 0..batch.sentence_mask[b].len() {
            if !batch.sentence_mask[b][i] {
                continue;
            }
            sentences.push(take(&batch.sentences[b][i], &batch.word_mask[b][i]));
            sentences_ext.push(take(&batch.sentences_ext[b][i], &batch.word_mask[b][i]));
        }
        ExampleView {
            id: &batch.ids[b],
            question: take(&batch.question[b], &batch.question_mask[b]),
            question_ext: take(&batch.question_ext[b], &batch.question_mask[b]),
            sentences,
            sentences_ext,
            target: take(&batch.target[b], &batch.target_mask[b]),
            decoder_input: take(&batch.decoder_input[b], &batch.target_mask[b]),
            oovs: &batch.oovs[b],
        }
    }

    pub fn ext_size(&self, vocab_size: usize) -> usize {
        vocab_size + self.oovs.len()
    }
}

/// Tape handles for every parameter, grouped by module.
pub struct ModelVars {
    pub embedding: Var,
    pub enc: EncoderVars,
    pub hops: HopVars,
    pub agg_w: Var,
    pub agg_v: Var,
    pub gen: GeneratorVars,
}

/// Create and initialize every parameter the configuration calls for.
pub fn build_params<F: Scalar>(
    cfg: &TrainConfig,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> ParamStore<F> {
    let emb = cfg.emb_dim;
    let h = cfg.enc_hidden;
    let dh = cfg.d_h();
    let d = cfg.dec_hidden;
    let da = cfg.attn_dim;
    let (lo, hi) = (cfg.init_low, cfg.init_high);

    let mut store = ParamStore::new();
    let p = |store: &mut ParamStore<F>, name: String, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
        store.init_uniform(&name, shape, lo, hi, rng);
    };

    p(&mut store, "embedding".into(), vec![vocab_size, emb], rng);
    for dir in ["fwd", "bwd"] {
        p(&mut store, format!("enc.{dir}.wx"), vec![emb, 4 * h], rng);
        p(&mut store, format!("enc.{dir}.wh"), vec![h, 4 * h], rng);
        p(&mut store, format!("enc.{dir}.b"), vec![4 * h], rng);
    }
    p(&mut store, "coatt.u".into(), vec![dh, dh], rng);
    for k in 0..cfg.hops {
        for dir in ["fwd", "bwd"] {
            p(&mut store, format!("hop{k}.{dir}.wx"), vec![dh, 4 * h], rng);
            p(&mut store, format!("hop{k}.{dir}.wh"), vec![h, 4 * h], rng);
            p(&mut store, format!("hop{k}.{dir}.b"), vec![4 * h], rng);
        }
    }
    p(&mut store, "att_unit.w".into(), vec![2 * dh, da], rng);
    p(&mut store, "att_unit.v".into(), vec![da], rng);
    p(&mut store, "mar.u1".into(), vec![dh, dh], rng);
    p(&mut store, "mar.u2".into(), vec![dh, dh], rng);
    p(&mut store, "hopagg.w".into(), vec![dh, da], rng);
    p(&mut store, "hopagg.v".into(), vec![da], rng);

    p(&mut store, "dec.wx".into(), vec![emb, 4 * d], rng);
    p(&mut store, "dec.wh".into(), vec![d, 4 * d], rng);
    p(&mut store, "dec.b".into(), vec![4 * d], rng);
    p(&mut store, "dec_init.h.w".into(), vec![dh, d], rng);
    p(&mut store, "dec_init.h.b".into(), vec![d], rng);
    p(&mut store, "dec_init.c.w".into(), vec![dh, d], rng);
    p(&mut store, "dec_init.c.b".into(), vec![d], rng);
    for view in ["att_q", "att_d"] {
        p(&mut store, format!("{view}.wh"), vec![dh, da], rng);
        p(&mut store, format!("{view}.ws"), vec![d, da], rng);
        p(&mut store, format!("{view}.b"), vec![da], rng);
        p(&mut store, format!("{view}.v"), vec![da], rng);
        p(&mut store, format!("{view}.wcov"), vec![da], rng);
    }
    p(&mut store, "gate.wz".into(), vec![dh, da], rng);
    p(&mut store, "gate.ws".into(), vec![d, da], rng);
    p(&mut store, "gate.b".into(), vec![da], rng);
    p(&mut store, "gate.v".into(), vec![da], rng);
    p(&mut store, "out.w1".into(), vec![d + 2 * dh, d], rng);
    p(&mut store, "out.b1".into(), vec![d], rng);
    p(&mut store, "out.w2".into(), vec![d, vocab_size], rng);
    p(&mut store, "out.b2".into(), vec![vocab_size], rng);
    p(&mut store, "rho.w".into(), vec![d + 2 * dh, 3], rng);
    p(&mut store, "rho.b".into(), vec![3], rng);

    store.fill_accumulators(F::from_f64(cfg.init_acc));
    store
}

/// Put every parameter on the tape and group the handles.
pub fn attach_model<F: Scalar>(
    store: &ParamStore<F>,
    tape: &mut Tape<F>,
) -> (ModelVars, BTreeMap<String, Var>) {
    let vars = store.attach(tape);
    let g = |n: &str| -> Var {
        *vars
            .get(n)
            .unwrap_or_else(|| panic!("parameter {n} missing from store"))
    };
    let lstm = |prefix: &str| LstmVars {
        wx: g(&format!("{prefix}.wx")),
        wh: g(&format!("{prefix}.wh")),
        b: g(&format!("{prefix}.b")),
    };
    let view = |prefix: &str| ViewAttnVars {
        wh: g(&format!("{prefix}.wh")),
        ws: g(&format!("{prefix}.ws")),
        b: g(&format!("{prefix}.b")),
        v: g(&format!("{prefix}.v")),
        wcov: g(&format!("{prefix}.wcov")),
    };
    let mut refiners = Vec::new();
    for k in 0.. {
        if !vars.contains_key(&format!("hop{k}.fwd.wx")) {
            break;
        }
        refiners.push((lstm(&format!("hop{k}.fwd")), lstm(&format!("hop{k}.bwd"))));
    }
    let model = ModelVars {
        embedding: g("embedding"),
        enc: EncoderVars {
            fwd: lstm("enc.fwd"),
            bwd: lstm("enc.bwd"),
            coatt_u: g("coatt.u"),
        },
        hops: HopVars {
            att_w: g("att_unit.w"),
            att_v: g("att_unit.v"),
            mar_u1: g("mar.u1"),
            mar_u2: g("mar.u2"),
            refiners,
        },
        agg_w: g("hopagg.w"),
        agg_v: g("hopagg.v"),
        gen: GeneratorVars {
            dec: lstm("dec"),
            init_h_w: g("dec_init.h.w"),
            init_h_b: g("dec_init.h.b"),
            init_c_w: g("dec_init.c.w"),
            init_c_b: g("dec_init.c.b"),
            att_q: view("att_q"),
            att_d: view("att_d"),
            gate: GateVars {
                wz: g("gate.wz"),
                ws: g("gate.ws"),
                b: g("gate.b"),
                v: g("gate.v"),
            },
            out_w1: g("out.w1"),
            out_b1: g("out.b1"),
            out_w2: g("out.w2"),
            out_b2: g("out.b2"),
            rho_w: g("rho.w"),
            rho_b: g("rho.b"),
        },
    };
    (model, vars)
}

fn dropout_mask<F: Scalar>(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<F> {
    use rand::Rng;
    let keep = 1.0 - p;
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                F::from_f64(1.0 / keep)
            } else {
                F::from_f64(0.0)
            }
        })
        .collect()
}

/// Everything the decoder needs about one encoded example, ready for
/// stepwise decoding.
pub struct PreparedExample {
    pub qview: ViewAttention,
    pub dview: ViewAttention,
    pub gate_pre: Var,
    pub sent_mask: Vec<bool>,
    pub q_ext: Vec<usize>,
    pub d_ext: Vec<usize>,
    pub word_sent: Vec<usize>,
    pub ext_size: usize,
    pub h0: Var,
    pub c0: Var,
    pub trace: HopTrace,
}

impl PreparedExample {
    pub fn step_ctx(&self, cfg: &TrainConfig) -> StepContext<'_> {
        StepContext {
            qview: &self.qview,
            dview: &self.dview,
            gate_pre: self.gate_pre,
            sent_mask: &self.sent_mask,
            q_ext: &self.q_ext,
            d_ext: &self.d_ext,
            ext_size: self.ext_size,
            word_sent: &self.word_sent,
            gate_mode: cfg.gate,
            question_pointer: cfg.question_pointer,
        }
    }
}

/// Encode one example through the shared encoder, co-attention, hops, and
/// aggregation, and set up the decoder's fixed per-example inputs.
///
/// `dropout_rng` enables inverted dropout on the encoder word states
/// (training only).
pub fn prepare_example<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    cfg: &TrainConfig,
    ex: &ExampleView,
    vocab_size: usize,
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<PreparedExample> {
    let q_emb = tape.gather_rows(vars.embedding, &ex.question)?;
    let mut sent_embs = Vec::with_capacity(ex.sentences.len());
    for s in &ex.sentences {
        sent_embs.push(tape.gather_rows(vars.embedding, s)?);
    }

    let drop_masks = match dropout_rng.as_deref_mut() {
        Some(rng) if cfg.dropout > 0.0 => {
            let dh = cfg.d_h();
            let mut masks = Vec::with_capacity(1 + ex.sentences.len());
            masks.push(dropout_mask::<F>(rng, ex.question.len() * dh, cfg.dropout));
            for s in &ex.sentences {
                masks.push(dropout_mask::<F>(rng, s.len() * dh, cfg.dropout));
            }
            Some(masks)
        }
        _ => None,
    };

    let enc = encode(tape, &vars.enc, q_emb, &sent_embs, drop_masks.as_deref())?;

    let n = ex.sentences.len();
    let sent_mask = vec![true; n];
    let hop_cfg = HopConfig {
        hops: cfg.hops,
        mar_unit: cfg.mar_unit,
        sentence_refiner: cfg.sentence_refiner,
        lambda_mar: cfg.lambda_mar,
    };
    let (states, trace) = run_hops(tape, &vars.hops, enc.m_s, enc.m_q, &sent_mask, &hop_cfg)?;
    let agg = aggregate_hops(tape, vars.agg_w, vars.agg_v, &states, cfg.aggregation)?;

    let qview = prepare_view(tape, &vars.gen.att_q, enc.h_q, vec![true; ex.question.len()])?;
    let d_len: usize = ex.sentences.iter().map(|s| s.len()).sum();
    let dview = prepare_view(tape, &vars.gen.att_d, enc.h_d, vec![true; d_len])?;
    let gate_pre = prepare_gate(tape, &vars.gen.gate, agg.z)?;
    let (h0, c0) = init_state(tape, &vars.gen, enc.final_state)?;

    let mut d_ext = Vec::with_capacity(d_len);
    let mut word_sent = Vec::with_capacity(d_len);
    for (i, s) in ex.sentences_ext.iter().enumerate() {
        for &id in s {
            d_ext.push(id);
            word_sent.push(i);
        }
    }

    Ok(PreparedExample {
        qview,
        dview,
        gate_pre,
        sent_mask,
        q_ext: ex.question_ext.clone(),
        d_ext,
        word_sent,
        ext_size: ex.ext_size(vocab_size),
        h0,
        c0,
        trace,
    })
}

/// One teacher-forced step's outputs plus the coverage the step started
/// from (what the coverage loss compares attention against).
pub struct StepRecord {
    pub out: StepOutput,
    pub cov_q_prev: Option<Var>,
    pub cov_d_prev: Option<Var>,
}

/// A full teacher-forced unroll of one example.
pub struct ExampleForward {
    pub steps: Vec<StepRecord>,
    pub trace: HopTrace,
    pub ext_size: usize,
    pub gate_fallbacks: usize,
}

/// Run the model over one example with the reference answer as decoder
/// input. `coverage` turns on the coverage attention feature and histories.
pub fn teacher_forced<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    cfg: &TrainConfig,
    ex: &ExampleView,
    vocab_size: usize,
    coverage: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleForward> {
    let prep = prepare_example(tape, vars, cfg, ex, vocab_size, &mut dropout_rng)?;
    let ctx = prep.step_ctx(cfg);

    let mut cov_q = coverage.then(|| tape.zeros_vec(ex.question.len()));
    let mut cov_d = coverage.then(|| tape.zeros_vec(prep.d_ext.len()));
    let mut h = prep.h0;
    let mut c = prep.c0;
    let mut steps = Vec::with_capacity(ex.decoder_input.len());
    let mut gate_fallbacks = 0;
    for (t, &input) in ex.decoder_input.iter().enumerate() {
        let x = tape.row(vars.embedding, input)?;
        let drop_mask = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => {
                Some(dropout_mask::<F>(rng, cfg.dec_hidden, cfg.dropout))
            }
            _ => None,
        };
        let out = decoder_step(
            tape,
            &vars.gen,
            &ctx,
            x,
            h,
            c,
            cov_q,
            cov_d,
            drop_mask.as_deref(),
            t,
        )?;
        if out.gate_fallback {
            gate_fallbacks += 1;
        }
        let record = StepRecord {
            cov_q_prev: cov_q,
            cov_d_prev: cov_d,
            out,
        };
        h = record.out.h;
        c = record.out.c;
        cov_q = record.out.cov_q;
        cov_d = record.out.cov_d;
        steps.push(record);
    }
    Ok(ExampleForward {
        steps,
        trace: prep.trace,
        ext_size: prep.ext_size,
        gate_fallbacks,
    })
}
