//! Training configuration: hyperparameters, model sizes, input caps, and
//! the ablation switches, with a flat key-value file format and single-key
//! overrides so runs can be reproduced from a config echo.

use std::fmt;
use std::path::Path;

use crate::corpus::BatchLimits;
use crate::error::{Error, Result};
use crate::generator::GateMode;
use crate::multihop::AggregationMode;

/// Numeric precision the model runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub precision: Precision,

    // optimization
    pub lr: f64,
    pub init_acc: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub init_low: f64,
    pub init_high: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub lambda_cov: f64,
    pub lambda_mar: f64,

    // model sizes
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub attn_dim: usize,
    pub hops: usize,

    // input caps
    pub max_question_tokens: usize,
    pub max_sentences: usize,
    pub max_sentence_tokens: usize,
    pub max_answer_len: usize,

    // ablation switches
    pub mar_unit: bool,
    pub aggregation: AggregationMode,
    pub gate: GateMode,
    pub question_pointer: bool,
    pub mvc: bool,
    pub sentence_refiner: bool,

    // inference
    pub beam_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 13,
            precision: Precision::F32,
            lr: 0.15,
            init_acc: 0.1,
            dropout: 0.5,
            batch_size: 32,
            clip_norm: 2.0,
            init_low: -0.05,
            init_high: 0.05,
            phase1_epochs: 20,
            phase2_epochs: 5,
            lambda_cov: 0.1,
            lambda_mar: 0.5,
            vocab_size: 50_000,
            emb_dim: 300,
            enc_hidden: 256,
            dec_hidden: 256,
            attn_dim: 256,
            hops: 3,
            max_question_tokens: 30,
            max_sentences: 25,
            max_sentence_tokens: 40,
            max_answer_len: 50,
            mar_unit: true,
            aggregation: AggregationMode::Merge,
            gate: GateMode::Sigmoid,
            question_pointer: true,
            mvc: true,
            sentence_refiner: true,
            beam_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0) {
            problems.push("lr must be positive");
        }
        if !(self.init_acc > 0.0) {
            problems.push("init_acc must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            problems.push("clip_norm must be positive");
        }
        if self.init_low >= self.init_high {
            problems.push("init_low must be below init_high");
        }
        if !(0.0..=1.0).contains(&self.lambda_cov) {
            problems.push("lambda_cov must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda_mar) {
            problems.push("lambda_mar must lie in [0, 1]");
        }
        if self.vocab_size <= 4 {
            problems.push("vocab_size must exceed the 4 reserved tokens");
        }
        for (dim, name) in [
            (self.emb_dim, "emb_dim"),
            (self.enc_hidden, "enc_hidden"),
            (self.dec_hidden, "dec_hidden"),
            (self.attn_dim, "attn_dim"),
        ] {
            if dim == 0 {
                problems.push(match name {
                    "emb_dim" => "emb_dim must be positive",
                    "enc_hidden" => "enc_hidden must be positive",
                    "dec_hidden" => "dec_hidden must be positive",
                    _ => "attn_dim must be positive",
                });
            }
        }
        if self.hops == 0 {
            problems.push("hops must be at least 1");
        }
        if self.max_question_tokens == 0
            || self.max_sentences == 0
            || self.max_sentence_tokens == 0
            || self.max_answer_len == 0
        {
            problems.push("input caps must be at least 1");
        }
        if self.beam_size == 0 {
            problems.push("beam_size must be at least 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn limits(&self) -> BatchLimits {
        BatchLimits {
            max_question_tokens: self.max_question_tokens,
            max_sentences: self.max_sentences,
            max_sentence_tokens: self.max_sentence_tokens,
            max_answer_tokens: self.max_answer_len,
        }
    }

    /// Hidden width of the encoded word states (both directions).
    pub fn d_h(&self) -> usize {
        2 * self.enc_hidden
    }

    /// Set one field by its key name, parsing the value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad("precision (f32 or f64)")),
                }
            }
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "init_acc" => self.init_acc = value.parse().map_err(|_| bad("init_acc"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad("clip_norm"))?,
            "init_low" => self.init_low = value.parse().map_err(|_| bad("init_low"))?,
            "init_high" => self.init_high = value.parse().map_err(|_| bad("init_high"))?,
            "phase1_epochs" => {
                self.phase1_epochs = value.parse().map_err(|_| bad("phase1_epochs"))?
            }
            "phase2_epochs" => {
                self.phase2_epochs = value.parse().map_err(|_| bad("phase2_epochs"))?
            }
            "lambda_cov" => self.lambda_cov = value.parse().map_err(|_| bad("lambda_cov"))?,
            "lambda_mar" => self.lambda_mar = value.parse().map_err(|_| bad("lambda_mar"))?,
            "vocab_size" => self.vocab_size = value.parse().map_err(|_| bad("vocab_size"))?,
            "emb_dim" => self.emb_dim = value.parse().map_err(|_| bad("emb_dim"))?,
            "enc_hidden" => self.enc_hidden = value.parse().map_err(|_| bad("enc_hidden"))?,
            "dec_hidden" => self.dec_hidden = value.parse().map_err(|_| bad("dec_hidden"))?,
            "attn_dim" => self.attn_dim = value.parse().map_err(|_| bad("attn_dim"))?,
            "hops" => self.hops = value.parse().map_err(|_| bad("hops"))?,
            "max_question_tokens" => {
                self.max_question_tokens = value.parse().map_err(|_| bad("max_question_tokens"))?
            }
            "max_sentences" => {
                self.max_sentences = value.parse().map_err(|_| bad("max_sentences"))?
            }
            "max_sentence_tokens" => {
                self.max_sentence_tokens = value.parse().map_err(|_| bad("max_sentence_tokens"))?
            }
            "max_answer_len" => {
                self.max_answer_len = value.parse().map_err(|_| bad("max_answer_len"))?
            }
            "mar_unit" => self.mar_unit = parse_bool(value).ok_or_else(|| bad("mar_unit"))?,
            "aggregation" => {
                self.aggregation = match value {
                    "merge" => AggregationMode::Merge,
                    "last" => AggregationMode::Last,
                    "uniform" => AggregationMode::Uniform,
                    _ => return Err(bad("aggregation (merge, last, or uniform)")),
                }
            }
            "gate" => {
                self.gate = match value {
                    "sigmoid" => GateMode::Sigmoid,
                    "softmax" => GateMode::Softmax,
                    _ => return Err(bad("gate (sigmoid or softmax)")),
                }
            }
            "question_pointer" => {
                self.question_pointer = parse_bool(value).ok_or_else(|| bad("question_pointer"))?
            }
            "mvc" => self.mvc = parse_bool(value).ok_or_else(|| bad("mvc"))?,
            "sentence_refiner" => {
                self.sentence_refiner = parse_bool(value).ok_or_else(|| bad("sentence_refiner"))?
            }
            "beam_size" => self.beam_size = value.parse().map_err(|_| bad("beam_size"))?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file on top of the defaults.
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "on" => Some(true),
        "false" | "off" => Some(false),
        _ => None,
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "aggregation = {}", match self.aggregation {
            AggregationMode::Merge => "merge",
            AggregationMode::Last => "last",
            AggregationMode::Uniform => "uniform",
        })?;
        writeln!(f, "attn_dim = {}", self.attn_dim)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "beam_size = {}", self.beam_size)?;
        writeln!(f, "clip_norm = {}", self.clip_norm)?;
        writeln!(f, "dec_hidden = {}", self.dec_hidden)?;
        writeln!(f, "dropout = {}", self.dropout)?;
        writeln!(f, "emb_dim = {}", self.emb_dim)?;
        writeln!(f, "enc_hidden = {}", self.enc_hidden)?;
        writeln!(f, "gate = {}", match self.gate {
            GateMode::Sigmoid => "sigmoid",
            GateMode::Softmax => "softmax",
        })?;
        writeln!(f, "hops = {}", self.hops)?;
        writeln!(f, "init_acc = {}", self.init_acc)?;
        writeln!(f, "init_high = {}", self.init_high)?;
        writeln!(f, "init_low = {}", self.init_low)?;
        writeln!(f, "lambda_cov = {}", self.lambda_cov)?;
        writeln!(f, "lambda_mar = {}", self.lambda_mar)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "mar_unit = {}", self.mar_unit)?;
        writeln!(f, "max_answer_len = {}", self.max_answer_len)?;
        writeln!(f, "max_question_tokens = {}", self.max_question_tokens)?;
        writeln!(f, "max_sentence_tokens = {}", self.max_sentence_tokens)?;
        writeln!(f, "max_sentences = {}", self.max_sentences)?;
        writeln!(f, "mvc = {}", self.mvc)?;
        writeln!(f, "phase1_epochs = {}", self.phase1_epochs)?;
        writeln!(f, "phase2_epochs = {}", self.phase2_epochs)?;
        writeln!(f, "precision = {}", match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })?;
        writeln!(f, "question_pointer = {}", self.question_pointer)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "sentence_refiner = {}", self.sentence_refiner)?;
        writeln!(f, "vocab_size = {}", self.vocab_size)
    }
}
