//! Command-line entry point: vocabulary building, training, generation,
//! evaluation, hop tracing, and fixture generation.
//!
//! Every command resolves its configuration from defaults, an optional
//! `key = value` file, and per-key flag overrides, then echoes the result
//! to stderr so any run can be reproduced from its log. Machine-readable
//! output goes to stdout or the requested file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::corpus::{build_vocab, load_dataset, tokenize, RawExample, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::fixtures::{make_fixture, write_fixture, FixtureTask};
use crate::inference::{generate, top_justifications};
use crate::metrics::{
    corpus_duplication, lead_answer, mean_rouge, mmr_answer, rouge_l, rouge_n, RougeScore,
};
use crate::model::build_params;
use crate::numerics::{ParamStore, Scalar};
use crate::training::{train, Precision, TrainConfig};

/// Environment variable naming the directory dataset paths resolve under.
pub const DATA_ROOT_ENV: &str = "HOPSUM_DATA";

#[derive(Parser, Debug)]
#[command(
    name = "hopsum",
    about = "Question-driven abstractive summarization with multi-hop sentence selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Per-key configuration overrides; flags mirror the config file keys.
#[derive(Args, Default, Debug)]
struct Overrides {
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    #[arg(long, value_name = "f32|f64")]
    precision: Option<String>,
    #[arg(long, value_name = "X")]
    lr: Option<String>,
    #[arg(long, value_name = "X")]
    init_acc: Option<String>,
    #[arg(long, value_name = "X")]
    dropout: Option<String>,
    #[arg(long, value_name = "N")]
    batch_size: Option<String>,
    #[arg(long, value_name = "X")]
    clip_norm: Option<String>,
    #[arg(long, value_name = "X")]
    init_low: Option<String>,
    #[arg(long, value_name = "X")]
    init_high: Option<String>,
    #[arg(long, value_name = "N")]
    phase1_epochs: Option<String>,
    #[arg(long, value_name = "N")]
    phase2_epochs: Option<String>,
    #[arg(long, value_name = "X")]
    lambda_cov: Option<String>,
    #[arg(long, value_name = "X")]
    lambda_mar: Option<String>,
    #[arg(long, value_name = "N")]
    vocab_size: Option<String>,
    #[arg(long, value_name = "N")]
    emb_dim: Option<String>,
    #[arg(long, value_name = "N")]
    enc_hidden: Option<String>,
    #[arg(long, value_name = "N")]
    dec_hidden: Option<String>,
    #[arg(long, value_name = "N")]
    attn_dim: Option<String>,
    #[arg(long, value_name = "K")]
    hops: Option<String>,
    #[arg(long, value_name = "N")]
    max_question_tokens: Option<String>,
    #[arg(long, value_name = "N")]
    max_sentences: Option<String>,
    #[arg(long, value_name = "N")]
    max_sentence_tokens: Option<String>,
    #[arg(long, value_name = "N")]
    max_answer_len: Option<String>,
    #[arg(long, value_name = "on|off")]
    mar_unit: Option<String>,
    #[arg(long, value_name = "merge|last|uniform")]
    aggregation: Option<String>,
    #[arg(long, value_name = "sigmoid|softmax")]
    gate: Option<String>,
    #[arg(long, value_name = "on|off")]
    question_pointer: Option<String>,
    #[arg(long, value_name = "on|off")]
    mvc: Option<String>,
    #[arg(long, value_name = "on|off")]
    sentence_refiner: Option<String>,
    #[arg(long, value_name = "N")]
    beam_size: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("seed", &self.seed),
            ("precision", &self.precision),
            ("lr", &self.lr),
            ("init_acc", &self.init_acc),
            ("dropout", &self.dropout),
            ("batch_size", &self.batch_size),
            ("clip_norm", &self.clip_norm),
            ("init_low", &self.init_low),
            ("init_high", &self.init_high),
            ("phase1_epochs", &self.phase1_epochs),
            ("phase2_epochs", &self.phase2_epochs),
            ("lambda_cov", &self.lambda_cov),
            ("lambda_mar", &self.lambda_mar),
            ("vocab_size", &self.vocab_size),
            ("emb_dim", &self.emb_dim),
            ("enc_hidden", &self.enc_hidden),
            ("dec_hidden", &self.dec_hidden),
            ("attn_dim", &self.attn_dim),
            ("hops", &self.hops),
            ("max_question_tokens", &self.max_question_tokens),
            ("max_sentences", &self.max_sentences),
            ("max_sentence_tokens", &self.max_sentence_tokens),
            ("max_answer_len", &self.max_answer_len),
            ("mar_unit", &self.mar_unit),
            ("aggregation", &self.aggregation),
            ("gate", &self.gate),
            ("question_pointer", &self.question_pointer),
            ("mvc", &self.mvc),
            ("sentence_refiner", &self.sentence_refiner),
            ("beam_size", &self.beam_size),
        ]
        .into_iter()
        .filter_map(|(key, value)| value.as_deref().map(|v| (key, v)))
        .collect()
    }
}

#[derive(Args, Default, Debug)]
struct ConfigArgs {
    /// configuration file of `key = value` lines applied over the defaults
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        for (key, value) in self.overrides.pairs() {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count tokens in a training file and write the vocabulary
    BuildVocab {
        /// training data, one JSON object per line
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// vocabulary file to write
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the two-phase training schedule
    Train {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// held-out data for per-epoch loss reports and best-model choice
        #[arg(long, value_name = "FILE")]
        dev: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// directory for checkpoints, the training log, and the config echo
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// checkpoint to continue from
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// first epoch to run when resuming
        #[arg(long, value_name = "N", default_value_t = 0)]
        start_epoch: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode answers for a dataset with a trained checkpoint
    Generate {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// answers file (JSON lines); stdout when omitted
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score generated answers against references, with optional baselines
    Evaluate {
        /// reference data with questions, documents, and answers
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// generated answers (JSON lines with id and answer fields)
        #[arg(long, value_name = "FILE")]
        answers: Option<PathBuf>,
        /// also score the lead and relevance-selection baselines
        #[arg(long)]
        baselines: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode answers and report the sentences each hop weighted highest
    TraceHops {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// justification sentences to list per hop
        #[arg(long, value_name = "N", default_value_t = 3)]
        top: usize,
        /// trace file (JSON lines); stdout when omitted
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic dataset
    MakeFixtures {
        /// copy, multihop, or repetition
        #[arg(long, value_name = "TASK")]
        task: String,
        #[arg(long, value_name = "N", default_value_t = 64)]
        size: usize,
        #[arg(long, value_name = "N", default_value_t = 7)]
        seed: u64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

/// Resolve a dataset path under the data-root environment variable.
fn resolve_data(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn echo_config(cfg: &TrainConfig) {
    eprint!("{cfg}");
}

fn load_examples(path: &Path, split: Split) -> Result<Vec<RawExample>> {
    let resolved = resolve_data(path);
    let loaded = load_dataset(&resolved, split)?;
    if loaded.malformed > 0 {
        eprintln!(
            "{}: skipped {} of {} malformed lines",
            resolved.display(),
            loaded.malformed,
            loaded.total_lines
        );
    }
    Ok(loaded.examples)
}

fn cmd_build_vocab(data: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let cfg = config.resolve()?;
    echo_config(&cfg);
    let examples = load_examples(data, Split::Train)?;
    let vocab = build_vocab(&examples, cfg.vocab_size);
    vocab.save(out)?;
    eprintln!("examples = {}", examples.len());
    eprintln!("vocab_entries = {}", vocab.size());
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_at<F: Scalar>(
    cfg: &TrainConfig,
    data: &Path,
    dev: Option<&Path>,
    vocab_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    start_epoch: usize,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let train_set = load_examples(data, Split::Train)?;
    let dev_set = match dev {
        Some(p) => load_examples(p, Split::Dev)?,
        None => Vec::new(),
    };
    let mut store: ParamStore<F> = match resume {
        Some(ckpt) => ParamStore::load(ckpt)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            build_params(cfg, vocab.size(), &mut rng)
        }
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("config.cfg"), cfg.to_string())
        .map_err(|e| Error::io(out_dir.join("config.cfg"), e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(
        cfg,
        &vocab,
        &train_set,
        &dev_set,
        &mut store,
        start_epoch,
        Some(out_dir),
        Some(&mut log),
    )?;
    for summary in &outcome.epochs {
        match summary.dev {
            Some(dev) => eprintln!(
                "epoch {} train_loss = {:.6} dev_loss = {:.6} coverage = {}",
                summary.epoch, summary.train.total, dev.total, summary.coverage_phase
            ),
            None => eprintln!(
                "epoch {} train_loss = {:.6} coverage = {}",
                summary.epoch, summary.train.total, summary.coverage_phase
            ),
        }
    }
    eprintln!("best_epoch = {}", outcome.best_epoch);
    if outcome.gate_fallbacks > 0 {
        eprintln!("gate_fallbacks = {}", outcome.gate_fallbacks);
    }
    eprintln!("wrote checkpoints to {}", out_dir.display());
    Ok(())
}

fn open_sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        ),
        None => Box::new(std::io::stdout()),
    })
}

fn generate_at<F: Scalar>(
    cfg: &TrainConfig,
    data: &Path,
    vocab_path: &Path,
    checkpoint: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let store: ParamStore<F> = ParamStore::load(checkpoint)?;
    let examples = load_examples(data, Split::Test)?;
    let mut sink = open_sink(out)?;
    for ex in &examples {
        let answer = generate(cfg, &store, &vocab, ex)?;
        let line = serde_json::json!({
            "id": answer.id,
            "answer": answer.answer,
            "logp": answer.logp,
            "avg_logp": answer.avg_logp,
            "finished": answer.finished,
        });
        writeln!(sink, "{line}").map_err(|e| Error::io("<answers>", e))?;
    }
    eprintln!("generated {} answers", examples.len());
    Ok(())
}

fn trace_at<F: Scalar>(
    cfg: &TrainConfig,
    data: &Path,
    vocab_path: &Path,
    checkpoint: &Path,
    top: usize,
    out: Option<&Path>,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let store: ParamStore<F> = ParamStore::load(checkpoint)?;
    let examples = load_examples(data, Split::Test)?;
    let mut sink = open_sink(out)?;
    for ex in &examples {
        let answer = generate(cfg, &store, &vocab, ex)?;
        let trace = crate::multihop::HopTrace {
            hops: answer.hop_weights.clone(),
        };
        let line = serde_json::json!({
            "id": answer.id,
            "answer": answer.answer,
            "justifications": top_justifications(&trace, top),
        });
        writeln!(sink, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    eprintln!("traced {} examples", examples.len());
    Ok(())
}

#[derive(Deserialize)]
struct AnswerRecord {
    id: String,
    answer: String,
}

fn load_answers(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut answers = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: AnswerRecord = serde_json::from_str(line)?;
        answers.insert(record.id, record.answer);
    }
    Ok(answers)
}

struct ScoreBlock {
    rouge1: RougeScore,
    rouge2: RougeScore,
    rouge_l: RougeScore,
    duplication: [f64; 4],
}

fn score_answers(pairs: &[(Vec<String>, Vec<String>)]) -> ScoreBlock {
    let r1: Vec<RougeScore> = pairs.iter().map(|(c, r)| rouge_n(c, r, 1)).collect();
    let r2: Vec<RougeScore> = pairs.iter().map(|(c, r)| rouge_n(c, r, 2)).collect();
    let rl: Vec<RougeScore> = pairs.iter().map(|(c, r)| rouge_l(c, r)).collect();
    let candidates: Vec<Vec<String>> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let duplication =
        [1, 2, 3, 4].map(|n| corpus_duplication(&candidates, n));
    ScoreBlock {
        rouge1: mean_rouge(&r1),
        rouge2: mean_rouge(&r2),
        rouge_l: mean_rouge(&rl),
        duplication,
    }
}

fn print_block(label: &str, block: &ScoreBlock) {
    println!("{label}.rouge1_f1 = {:.4}", block.rouge1.f1);
    println!("{label}.rouge2_f1 = {:.4}", block.rouge2.f1);
    println!("{label}.rougeL_f1 = {:.4}", block.rouge_l.f1);
    println!("{label}.rougeL_precision = {:.4}", block.rouge_l.precision);
    println!("{label}.rougeL_recall = {:.4}", block.rouge_l.recall);
    for (i, d) in block.duplication.iter().enumerate() {
        println!("{label}.duplication_{} = {:.4}", i + 1, d);
    }
}

fn cmd_evaluate(
    data: &Path,
    answers: Option<&Path>,
    baselines: bool,
    config: &ConfigArgs,
) -> Result<()> {
    let cfg = config.resolve()?;
    echo_config(&cfg);
    let examples = load_examples(data, Split::Test)?;
    let with_refs: Vec<&RawExample> = examples
        .iter()
        .filter(|ex| !ex.answer.trim().is_empty())
        .collect();
    if with_refs.is_empty() {
        return Err(Error::Dataset(
            "no reference answers to evaluate against".into(),
        ));
    }
    println!("examples = {}", with_refs.len());

    if let Some(path) = answers {
        let generated = load_answers(path)?;
        let mut pairs = Vec::new();
        let mut missing = 0usize;
        for ex in &with_refs {
            match generated.get(&ex.id) {
                Some(answer) => pairs.push((tokenize(answer), tokenize(&ex.answer))),
                None => missing += 1,
            }
        }
        if pairs.is_empty() {
            return Err(Error::Dataset(format!(
                "{}: no answer ids match the reference data",
                path.display()
            )));
        }
        if missing > 0 {
            eprintln!("missing answers for {missing} examples");
        }
        println!("scored = {}", pairs.len());
        print_block("model", &score_answers(&pairs));
    }

    if baselines {
        let lead_pairs: Vec<(Vec<String>, Vec<String>)> = with_refs
            .iter()
            .map(|ex| {
                let sentences = ex.document.sentences();
                (tokenize(&lead_answer(&sentences, 3)), tokenize(&ex.answer))
            })
            .collect();
        print_block("lead3", &score_answers(&lead_pairs));
        let mmr_pairs: Vec<(Vec<String>, Vec<String>)> = with_refs
            .iter()
            .map(|ex| {
                let sentences = ex.document.sentences();
                (
                    tokenize(&mmr_answer(&ex.question, &sentences, 3, 0.7)),
                    tokenize(&ex.answer),
                )
            })
            .collect();
        print_block("mmr", &score_answers(&mmr_pairs));
    }
    Ok(())
}

fn cmd_make_fixtures(task: &str, size: usize, seed: u64, out: &Path) -> Result<()> {
    let task: FixtureTask = task.parse()?;
    let examples = make_fixture(task, size, seed);
    write_fixture(&examples, out)?;
    eprintln!("task = {task:?}");
    eprintln!("size = {size}");
    eprintln!("seed = {seed}");
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::BuildVocab { data, out, config } => cmd_build_vocab(data, out, config),
        Command::Train {
            data,
            dev,
            vocab,
            out_dir,
            resume,
            start_epoch,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            match cfg.precision {
                Precision::F32 => train_at::<f32>(
                    &cfg,
                    data,
                    dev.as_deref(),
                    vocab,
                    out_dir,
                    resume.as_deref(),
                    *start_epoch,
                ),
                Precision::F64 => train_at::<f64>(
                    &cfg,
                    data,
                    dev.as_deref(),
                    vocab,
                    out_dir,
                    resume.as_deref(),
                    *start_epoch,
                ),
            }
        }
        Command::Generate {
            data,
            vocab,
            checkpoint,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            match cfg.precision {
                Precision::F32 => {
                    generate_at::<f32>(&cfg, data, vocab, checkpoint, out.as_deref())
                }
                Precision::F64 => {
                    generate_at::<f64>(&cfg, data, vocab, checkpoint, out.as_deref())
                }
            }
        }
        Command::Evaluate {
            data,
            answers,
            baselines,
            config,
        } => cmd_evaluate(data, answers.as_deref(), *baselines, config),
        Command::TraceHops {
            data,
            vocab,
            checkpoint,
            top,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            match cfg.precision {
                Precision::F32 => {
                    trace_at::<f32>(&cfg, data, vocab, checkpoint, *top, out.as_deref())
                }
                Precision::F64 => {
                    trace_at::<f64>(&cfg, data, vocab, checkpoint, *top, out.as_deref())
                }
            }
        }
        Command::MakeFixtures {
            task,
            size,
            seed,
            out,
        } => cmd_make_fixtures(task, *size, *seed, out),
    }
}

fn category_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        Error::Dataset(_)
        | Error::BadExample { .. }
        | Error::Checkpoint(_)
        | Error::Io { .. }
        | Error::Json(_) => 3,
        _ => 4,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            category_code(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(args)
    }

    #[test]
    fn train_flags_override_the_configuration() {
        let cli = parse(&[
            "hopsum",
            "train",
            "--data",
            "train.jsonl",
            "--vocab",
            "v.txt",
            "--out-dir",
            "run",
            "--hops",
            "3",
            "--mvc",
            "off",
            "--beam-size",
            "2",
        ])
        .unwrap();
        match cli.command {
            Command::Train { config, .. } => {
                let cfg = config.resolve().unwrap();
                assert_eq!(cfg.hops, 3);
                assert!(!cfg.mvc);
                assert_eq!(cfg.beam_size, 2);
            }
            _ => panic!("expected train command"),
        }
    }

    #[test]
    fn unknown_flags_are_rejected() {
        let err = parse(&[
            "hopsum",
            "train",
            "--data",
            "d",
            "--vocab",
            "v",
            "--out-dir",
            "o",
            "--warp-speed",
            "9",
        ])
        .unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::UnknownArgument);
    }

    #[test]
    fn bad_override_values_become_config_errors() {
        let cli = parse(&[
            "hopsum",
            "evaluate",
            "--data",
            "d.jsonl",
            "--gate",
            "triangular",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate { config, .. } => {
                let err = config.resolve().unwrap_err();
                assert!(err.to_string().contains("gate"));
            }
            _ => panic!("expected evaluate command"),
        }
    }

    #[test]
    fn fixture_task_names_parse_and_unknown_names_do_not() {
        assert!(parse(&[
            "hopsum",
            "make-fixtures",
            "--task",
            "multihop",
            "--out",
            "f.jsonl"
        ])
        .is_ok());
        let cli = parse(&[
            "hopsum",
            "make-fixtures",
            "--task",
            "mystery",
            "--out",
            "f.jsonl",
        ])
        .unwrap();
        match cli.command {
            Command::MakeFixtures { task, .. } => {
                assert!(task.parse::<FixtureTask>().is_err());
            }
            _ => panic!("expected make-fixtures command"),
        }
    }

    #[test]
    fn every_config_key_has_a_matching_flag() {
        let mut cfg = TrainConfig::default();
        let overrides = Overrides {
            seed: Some("5".into()),
            precision: Some("f64".into()),
            lr: Some("0.2".into()),
            init_acc: Some("0.2".into()),
            dropout: Some("0.1".into()),
            batch_size: Some("8".into()),
            clip_norm: Some("1.5".into()),
            init_low: Some("-0.1".into()),
            init_high: Some("0.1".into()),
            phase1_epochs: Some("2".into()),
            phase2_epochs: Some("1".into()),
            lambda_cov: Some("0.2".into()),
            lambda_mar: Some("0.4".into()),
            vocab_size: Some("100".into()),
            emb_dim: Some("16".into()),
            enc_hidden: Some("8".into()),
            dec_hidden: Some("8".into()),
            attn_dim: Some("8".into()),
            hops: Some("2".into()),
            max_question_tokens: Some("10".into()),
            max_sentences: Some("5".into()),
            max_sentence_tokens: Some("12".into()),
            max_answer_len: Some("9".into()),
            mar_unit: Some("off".into()),
            aggregation: Some("last".into()),
            gate: Some("softmax".into()),
            question_pointer: Some("off".into()),
            mvc: Some("off".into()),
            sentence_refiner: Some("off".into()),
            beam_size: Some("3".into()),
        };
        assert_eq!(overrides.pairs().len(), 30);
        for (key, value) in overrides.pairs() {
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        cfg.validate().unwrap();
        assert_eq!(cfg.hops, 2);
        assert_eq!(cfg.precision, Precision::F64);
    }

    #[test]
    fn dataset_paths_resolve_under_the_data_root() {
        // no root: paths pass through
        std::env::remove_var(DATA_ROOT_ENV);
        assert_eq!(resolve_data(Path::new("x.jsonl")), PathBuf::from("x.jsonl"));
        std::env::set_var(DATA_ROOT_ENV, "/tmp/datasets");
        assert_eq!(
            resolve_data(Path::new("x.jsonl")),
            PathBuf::from("/tmp/datasets/x.jsonl")
        );
        assert_eq!(
            resolve_data(Path::new("/abs/x.jsonl")),
            PathBuf::from("/abs/x.jsonl"),
            "absolute paths are explicit"
        );
        std::env::remove_var(DATA_ROOT_ENV);
    }
}
