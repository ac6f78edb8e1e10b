//! Frequency-ranked vocabulary with fixed reserved ids.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{tokenize, RawExample};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token table mapping between strings and dense ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    /// fraction of training-token occurrences covered by retained entries
    pub coverage: f64,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id for a token, falling back to the unknown id.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Token string for an id in the extended space, where ids at and above
    /// the vocabulary size index into the example's own out-of-vocabulary
    /// list.
    pub fn decode_extended<'a>(&'a self, id: usize, oovs: &'a [String]) -> &'a str {
        if id < self.size() {
            self.token(id)
        } else {
            &oovs[id - self.size()]
        }
    }

    /// Write "token\tcount" lines ordered by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (token, count) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{token}\t{count}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a table written by [`Vocabulary::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, count) = line.split_once('\t').ok_or_else(|| {
                Error::Dataset(format!(
                    "{}:{}: expected token<TAB>count",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let count: u64 = count.parse().map_err(|_| {
                Error::Dataset(format!(
                    "{}:{}: bad count `{count}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            tokens.push(token.to_string());
            counts.push(count);
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expected) {
                return Err(Error::Dataset(format!(
                    "{}: id {i} must be the reserved token {expected}",
                    path.display()
                )));
            }
        }
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            tokens,
            ids,
            counts,
            coverage: 1.0,
        })
    }
}

/// Count tokens over a training split and keep the `max_size` most frequent
/// (reserved entries included in the budget). Ties break lexicographically.
pub fn build_vocab(examples: &[RawExample], max_size: usize) -> Vocabulary {
    assert!(
        max_size > RESERVED.len(),
        "vocabulary budget must exceed the reserved entries"
    );
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut bump = |text: &str| {
        for tok in tokenize(text) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    };
    for ex in examples {
        bump(&ex.question);
        for sentence in ex.document.sentences() {
            bump(&sentence);
        }
        bump(&ex.answer);
    }

    let total_occurrences: u64 = freq.values().sum();
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let keep = max_size - RESERVED.len();
    let kept_occurrences: u64 = ranked.iter().take(keep).map(|(_, c)| c).sum();
    ranked.truncate(keep);

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let mut counts: Vec<u64> = vec![0; RESERVED.len()];
    for (tok, count) in ranked {
        tokens.push(tok);
        counts.push(count);
    }
    let ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let coverage = if total_occurrences == 0 {
        1.0
    } else {
        kept_occurrences as f64 / total_occurrences as f64
    };
    Vocabulary {
        tokens,
        ids,
        counts,
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use crate::corpus::Document;

    use super::*;

    fn example(question: &str, doc: &str, answer: &str) -> RawExample {
        RawExample {
            id: "t".into(),
            question: question.into(),
            document: Document::Text(doc.into()),
            answer: answer.into(),
        }
    }

    #[test]
    fn frequency_order_with_reserved_prefix() {
        // a appears 3 times, b twice, c once
        let exs = vec![example("a a", "a b.", "b c")];
        let vocab = build_vocab(&exs, 2 + 4);
        assert_eq!(vocab.size(), 6);
        assert_eq!(vocab.id("a"), Some(4));
        assert_eq!(vocab.id("b"), Some(5));
        assert_eq!(vocab.id("c"), None);
        assert_eq!(vocab.id_or_unk("c"), UNK);
        assert_eq!(vocab.token(PAD), "<pad>");
        assert_eq!(vocab.token(EOS), "</s>");
    }

    #[test]
    fn ties_break_lexicographically() {
        let exs = vec![example("b a", "b a.", "x")];
        let vocab = build_vocab(&exs, 10);
        assert_eq!(vocab.id("a"), Some(4));
        assert_eq!(vocab.id("b"), Some(5));
    }

    #[test]
    fn truncation_reports_coverage() {
        // 6 occurrences total; keeping {a: 3, b: 2} covers 5 of 6
        let exs = vec![example("a a", "a b", "b c")];
        let vocab = build_vocab(&exs, 6);
        assert!((vocab.coverage - 5.0 / 6.0).abs() < 1e-12);
        let full = build_vocab(&exs, 20);
        assert_eq!(full.coverage, 1.0);
    }

    #[test]
    fn construction_is_pure() {
        let exs = vec![
            example("how to fix", "Pick it up. Turn it over.", "turn it"),
            example("what now", "Wait here.", "wait"),
        ];
        let a = build_vocab(&exs, 16);
        let b = build_vocab(&exs, 16);
        assert_eq!(a.size(), b.size());
        for id in 0..a.size() {
            assert_eq!(a.token(id), b.token(id));
        }
    }

    #[test]
    fn extended_decoding_reaches_oov_entries() {
        let exs = vec![example("a", "b.", "a")];
        let vocab = build_vocab(&exs, 10);
        let oovs = vec!["zephyr".to_string()];
        assert_eq!(vocab.decode_extended(4, &oovs), vocab.token(4));
        assert_eq!(vocab.decode_extended(vocab.size(), &oovs), "zephyr");
    }

    #[test]
    fn save_load_round_trip() {
        let exs = vec![example("a a b", "c d. C d.", "e")];
        let vocab = build_vocab(&exs, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        for id in 0..vocab.size() {
            assert_eq!(loaded.token(id), vocab.token(id));
            assert_eq!(loaded.id(vocab.token(id)), Some(id));
        }
    }

    #[test]
    fn load_rejects_missing_reserved_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        std::fs::write(&path, "apple\t3\nbanana\t2\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }
}
