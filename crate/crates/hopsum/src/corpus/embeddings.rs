//! Pretrained word-vector loading.
//!
//! The file format is one token followed by its vector components per line.
//! Vocabulary entries found in the file take the stored vector; everything
//! else is drawn uniformly from [-0.05, 0.05].

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// How much of the vocabulary the embedding file actually covered.
#[derive(Debug, Clone)]
pub struct EmbeddingReport {
    pub matched: usize,
    pub vocab_size: usize,
    /// lines whose component count disagreed with the requested dimension
    pub skipped_lines: usize,
}

impl EmbeddingReport {
    pub fn hit_rate(&self) -> f64 {
        if self.vocab_size == 0 {
            0.0
        } else {
            self.matched as f64 / self.vocab_size as f64
        }
    }
}

/// Build the |V| x dim embedding matrix for a vocabulary from a vector file.
pub fn load_embeddings<F: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<F>, EmbeddingReport)> {
    // random-first so that file order cannot influence unmatched rows
    let mut matrix = Tensor::uniform(vec![vocab.size(), dim], -0.05, 0.05, rng);

    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut matched: HashSet<usize> = HashSet::new();
    let mut skipped = 0usize;

    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = match fields.next() {
            Some(t) => t,
            None => continue,
        };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            skipped += 1;
            continue;
        }
        let id = match vocab.id(token) {
            Some(id) => id,
            None => continue,
        };
        if !matched.insert(id) {
            continue; // first occurrence wins
        }
        let row = &mut matrix.data_mut()[id * dim..(id + 1) * dim];
        for (slot, text) in row.iter_mut().zip(&values) {
            let v: f64 = text.parse().map_err(|_| {
                Error::Dataset(format!(
                    "{}: non-numeric embedding component `{text}` for token `{token}`",
                    path.display()
                ))
            })?;
            *slot = F::from_f64(v);
        }
    }

    Ok((
        matrix,
        EmbeddingReport {
            matched: matched.len(),
            vocab_size: vocab.size(),
            skipped_lines: skipped,
        },
    ))
}
