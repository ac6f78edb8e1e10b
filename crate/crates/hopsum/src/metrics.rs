//! Answer quality measurement and extractive baselines: clipped n-gram
//! overlap, longest-common-subsequence overlap, n-gram duplication rates,
//! and the lead and maximal-marginal-relevance sentence selectors.
//!
//! All scores work on token sequences from the corpus tokenizer, so casing
//! and punctuation are handled one way everywhere.

use std::collections::HashMap;

use crate::corpus::tokenize;

/// Precision, recall, and their harmonic mean for one overlap measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: f64, cand_total: f64, ref_total: f64) -> RougeScore {
        let precision = if cand_total > 0.0 { overlap / cand_total } else { 0.0 };
        let recall = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    pub fn zero() -> RougeScore {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// N-gram overlap with clipping: each candidate n-gram counts at most as
/// often as the reference contains it.
pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> RougeScore {
    if n == 0 {
        return RougeScore::zero();
    }
    let cand_counts = ngram_counts(cand, n);
    let ref_counts = ngram_counts(reference, n);
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(*ref_counts.get(gram).unwrap_or(&0)))
        .sum();
    let cand_total = cand.len().saturating_sub(n - 1).min(cand.len());
    let ref_total = reference.len().saturating_sub(n - 1).min(reference.len());
    RougeScore::from_counts(overlap as f64, cand_total as f64, ref_total as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Longest-common-subsequence overlap.
pub fn rouge_l(cand: &[String], reference: &[String]) -> RougeScore {
    let lcs = lcs_len(cand, reference) as f64;
    RougeScore::from_counts(lcs, cand.len() as f64, reference.len() as f64)
}

/// Convenience wrapper that tokenizes both sides first.
pub fn rouge_l_text(cand: &str, reference: &str) -> RougeScore {
    rouge_l(&tokenize(cand), &tokenize(reference))
}

/// Component-wise mean, zero on an empty slice.
pub fn mean_rouge(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::zero();
    }
    let n = scores.len() as f64;
    RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

/// Repeated n-gram share of one answer: one minus distinct over total.
/// Answers with no n-gram of this order carry no signal.
pub fn duplication_rate(tokens: &[String], n: usize) -> Option<f64> {
    if n == 0 || tokens.len() < n {
        return None;
    }
    let total = tokens.len() - n + 1;
    let distinct = ngram_counts(tokens, n).len();
    Some(1.0 - distinct as f64 / total as f64)
}

/// Mean duplication over the answers long enough to have an n-gram.
pub fn corpus_duplication(answers: &[Vec<String>], n: usize) -> f64 {
    let rates: Vec<f64> = answers
        .iter()
        .filter_map(|a| duplication_rate(a, n))
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// First `k` sentences joined as an answer.
pub fn lead_answer(sentences: &[String], k: usize) -> String {
    sentences[..k.min(sentences.len())].join(" ")
}

/// Term-frequency inverse-document-frequency cosine similarities: each
/// sentence against the question, and every sentence pair. The inverse
/// document frequency is fitted on this example alone, question included.
pub fn tfidf_similarities(question: &str, sentences: &[String]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let docs: Vec<Vec<String>> = std::iter::once(tokenize(question))
        .chain(sentences.iter().map(|s| tokenize(s)))
        .collect();
    let n_docs = docs.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let vectors: Vec<HashMap<&str, f64>> = docs
        .iter()
        .map(|doc| {
            let mut tf: HashMap<&str, f64> = HashMap::new();
            for term in doc {
                *tf.entry(term).or_insert(0.0) += 1.0;
            }
            for (term, value) in tf.iter_mut() {
                let idf = ((1.0 + n_docs) / (1.0 + df[term] as f64)).ln() + 1.0;
                *value *= idf;
            }
            tf
        })
        .collect();
    let cos = |a: &HashMap<&str, f64>, b: &HashMap<&str, f64>| -> f64 {
        let dot: f64 = a
            .iter()
            .map(|(t, &x)| x * b.get(t).copied().unwrap_or(0.0))
            .sum();
        let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let relevance: Vec<f64> = vectors[1..].iter().map(|v| cos(v, &vectors[0])).collect();
    let pairwise: Vec<Vec<f64>> = vectors[1..]
        .iter()
        .map(|a| vectors[1..].iter().map(|b| cos(a, b)).collect())
        .collect();
    (relevance, pairwise)
}

/// Greedy maximal-marginal-relevance selection. Each round picks the
/// sentence maximizing relevance to the question minus the worst overlap
/// with anything already selected, weighted by `lambda`. Returns indices
/// in selection order; ties go to the lower index.
pub fn mmr_select(question: &str, sentences: &[String], k: usize, lambda: f64) -> Vec<usize> {
    let (relevance, pairwise) = tfidf_similarities(question, sentences);
    let mut selected: Vec<usize> = Vec::new();
    while selected.len() < k.min(sentences.len()) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..sentences.len() {
            if selected.contains(&i) {
                continue;
            }
            let penalty = selected
                .iter()
                .map(|&j| pairwise[i][j])
                .fold(0.0, f64::max);
            let score = lambda * relevance[i] - (1.0 - lambda) * penalty;
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        selected.push(best.expect("unselected sentences remain").0);
    }
    selected
}

/// Selected sentences joined in document order.
pub fn mmr_answer(question: &str, sentences: &[String], k: usize, lambda: f64) -> String {
    let mut picks = mmr_select(question, sentences, k, lambda);
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}
