//! Line-delimited dataset loading with per-line validation.
//!
//! Each line is a JSON record with fields `id`, `question`, `document`, and
//! `answer`; `document` is either running text or a pre-split sentence
//! array. Malformed lines are skipped and counted, but more than 1% of them
//! fails the whole load rather than silently training on a damaged file.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::corpus::split_sentences;
use crate::error::{Error, Result};

/// Which portion of the corpus a file represents; training records must
/// carry a non-empty answer, evaluation records may omit it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Document payload as it arrived on disk.
#[derive(Debug, Clone)]
pub enum Document {
    Text(String),
    Sentences(Vec<String>),
}

impl Document {
    /// Sentence list, splitting running text and passing pre-split input
    /// through unchanged (empty entries dropped).
    pub fn sentences(&self) -> Vec<String> {
        match self {
            Document::Text(text) => split_sentences(text),
            Document::Sentences(list) => list
                .iter()
                .filter(|s| !s.trim().is_empty())
                .cloned()
                .collect(),
        }
    }
}

/// One validated question/document/answer record.
#[derive(Debug, Clone)]
pub struct RawExample {
    pub id: String,
    pub question: String,
    pub document: Document,
    /// empty for evaluation records that ship without a reference
    pub answer: String,
}

/// Result of loading one file.
#[derive(Debug)]
pub struct LoadedDataset {
    pub examples: Vec<RawExample>,
    /// lines skipped by validation
    pub malformed: usize,
    /// non-blank lines seen
    pub total_lines: usize,
}

#[derive(Deserialize)]
struct Record {
    id: Option<String>,
    question: Option<String>,
    document: Option<DocField>,
    answer: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DocField {
    Text(String),
    Sentences(Vec<String>),
}

fn validate(record: Record, split: Split) -> Option<RawExample> {
    let id = record.id?;
    if id.trim().is_empty() {
        return None;
    }
    let question = record.question?;
    if question.trim().is_empty() {
        return None;
    }
    let document = match record.document? {
        DocField::Text(t) => {
            if t.trim().is_empty() {
                return None;
            }
            Document::Text(t)
        }
        DocField::Sentences(list) => {
            if !list.iter().any(|s| !s.trim().is_empty()) {
                return None;
            }
            Document::Sentences(list)
        }
    };
    let answer = record.answer.unwrap_or_default();
    if split == Split::Train && answer.trim().is_empty() {
        return None;
    }
    Some(RawExample {
        id,
        question,
        document,
        answer,
    })
}

/// Load and validate a dataset file.
pub fn load_dataset(path: &Path, split: Split) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut malformed = 0usize;
    let mut total_lines = 0usize;

    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let parsed: Option<RawExample> = serde_json::from_str::<Record>(&line)
            .ok()
            .and_then(|r| validate(r, split));
        match parsed {
            Some(ex) => examples.push(ex),
            None => malformed += 1,
        }
    }

    if total_lines > 0 && malformed as f64 > 0.01 * total_lines as f64 {
        return Err(Error::Dataset(format!(
            "{}: {malformed} of {total_lines} lines malformed (over the 1% budget)",
            path.display()
        )));
    }
    Ok(LoadedDataset {
        examples,
        malformed,
        total_lines,
    })
}
