//! Dataset ingestion and preparation: sentence splitting, tokenization,
//! vocabulary construction, pretrained-embedding loading, and batch assembly
//! with per-example extended-vocabulary copy indices.

mod batch;
mod dataset;
mod embeddings;
mod sentences;
mod tokenize;
mod vocab;

pub use batch::{make_batch, Batch, BatchLimits};
pub use dataset::{load_dataset, Document, LoadedDataset, RawExample, Split};
pub use embeddings::{load_embeddings, EmbeddingReport};
pub use sentences::split_sentences;
pub use tokenize::{detokenize, tokenize};
pub use vocab::{build_vocab, Vocabulary, EOS, PAD, SOS, UNK};
