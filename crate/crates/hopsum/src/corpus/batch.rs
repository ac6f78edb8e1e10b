//! Batch assembly with per-example extended-vocabulary copy indices.
//!
//! Tokens missing from the vocabulary still need to be copyable, so each
//! example carries its own out-of-vocabulary list (first occurrence order,
//! question before document) and a parallel set of "extended" id sequences
//! where OOV tokens get ids at `vocab_size + list index`. Regular id
//! sequences map those tokens to the unknown id instead.

use crate::corpus::{tokenize, RawExample, Vocabulary, EOS, PAD, SOS, UNK};
use crate::error::{Error, Result};

/// Hard caps applied before padding.
#[derive(Debug, Clone)]
pub struct BatchLimits {
    pub max_question_tokens: usize,
    pub max_sentences: usize,
    pub max_sentence_tokens: usize,
    pub max_answer_tokens: usize,
}

impl Default for BatchLimits {
    fn default() -> Self {
        BatchLimits {
            max_question_tokens: 30,
            max_sentences: 25,
            max_sentence_tokens: 40,
            max_answer_tokens: 50,
        }
    }
}

/// A padded batch of encoded examples.
///
/// All sequence containers are padded to per-batch maxima; masks mark the
/// real positions. `target` lives in each example's extended id space and
/// ends with the end-of-sequence id; `decoder_input` is the same sequence
/// shifted right with the start id, expressed in plain vocabulary space.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub question: Vec<Vec<usize>>,
    pub question_ext: Vec<Vec<usize>>,
    pub question_mask: Vec<Vec<bool>>,
    pub sentences: Vec<Vec<Vec<usize>>>,
    pub sentences_ext: Vec<Vec<Vec<usize>>>,
    pub word_mask: Vec<Vec<Vec<bool>>>,
    pub sentence_mask: Vec<Vec<bool>>,
    pub oovs: Vec<Vec<String>>,
    pub target: Vec<Vec<usize>>,
    pub decoder_input: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn question_len(&self, b: usize) -> usize {
        self.question_mask[b].iter().filter(|&&m| m).count()
    }

    pub fn sentence_count(&self, b: usize) -> usize {
        self.sentence_mask[b].iter().filter(|&&m| m).count()
    }

    pub fn sentence_len(&self, b: usize, i: usize) -> usize {
        self.word_mask[b][i].iter().filter(|&&m| m).count()
    }

    pub fn target_len(&self, b: usize) -> usize {
        self.target_mask[b].iter().filter(|&&m| m).count()
    }

    /// Size of this example's extended output space.
    pub fn extended_size(&self, b: usize, vocab_size: usize) -> usize {
        vocab_size + self.oovs[b].len()
    }
}

struct EncodedExample {
    id: String,
    question: Vec<usize>,
    question_ext: Vec<usize>,
    sentences: Vec<Vec<usize>>,
    sentences_ext: Vec<Vec<usize>>,
    oovs: Vec<String>,
    target: Vec<usize>,
    decoder_input: Vec<usize>,
}

fn encode_example(
    ex: &RawExample,
    vocab: &Vocabulary,
    limits: &BatchLimits,
) -> Result<EncodedExample> {
    let mut question = tokenize(&ex.question);
    question.truncate(limits.max_question_tokens);
    if question.is_empty() {
        return Err(Error::BadExample {
            id: ex.id.clone(),
            reason: "question empty after tokenization".into(),
        });
    }

    let mut sentences: Vec<Vec<String>> = ex
        .document
        .sentences()
        .iter()
        .map(|s| {
            let mut toks = tokenize(s);
            toks.truncate(limits.max_sentence_tokens);
            toks
        })
        .filter(|toks| !toks.is_empty())
        .collect();
    sentences.truncate(limits.max_sentences);
    if sentences.is_empty() {
        return Err(Error::BadExample {
            id: ex.id.clone(),
            reason: "no sentences left after caps".into(),
        });
    }

    // first-occurrence OOV list: question tokens, then document tokens
    let mut oovs: Vec<String> = Vec::new();
    let ext_id = |tok: &str, oovs: &mut Vec<String>| -> usize {
        if let Some(id) = vocab.id(tok) {
            return id;
        }
        match oovs.iter().position(|o| o == tok) {
            Some(k) => vocab.size() + k,
            None => {
                oovs.push(tok.to_string());
                vocab.size() + oovs.len() - 1
            }
        }
    };

    let question_ext: Vec<usize> = question.iter().map(|t| ext_id(t, &mut oovs)).collect();
    let question_ids: Vec<usize> = question.iter().map(|t| vocab.id_or_unk(t)).collect();

    let mut sent_ids = Vec::with_capacity(sentences.len());
    let mut sent_ext = Vec::with_capacity(sentences.len());
    for sentence in &sentences {
        sent_ext.push(
            sentence
                .iter()
                .map(|t| ext_id(t, &mut oovs))
                .collect::<Vec<usize>>(),
        );
        sent_ids.push(
            sentence
                .iter()
                .map(|t| vocab.id_or_unk(t))
                .collect::<Vec<usize>>(),
        );
    }

    // answer: truncate, terminate, and express the target in extended space;
    // answer tokens that are neither in the vocabulary nor copyable stay UNK
    let mut answer = tokenize(&ex.answer);
    answer.truncate(limits.max_answer_tokens);
    let mut target: Vec<usize> = answer
        .iter()
        .map(|t| {
            vocab.id(t).unwrap_or_else(|| {
                oovs.iter()
                    .position(|o| o == t)
                    .map(|k| vocab.size() + k)
                    .unwrap_or(UNK)
            })
        })
        .collect();
    target.push(EOS);

    let mut decoder_input = Vec::with_capacity(target.len());
    decoder_input.push(SOS);
    for tok in &answer {
        decoder_input.push(vocab.id_or_unk(tok));
    }

    Ok(EncodedExample {
        id: ex.id.clone(),
        question: question_ids,
        question_ext,
        sentences: sent_ids,
        sentences_ext: sent_ext,
        oovs,
        target,
        decoder_input,
    })
}

fn pad_to(mut v: Vec<usize>, len: usize) -> (Vec<usize>, Vec<bool>) {
    let mut mask = vec![true; v.len()];
    v.resize(len, PAD);
    mask.resize(len, false);
    (v, mask)
}

/// Encode and pad a group of examples into one batch.
pub fn make_batch(
    examples: &[RawExample],
    vocab: &Vocabulary,
    limits: &BatchLimits,
) -> Result<Batch> {
    assert!(!examples.is_empty(), "empty batch");
    let encoded: Vec<EncodedExample> = examples
        .iter()
        .map(|ex| encode_example(ex, vocab, limits))
        .collect::<Result<_>>()?;

    let max_q = encoded.iter().map(|e| e.question.len()).max().unwrap();
    let max_n = encoded.iter().map(|e| e.sentences.len()).max().unwrap();
    let max_s = encoded
        .iter()
        .flat_map(|e| e.sentences.iter().map(Vec::len))
        .max()
        .unwrap();
    let max_t = encoded.iter().map(|e| e.target.len()).max().unwrap();

    let mut batch = Batch {
        ids: Vec::new(),
        question: Vec::new(),
        question_ext: Vec::new(),
        question_mask: Vec::new(),
        sentences: Vec::new(),
        sentences_ext: Vec::new(),
        word_mask: Vec::new(),
        sentence_mask: Vec::new(),
        oovs: Vec::new(),
        target: Vec::new(),
        decoder_input: Vec::new(),
        target_mask: Vec::new(),
    };

    for e in encoded {
        let (q, qm) = pad_to(e.question, max_q);
        let (qe, _) = pad_to(e.question_ext, max_q);
        batch.question.push(q);
        batch.question_ext.push(qe);
        batch.question_mask.push(qm);

        let n = e.sentences.len();
        let mut sents = Vec::with_capacity(max_n);
        let mut sents_ext = Vec::with_capacity(max_n);
        let mut wmask = Vec::with_capacity(max_n);
        for (ids, ext) in e.sentences.into_iter().zip(e.sentences_ext) {
            let (s, m) = pad_to(ids, max_s);
            let (se, _) = pad_to(ext, max_s);
            sents.push(s);
            sents_ext.push(se);
            wmask.push(m);
        }
        for _ in n..max_n {
            sents.push(vec![PAD; max_s]);
            sents_ext.push(vec![PAD; max_s]);
            wmask.push(vec![false; max_s]);
        }
        let mut smask = vec![true; n];
        smask.resize(max_n, false);
        batch.sentences.push(sents);
        batch.sentences_ext.push(sents_ext);
        batch.word_mask.push(wmask);
        batch.sentence_mask.push(smask);

        let dec_len = e.decoder_input.len();
        debug_assert_eq!(dec_len, e.target.len());
        let (t, tm) = pad_to(e.target, max_t);
        let (d, _) = pad_to(e.decoder_input, max_t);
        batch.target.push(t);
        batch.decoder_input.push(d);
        batch.target_mask.push(tm);

        batch.ids.push(e.id);
        batch.oovs.push(e.oovs);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::corpus::{build_vocab, Document};

    use super::*;

    fn example(id: &str, question: &str, sentences: &[&str], answer: &str) -> RawExample {
        RawExample {
            id: id.into(),
            question: question.into(),
            document: Document::Sentences(sentences.iter().map(|s| s.to_string()).collect()),
            answer: answer.into(),
        }
    }

    fn training_vocab() -> Vocabulary {
        let exs = vec![example(
            "v",
            "how to clean the pan",
            &["soak the pan in water", "scrub it with salt", "dry it well"],
            "soak then scrub the pan",
        )];
        build_vocab(&exs, 50)
    }

    #[test]
    fn oov_token_gets_extended_id_and_unk_word_id() {
        let vocab = training_vocab();
        let exs = vec![example(
            "a",
            "how to clean the zirconium pan",
            &["soak the zirconium pan"],
            "soak it",
        )];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(batch.oovs[0], vec!["zirconium".to_string()]);
        let pos = 4; // "how to clean the zirconium ..."
        assert_eq!(batch.question[0][pos], UNK);
        assert_eq!(batch.question_ext[0][pos], vocab.size());
        assert!(batch.question_ext[0][pos] < batch.extended_size(0, vocab.size()));
    }

    #[test]
    fn oov_lists_are_per_example() {
        let vocab = training_vocab();
        let exs = vec![
            example("a", "clean the griddle", &["soak the griddle"], "soak it"),
            example("b", "clean the wok", &["scrub the wok"], "scrub it"),
        ];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(batch.oovs[0], vec!["griddle".to_string()]);
        assert_eq!(batch.oovs[1], vec!["wok".to_string()]);
        // both map to the same extended slot because the lists are independent
        assert_eq!(batch.question_ext[0][2], vocab.size());
        assert_eq!(batch.question_ext[1][2], vocab.size());
    }

    #[test]
    fn first_occurrence_order_spans_question_then_document() {
        let vocab = training_vocab();
        let exs = vec![example(
            "a",
            "polish the samovar",
            &["buff the samovar with vinegar", "polish gently"],
            "buff it",
        )];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(
            batch.oovs[0],
            vec![
                "polish".to_string(),
                "samovar".to_string(),
                "buff".to_string(),
                "vinegar".to_string(),
                "gently".to_string(),
            ]
        );
    }

    #[test]
    fn long_answer_truncates_then_terminates() {
        let vocab = training_vocab();
        let long_answer = vec!["soak"; 60].join(" ");
        let exs = vec![example("a", "clean the pan", &["soak the pan"], &long_answer)];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(batch.target_len(0), 51);
        assert_eq!(batch.target[0][50], EOS);
        assert_eq!(batch.decoder_input[0][0], SOS);
        assert_eq!(batch.target[0].len(), batch.decoder_input[0].len());
    }

    #[test]
    fn answer_oov_covered_by_document_copies_through() {
        let vocab = training_vocab();
        let exs = vec![example(
            "a",
            "clean the pan",
            &["soak the cast iron skillet"],
            "use the skillet",
        )];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        let skillet_ext = vocab.size() + batch.oovs[0].iter().position(|o| o == "skillet").unwrap();
        assert_eq!(batch.target[0][2], skillet_ext);
        // answer word with no copy source anywhere stays unknown
        let exs = vec![example("b", "clean the pan", &["soak the pan"], "use teflon")];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(batch.target[0][1], UNK);
    }

    #[test]
    fn caps_are_enforced() {
        let vocab = training_vocab();
        let long_q = vec!["scrub"; 40].join(" ");
        let long_sentence = vec!["soak"; 60].join(" ");
        let sentences: Vec<String> = (0..30).map(|_| long_sentence.clone()).collect();
        let sent_refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let exs = vec![example("a", &long_q, &sent_refs, "soak")];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        assert_eq!(batch.question_len(0), 30);
        assert_eq!(batch.sentence_count(0), 25);
        assert_eq!(batch.sentence_len(0, 0), 40);
    }

    #[test]
    fn zero_sentences_after_caps_is_rejected_with_id() {
        let vocab = training_vocab();
        let exs = vec![example("empty-doc", "clean it", &["   "], "soak")];
        let err = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap_err();
        assert!(matches!(err, Error::BadExample { ref id, .. } if id == "empty-doc"));
    }

    #[test]
    fn masks_and_ids_are_consistent_under_random_shapes() {
        let vocab = training_vocab();
        let words = ["soak", "scrub", "dry", "pan", "salt", "water", "quartz", "lye"];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let n_ex = rng.gen_range(1..4);
            let exs: Vec<RawExample> = (0..n_ex)
                .map(|i| {
                    let pick = |rng: &mut ChaCha8Rng, n: usize| {
                        (0..n)
                            .map(|_| words[rng.gen_range(0..words.len())])
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    let q_len = rng.gen_range(1..6);
                    let q = pick(&mut rng, q_len);
                    let n_sents = rng.gen_range(1..5);
                    let sents: Vec<String> = (0..n_sents)
                        .map(|_| {
                            let len = rng.gen_range(1..7);
                            pick(&mut rng, len)
                        })
                        .collect();
                    let a_len = rng.gen_range(1..5);
                    RawExample {
                        id: format!("r{i}"),
                        question: q,
                        document: Document::Sentences(sents),
                        answer: pick(&mut rng, a_len),
                    }
                })
                .collect();
            let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();

            for b in 0..batch.len() {
                for (pos, &m) in batch.question_mask[b].iter().enumerate() {
                    assert_eq!(batch.question[b][pos] == PAD, !m);
                }
                for i in 0..batch.sentence_mask[b].len() {
                    if !batch.sentence_mask[b][i] {
                        assert!(batch.word_mask[b][i].iter().all(|&m| !m));
                    }
                    for (pos, &m) in batch.word_mask[b][i].iter().enumerate() {
                        assert_eq!(batch.sentences[b][i][pos] == PAD, !m);
                    }
                }
                let ext_size = batch.extended_size(b, vocab.size());
                for &id in batch.question_ext[b].iter().chain(
                    batch.sentences_ext[b].iter().flatten(),
                ) {
                    assert!(id < ext_size);
                }
                // every extended id decodes to a unique string
                for &id in batch.question_ext[b].iter() {
                    let _ = vocab.decode_extended(id, &batch.oovs[b]);
                }
            }
        }
    }

    #[test]
    fn in_vocab_round_trip_preserves_tokens() {
        let vocab = training_vocab();
        let exs = vec![example(
            "a",
            "how to clean the pan",
            &["soak the pan in water"],
            "soak the quasar pan",
        )];
        let batch = make_batch(&exs, &vocab, &BatchLimits::default()).unwrap();
        // question round trip through plain ids (all in vocabulary)
        let decoded: Vec<String> = (0..batch.question_len(0))
            .map(|p| vocab.token(batch.question[0][p]).to_string())
            .collect();
        assert_eq!(decoded.join(" "), "how to clean the pan");

        // target round trip through extended ids; "quasar" is OOV but absent
        // from every copy source, so it degrades to the unknown token
        let decoded: Vec<String> = (0..batch.target_len(0) - 1)
            .map(|p| vocab.decode_extended(batch.target[0][p], &batch.oovs[0]).to_string())
            .collect();
        assert_eq!(decoded.join(" "), "soak the <unk> pan");
    }
}
