//! Synthetic corpora for development and acceptance checks: a copy task,
//! a bridge task whose answers need a two-step sentence chain, and an
//! enumeration task that tempts decoders into repeating themselves.
//!
//! Every generator is a pure function of (task, size, seed), so emitted
//! files are reproducible byte for byte.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, RawExample};
use crate::error::{Error, Result};

/// Which synthetic corpus to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureTask {
    /// answer is one word copied from the matching sentence
    Copy,
    /// answer concatenates a question-matching sentence and the sentence
    /// it links to through a shared entity
    Multihop,
    /// answer enumerates several items, inviting n-gram repetition
    Repetition,
}

impl FromStr for FixtureTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<FixtureTask> {
        match s {
            "copy" => Ok(FixtureTask::Copy),
            "multihop" => Ok(FixtureTask::Multihop),
            "repetition" => Ok(FixtureTask::Repetition),
            other => Err(Error::Config(format!(
                "unknown fixture task {other:?}; expected copy, multihop, or repetition"
            ))),
        }
    }
}

const ADJECTIVES: [&str; 8] = [
    "shiny", "rusty", "wooden", "copper", "marble", "velvet", "broken", "little",
];
const NOUNS: [&str; 8] = [
    "kettle", "lantern", "drawer", "mirror", "ribbon", "saddle", "whistle", "basket",
];
const COLORS: [&str; 16] = [
    "red", "blue", "green", "amber", "violet", "crimson", "teal", "ivory", "olive", "coral",
    "slate", "pearl", "bronze", "lilac", "mint", "gold",
];
const ACTORS: [&str; 12] = [
    "falcon", "badger", "otter", "heron", "lynx", "marten", "raven", "stoat", "finch", "viper",
    "crane", "shrew",
];
const VALUES: [&str; 12] = [
    "acorn", "pebble", "feather", "thimble", "button", "walnut", "pinecone", "shell", "bead",
    "tassel", "spool", "locket",
];
const CONTAINERS: [&str; 12] = [
    "kit", "chest", "crate", "hamper", "pouch", "tray", "satchel", "bin", "jar", "trunk", "box",
    "sack",
];
const ITEMS: [&str; 12] = [
    "pin", "wax", "clip", "knob", "tack", "rod", "cog", "nib", "gem", "peg", "fob", "stud",
];

fn pick_distinct<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut picks: Vec<&str> = pool.to_vec();
    picks.shuffle(rng);
    picks.truncate(n);
    picks
}

fn copy_example(i: usize, color_map: &[usize], rng: &mut ChaCha8Rng) -> RawExample {
    let combo = i % color_map.len();
    let (adj, noun) = (ADJECTIVES[combo / 8], NOUNS[combo % 8]);
    let color = COLORS[color_map[combo]];
    // the distractor shares no word and no color with the asked-about
    // object, so the answer has exactly one source sentence
    let other = {
        let mut c = combo;
        while c / 8 == combo / 8 || c % 8 == combo % 8 || color_map[c] == color_map[combo] {
            c = rand::Rng::gen_range(rng, 0..color_map.len());
        }
        c
    };
    let (oadj, onoun) = (ADJECTIVES[other / 8], NOUNS[other % 8]);
    let ocolor = COLORS[color_map[other]];
    let mut sentences = vec![
        format!("the {adj} {noun} is {color}"),
        format!("the {oadj} {onoun} is {ocolor}"),
    ];
    sentences.shuffle(rng);
    RawExample {
        id: format!("copy-{i:04}"),
        question: format!("what color is the {adj} {noun}"),
        document: Document::Sentences(sentences),
        answer: color.to_string(),
    }
}

fn multihop_example(i: usize, rng: &mut ChaCha8Rng) -> RawExample {
    let actors = pick_distinct(rng, &ACTORS, 6);
    let values = pick_distinct(rng, &VALUES, 3);
    let (x, b) = (actors[0], actors[1]);
    let v = values[0];
    let s_match = format!("the {x} joins the {b}");
    let s_chain = format!("the {b} carries the {v}");
    let mut sentences = vec![
        s_match.clone(),
        s_chain.clone(),
        format!("the {} carries the {}", actors[2], values[1]),
        format!("the {} carries the {}", actors[3], values[2]),
        format!("the {} joins the {}", actors[4], actors[5]),
    ];
    sentences.shuffle(rng);
    RawExample {
        id: format!("multihop-{i:04}"),
        question: format!("describe the {x}"),
        document: Document::Sentences(sentences),
        answer: format!("{s_match} {s_chain}"),
    }
}

fn repetition_example(i: usize, rng: &mut ChaCha8Rng) -> RawExample {
    let containers = pick_distinct(rng, &CONTAINERS, 2);
    let items = pick_distinct(rng, &ITEMS, 4);
    let x = containers[0];
    let mut sentences = vec![
        format!("the {x} holds the {}", items[0]),
        format!("the {x} holds the {}", items[1]),
        format!("the {x} holds the {}", items[2]),
        format!("the {} holds the {}", containers[1], items[3]),
    ];
    sentences.shuffle(rng);
    let held: Vec<String> = sentences
        .iter()
        .filter(|s| s.starts_with(&format!("the {x} ")))
        .map(|s| s.rsplit(' ').next().unwrap().to_string())
        .collect();
    let answer = format!("the {} and the {} and the {}", held[0], held[1], held[2]);
    RawExample {
        id: format!("repetition-{i:04}"),
        question: format!("what does the {x} hold"),
        document: Document::Sentences(sentences),
        answer,
    }
}

/// Generate `size` examples of the given task, deterministically in `seed`.
pub fn make_fixture(task: FixtureTask, size: usize, seed: u64) -> Vec<RawExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        FixtureTask::Copy => {
            // one fixed color per object phrase so repeated questions
            // never contradict each other
            let color_map: Vec<usize> = (0..ADJECTIVES.len() * NOUNS.len())
                .map(|_| rand::Rng::gen_range(&mut rng, 0..COLORS.len()))
                .collect();
            (0..size)
                .map(|i| copy_example(i, &color_map, &mut rng))
                .collect()
        }
        FixtureTask::Multihop => (0..size).map(|i| multihop_example(i, &mut rng)).collect(),
        FixtureTask::Repetition => (0..size)
            .map(|i| repetition_example(i, &mut rng))
            .collect(),
    }
}

/// Write examples as one JSON object per line.
pub fn write_fixture(examples: &[RawExample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        let doc = match &ex.document {
            Document::Text(t) => serde_json::json!(t),
            Document::Sentences(s) => serde_json::json!(s),
        };
        let line = serde_json::json!({
            "id": ex.id,
            "question": ex.question,
            "document": doc,
            "answer": ex.answer,
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use crate::corpus::{load_dataset, tokenize, Split};

    use super::*;

    fn doc_sentences(ex: &RawExample) -> Vec<String> {
        ex.document.sentences()
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        for task in [FixtureTask::Copy, FixtureTask::Multihop, FixtureTask::Repetition] {
            let a = make_fixture(task, 20, 7);
            let b = make_fixture(task, 20, 7);
            let c = make_fixture(task, 20, 8);
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
            assert_ne!(format!("{a:?}"), format!("{c:?}"));
        }
    }

    #[test]
    fn written_fixtures_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_fixture(&make_fixture(FixtureTask::Multihop, 64, 7), &p1).unwrap();
        write_fixture(&make_fixture(FixtureTask::Multihop, 64, 7), &p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "same task, size, and seed must give identical bytes"
        );
    }

    #[test]
    fn copy_answers_are_present_in_exactly_one_document_sentence() {
        for ex in make_fixture(FixtureTask::Copy, 64, 3) {
            let hits = doc_sentences(&ex)
                .iter()
                .filter(|s| s.contains(&ex.answer))
                .count();
            assert_eq!(hits, 1, "{}: answer {} not unique", ex.id, ex.answer);
        }
    }

    #[test]
    fn repeated_copy_questions_never_contradict() {
        let examples = make_fixture(FixtureTask::Copy, 130, 5);
        let mut seen: std::collections::BTreeMap<String, String> = Default::default();
        for ex in examples {
            let prior = seen.insert(ex.question.clone(), ex.answer.clone());
            if let Some(p) = prior {
                assert_eq!(p, ex.answer, "question {} changed answers", ex.question);
            }
        }
    }

    #[test]
    fn bridge_answers_concatenate_the_match_and_chain_sentences() {
        for ex in make_fixture(FixtureTask::Multihop, 64, 7) {
            let sentences = doc_sentences(&ex);
            let x = ex.question.rsplit(' ').next().unwrap().to_string();
            let matching: Vec<&String> =
                sentences.iter().filter(|s| s.contains(&x)).collect();
            assert_eq!(matching.len(), 1, "{}: question entity in one sentence", ex.id);
            let s_match = matching[0];
            let b = s_match.rsplit(' ').next().unwrap().to_string();
            let chaining: Vec<&String> = sentences
                .iter()
                .filter(|s| s.starts_with(&format!("the {b} ")))
                .collect();
            assert_eq!(chaining.len(), 1, "{}: bridge leads to one sentence", ex.id);
            assert_eq!(ex.answer, format!("{s_match} {}", chaining[0]));
        }
    }

    #[test]
    fn chain_sentences_share_no_content_word_with_the_question() {
        for ex in make_fixture(FixtureTask::Multihop, 64, 11) {
            let x = ex.question.rsplit(' ').next().unwrap().to_string();
            let sentences = doc_sentences(&ex);
            let s_match = sentences.iter().find(|s| s.contains(&x)).unwrap();
            let b = s_match.rsplit(' ').next().unwrap().to_string();
            let s_chain = sentences
                .iter()
                .find(|s| s.starts_with(&format!("the {b} ")))
                .unwrap();
            let q_content: BTreeSet<&str> = ex
                .question
                .split(' ')
                .filter(|w| !matches!(*w, "describe" | "the"))
                .collect();
            for w in s_chain.split(' ') {
                assert!(
                    !q_content.contains(w),
                    "{}: chain sentence leaks question word {w}",
                    ex.id
                );
            }
        }
    }

    #[test]
    fn enumeration_answers_list_the_held_items_in_document_order() {
        for ex in make_fixture(FixtureTask::Repetition, 64, 9) {
            let x = ex.question.split(' ').nth(3).unwrap().to_string();
            let held: Vec<String> = doc_sentences(&ex)
                .iter()
                .filter(|s| s.starts_with(&format!("the {x} ")))
                .map(|s| s.rsplit(' ').next().unwrap().to_string())
                .collect();
            assert_eq!(held.len(), 3);
            assert_eq!(
                ex.answer,
                format!("the {} and the {} and the {}", held[0], held[1], held[2])
            );
            let distinct: BTreeSet<&String> = held.iter().collect();
            assert_eq!(distinct.len(), 3, "{}: held items must differ", ex.id);
        }
    }

    #[test]
    fn fixture_files_round_trip_through_the_dataset_loader() {
        let dir = tempfile::tempdir().unwrap();
        for (task, name) in [
            (FixtureTask::Copy, "copy.jsonl"),
            (FixtureTask::Multihop, "multihop.jsonl"),
            (FixtureTask::Repetition, "repetition.jsonl"),
        ] {
            let examples = make_fixture(task, 16, 2);
            let path = dir.path().join(name);
            write_fixture(&examples, &path).unwrap();
            let loaded = load_dataset(&path, Split::Train).unwrap();
            assert_eq!(loaded.malformed, 0);
            assert_eq!(loaded.examples.len(), 16);
            for (a, b) in examples.iter().zip(&loaded.examples) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.question, b.question);
                assert_eq!(a.answer, b.answer);
                assert_eq!(a.document.sentences(), b.document.sentences());
            }
        }
    }

    #[test]
    fn fixture_vocabularies_stay_small() {
        for task in [FixtureTask::Copy, FixtureTask::Multihop, FixtureTask::Repetition] {
            let mut tokens: BTreeSet<String> = BTreeSet::new();
            for ex in make_fixture(task, 512, 13) {
                tokens.extend(tokenize(&ex.question));
                tokens.extend(tokenize(&ex.answer));
                for s in doc_sentences(&ex) {
                    tokens.extend(tokenize(&s));
                }
            }
            assert!(
                tokens.len() < 60,
                "{task:?} fixture grew {} distinct tokens",
                tokens.len()
            );
        }
    }
}
