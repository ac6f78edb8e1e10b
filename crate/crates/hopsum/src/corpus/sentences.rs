//! Rule-based sentence splitting.
//!
//! Splits after `.`, `?`, or `!` when followed by whitespace and a capital
//! letter, unless the word before a period is a known abbreviation or a
//! single initial. Documents that arrive pre-split bypass this entirely.

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "etc", "vs", "fig",
    "eq", "no", "inc", "ltd", "co", "dept", "univ", "approx", "e.g", "i.e",
];

fn is_guarded(word: &str) -> bool {
    let w = word.trim_matches(|c: char| !c.is_alphanumeric() && c != '.');
    let w = w.trim_end_matches('.');
    if w.is_empty() {
        return false;
    }
    ABBREVIATIONS.contains(&w.to_lowercase().as_str())
}

/// Split running text into sentences; text without any split point comes
/// back as a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;

    for i in 0..chars.len() {
        let c = chars[i];
        if c != '.' && c != '?' && c != '!' {
            continue;
        }
        // require whitespace then a capital letter after the terminator
        let mut j = i + 1;
        let mut saw_space = false;
        while j < chars.len() && chars[j].is_whitespace() {
            saw_space = true;
            j += 1;
        }
        if !saw_space || j >= chars.len() || !chars[j].is_uppercase() {
            continue;
        }
        if c == '.' {
            // word immediately before the period
            let mut w = i;
            while w > start && !chars[w - 1].is_whitespace() {
                w -= 1;
            }
            let word: String = chars[w..i].iter().collect();
            if is_guarded(&word) {
                continue;
            }
        }
        let sentence: String = chars[start..=i].iter().collect();
        let sentence = sentence.trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = j;
    }

    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    if sentences.is_empty() {
        let whole = text.trim();
        if !whole.is_empty() {
            sentences.push(whole.to_string());
        }
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(split_sentences("A. B? C!"), vec!["A.", "B?", "C!"]);
    }

    #[test]
    fn abbreviation_stays_in_one_sentence() {
        assert_eq!(split_sentences("Dr. Smith left."), vec!["Dr. Smith left."]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("version 2.0 shipped. it works."),
            vec!["version 2.0 shipped. it works."]
        );
    }

    #[test]
    fn text_without_terminator_is_one_sentence() {
        assert_eq!(split_sentences("no punctuation here"), vec!["no punctuation here"]);
    }

    #[test]
    fn multi_sentence_paragraph() {
        let text = "Mix the flour. Add two eggs! Is it smooth? Serve warm.";
        assert_eq!(
            split_sentences(text),
            vec!["Mix the flour.", "Add two eggs!", "Is it smooth?", "Serve warm."]
        );
    }
}
