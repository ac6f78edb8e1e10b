//! Lowercased whitespace-plus-punctuation tokenization.
//!
//! Alphanumeric runs stay together; every other non-whitespace character
//! becomes its own token. This keeps tokens compatible with the conventions
//! of common pretrained embedding files.

/// Split text into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Join tokens back into display text.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Wash the apple, then eat it."),
            vec!["wash", "the", "apple", ",", "then", "eat", "it", "."]
        );
    }

    #[test]
    fn keeps_alphanumeric_runs_together() {
        assert_eq!(tokenize("step12 of π-day"), vec!["step12", "of", "π", "-", "day"]);
    }

    #[test]
    fn apostrophes_separate() {
        assert_eq!(tokenize("don't"), vec!["don", "'", "t"]);
    }

    #[test]
    fn whitespace_only_yields_nothing() {
        assert!(tokenize("  \t\n ").is_empty());
    }

    #[test]
    fn round_trip_over_token_stream() {
        let toks = tokenize("How do I fix a flat tire?");
        assert_eq!(detokenize(&toks), "how do i fix a flat tire ?");
        // re-tokenizing the detokenized form is stable
        assert_eq!(tokenize(&detokenize(&toks)), toks);
    }
}
