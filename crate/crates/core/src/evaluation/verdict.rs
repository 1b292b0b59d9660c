use serde::{Deserialize, Serialize};

use crate::feature_store::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Fake,
    Unknown,
}

impl From<Label> for Verdict {
    fn from(l: Label) -> Self {
        match l {
            Label::Real => Verdict::Real,
            Label::Fake => Verdict::Fake,
        }
    }
}

const FAKE_WORDS: &[&str] = &["fake", "synthetic", "ai-generated", "generated", "forged", "manipulated"];
const REAL_WORDS: &[&str] = &["real", "authentic", "genuine"];
/// Two-token phrases that count as a Real keyword.
const REAL_PHRASES: &[(&str, &str)] = &[("natural", "photo")];
const NEGATORS: &[&str] = &["not", "isn't", "no"];
const NEGATION_WINDOW: usize = 3;

/// Lowercased words with edge punctuation trimmed; internal `-` and `'`
/// survive so `ai-generated` and `isn't` stay single tokens.
pub(crate) fn verdict_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Reads a Real/Fake decision out of free text.
///
/// The earliest keyword wins. A keyword with a negator among the three
/// preceding tokens counts for the opposite class. No keyword gives Unknown.
pub fn extract_verdict(response_text: &str) -> Verdict {
    let tokens = verdict_tokens(response_text);
    for (i, tok) in tokens.iter().enumerate() {
        let hit = if FAKE_WORDS.contains(&tok.as_str()) {
            Verdict::Fake
        } else if REAL_WORDS.contains(&tok.as_str())
            || REAL_PHRASES
                .iter()
                .any(|(a, b)| tok == a && tokens.get(i + 1).is_some_and(|n| n == b))
        {
            Verdict::Real
        } else {
            continue;
        };
        let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i]
            .iter()
            .any(|t| NEGATORS.contains(&t.as_str()));
        return match (hit, negated) {
            (Verdict::Fake, true) => Verdict::Real,
            (Verdict::Real, true) => Verdict::Fake,
            (v, false) => v,
            (Verdict::Unknown, true) => unreachable!(),
        };
    }
    Verdict::Unknown
}
