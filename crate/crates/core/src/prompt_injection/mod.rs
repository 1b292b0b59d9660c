//! Renders head probabilities as the classifier prompt sentence and rewrites
//! conversation datasets so every user turn carries it.

mod dataset;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::Label;
use crate::linear_head::HeadPrediction;

pub use dataset::{
    parse_conversations, parse_llava_conversations, write_conversations, DatasetError,
};

/// Everything in the rendered sentence before the probability digits.
pub const PROMPT_PREFIX: &str = "From Binary Classifier: The probability that this image is fake is ";

#[derive(Debug, Error, PartialEq)]
pub enum InjectError {
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("no prediction for image {0:?}")]
    MissingPrediction(String),
    #[error("more than one prediction for image {0:?}")]
    DuplicatePrediction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSample {
    pub image_id: String,
    pub user_text: String,
    pub assistant_text: String,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedPrompt {
    pub probability_fake: f64,
    pub rendered: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Classifier sentence, newline, original question.
    #[default]
    Prepend,
    /// Original question, newline, classifier sentence.
    Append,
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prepend" => Ok(Placement::Prepend),
            "append" => Ok(Placement::Append),
            other => Err(format!("unknown placement {other:?} (expected prepend|append)")),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Prepend => "prepend",
            Placement::Append => "append",
        })
    }
}

/// Three fractional digits, rounded half-to-even on the exact binary value.
pub fn format_probability(p: f64) -> Result<String, InjectError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(InjectError::OutOfRange(p));
    }
    let thousandths = round_thousandths(p);
    Ok(format!("{}.{:03}", thousandths / 1000, thousandths % 1000))
}

/// `round_half_even(p * 1000)` computed exactly for `p` in `[0, 1]`.
fn round_thousandths(p: f64) -> u64 {
    if p == 1.0 {
        return 1000;
    }
    // Below 2^-14 the value is far under 0.0005 and rounds to zero.
    if p < 2f64.powi(-14) {
        return 0;
    }
    let bits = p.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1075;
    let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    // p = mantissa * 2^exp with exp in [-66, -53] here.
    let shift = (-exp) as u32;
    let scaled = mantissa as u128 * 1000;
    let mut q = scaled >> shift;
    let rem = scaled & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    if rem > half || (rem == half && q % 2 == 1) {
        q += 1;
    }
    q as u64
}

pub fn render_prompt(p: f64) -> Result<InjectedPrompt, InjectError> {
    let digits = format_probability(p)?;
    Ok(InjectedPrompt {
        probability_fake: p,
        rendered: format!("{PROMPT_PREFIX}{digits}."),
    })
}

/// Finds the first classifier sentence in `text` and returns its value.
/// `None` if the sentence is absent or its number is not `d.ddd` in `[0, 1]`
/// followed by a period.
pub fn extract_injected_probability(text: &str) -> Option<f64> {
    let start = text.find(PROMPT_PREFIX)? + PROMPT_PREFIX.len();
    let tail = &text.as_bytes()[start..];
    if tail.len() < 6 {
        return None;
    }
    let shape_ok = tail[0].is_ascii_digit()
        && tail[1] == b'.'
        && tail[2..5].iter().all(u8::is_ascii_digit)
        && tail[5] == b'.';
    if !shape_ok {
        return None;
    }
    let value: f64 = text[start..start + 5].parse().ok()?;
    (value <= 1.0).then_some(value)
}

/// Joins the rendered sentence with `user_text` by a single newline.
pub fn inject_text(user_text: &str, prompt: &InjectedPrompt, placement: Placement) -> String {
    match placement {
        Placement::Prepend => format!("{}\n{}", prompt.rendered, user_text),
        Placement::Append => format!("{}\n{}", user_text, prompt.rendered),
    }
}

/// Inverse of [`inject_text`]: drops the line holding the classifier sentence.
pub fn strip_injection(user_text: &str, placement: Placement) -> Option<&str> {
    match placement {
        Placement::Prepend => user_text
            .split_once('\n')
            .filter(|(first, _)| first.starts_with(PROMPT_PREFIX))
            .map(|(_, rest)| rest),
        Placement::Append => user_text
            .rsplit_once('\n')
            .filter(|(_, last)| last.starts_with(PROMPT_PREFIX))
            .map(|(rest, _)| rest),
    }
}

/// Rewrites every sample's user turn to carry its image's prediction.
pub fn augment_dataset(
    samples: &[ConversationSample],
    predictions: &[HeadPrediction],
    placement: Placement,
) -> Result<Vec<ConversationSample>, InjectError> {
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.image_id, p.probability_fake).is_some() {
            return Err(InjectError::DuplicatePrediction(p.image_id.clone()));
        }
    }
    samples
        .iter()
        .map(|s| {
            let p = *by_id
                .get(s.image_id.as_str())
                .ok_or_else(|| InjectError::MissingPrediction(s.image_id.clone()))?;
            let prompt = render_prompt(p)?;
            Ok(ConversationSample {
                user_text: inject_text(&s.user_text, &prompt, placement),
                ..s.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, q: &str) -> ConversationSample {
        ConversationSample {
            image_id: id.into(),
            user_text: q.into(),
            assistant_text: "The hands have six fingers.".into(),
            label: Some(Label::Fake),
        }
    }

    fn pred(id: &str, p: f64) -> HeadPrediction {
        HeadPrediction {
            image_id: id.into(),
            probability_fake: p,
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(format_probability(0.5).unwrap(), "0.500");
        assert_eq!(format_probability(0.93375).unwrap(), "0.934");
        assert_eq!(format_probability(1.0).unwrap(), "1.000");
        assert_eq!(format_probability(0.0).unwrap(), "0.000");
        assert_eq!(format_probability(0.9996).unwrap(), "1.000");
        assert_eq!(format_probability(1e-300).unwrap(), "0.000");
        // Exact binary ties: 0.0625 = 62.5/1000, 0.1875 = 187.5/1000.
        assert_eq!(format_probability(0.0625).unwrap(), "0.062");
        assert_eq!(format_probability(0.1875).unwrap(), "0.188");
        assert!(format_probability(1.0000001).is_err());
        assert!(format_probability(-0.1).is_err());
        assert!(format_probability(f64::NAN).is_err());
    }

    #[test]
    fn template_bytes() {
        assert_eq!(
            render_prompt(0.5).unwrap().rendered,
            "From Binary Classifier: The probability that this image is fake is 0.500."
        );
        assert!(render_prompt(0.0).unwrap().rendered.ends_with("is 0.000."));
    }

    #[test]
    fn extraction() {
        let text = format!("{}\nIs this real?", render_prompt(0.913).unwrap().rendered);
        assert_eq!(extract_injected_probability(&text), Some(0.913));
        assert_eq!(extract_injected_probability("Is this image real?"), None);
        assert_eq!(extract_injected_probability(&format!("{PROMPT_PREFIX}0.91.")), None);
        assert_eq!(extract_injected_probability(&format!("{PROMPT_PREFIX}1.500.")), None);
        assert_eq!(extract_injected_probability(&format!("{PROMPT_PREFIX}0.9134")), None);
    }

    #[test]
    fn prepend_layout() {
        let out = augment_dataset(&[sample("a", "Is this image real or fake?")], &[pred("a", 0.913)], Placement::Prepend)
            .unwrap();
        assert_eq!(
            out[0].user_text,
            format!("{PROMPT_PREFIX}0.913.\nIs this image real or fake?")
        );
        assert_eq!(strip_injection(&out[0].user_text, Placement::Prepend), Some("Is this image real or fake?"));
    }

    #[test]
    fn append_layout() {
        let out = augment_dataset(&[sample("a", "Q?\nmore")], &[pred("a", 0.2)], Placement::Append).unwrap();
        assert_eq!(out[0].user_text, format!("Q?\nmore\n{PROMPT_PREFIX}0.200."));
        assert_eq!(strip_injection(&out[0].user_text, Placement::Append), Some("Q?\nmore"));
    }

    #[test]
    fn augmentation_errors() {
        assert_eq!(augment_dataset(&[], &[], Placement::Prepend).unwrap(), vec![]);
        assert_eq!(
            augment_dataset(&[sample("a", "q")], &[pred("b", 0.1)], Placement::Prepend),
            Err(InjectError::MissingPrediction("a".into()))
        );
        assert_eq!(
            augment_dataset(&[sample("a", "q")], &[pred("a", 0.1), pred("a", 0.2)], Placement::Prepend),
            Err(InjectError::DuplicatePrediction("a".into()))
        );
    }
}
