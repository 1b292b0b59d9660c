//! Conversation dataset files.
//!
//! The native format is NDJSON with one flat record per sample:
//! `{"image_id": .., "user": .., "assistant": .., "label": "real"|"fake"}`.
//! LLaVA-style JSON arrays are also accepted; only the first human/gpt
//! exchange of each conversation is kept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ConversationSample;
use crate::feature_store::Label;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatIn {
    image_id: String,
    user: String,
    assistant: String,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct FlatOut<'a> {
    image_id: &'a str,
    user: &'a str,
    assistant: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

pub fn parse_conversations(text: &str) -> Result<Vec<ConversationSample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: FlatIn = serde_json::from_str(line).map_err(|source| DatasetError::Json {
            line: line_no,
            source,
        })?;
        let label = raw
            .label
            .map(|l| {
                l.parse::<Label>().map_err(|_| DatasetError::UnknownLabel {
                    line: line_no,
                    label: l.clone(),
                })
            })
            .transpose()?;
        out.push(validated(
            ConversationSample {
                image_id: raw.image_id,
                user_text: raw.user,
                assistant_text: raw.assistant,
                label,
            },
            line_no,
        )?);
    }
    Ok(out)
}

pub fn write_conversations(samples: &[ConversationSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let rec = FlatOut {
            image_id: &s.image_id,
            user: &s.user_text,
            assistant: &s.assistant_text,
            label: s.label,
        };
        out.push_str(&serde_json::to_string(&rec).expect("sample serializes"));
        out.push('\n');
    }
    out
}

#[derive(Deserialize)]
struct LlavaItem {
    id: Option<String>,
    image: Option<String>,
    conversations: Vec<LlavaTurn>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Deserialize)]
struct LlavaTurn {
    from: String,
    value: String,
}

/// Flattens a LLaVA-style JSON array. The image id is `id`, falling back to
/// `image`. Line numbers in errors are 1-based array positions.
pub fn parse_llava_conversations(text: &str) -> Result<Vec<ConversationSample>, DatasetError> {
    let items: Vec<LlavaItem> =
        serde_json::from_str(text).map_err(|source| DatasetError::Json { line: 0, source })?;
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let pos = i + 1;
            let invalid = |reason: &str| DatasetError::Invalid {
                line: pos,
                reason: reason.into(),
            };
            let image_id = item
                .id
                .or(item.image)
                .ok_or_else(|| invalid("record has neither 'id' nor 'image'"))?;
            let human = item
                .conversations
                .iter()
                .position(|t| t.from == "human")
                .ok_or_else(|| invalid("no human turn"))?;
            let gpt = item.conversations[human + 1..]
                .iter()
                .find(|t| t.from == "gpt")
                .ok_or_else(|| invalid("no gpt turn after the first human turn"))?;
            let label = item
                .label
                .map(|l| {
                    l.parse::<Label>()
                        .map_err(|_| DatasetError::UnknownLabel { line: pos, label: l.clone() })
                })
                .transpose()?;
            validated(
                ConversationSample {
                    image_id,
                    user_text: item.conversations[human].value.clone(),
                    assistant_text: gpt.value.clone(),
                    label,
                },
                pos,
            )
        })
        .collect()
}

fn validated(s: ConversationSample, line: usize) -> Result<ConversationSample, DatasetError> {
    if s.image_id.is_empty() {
        return Err(DatasetError::Invalid { line, reason: "empty image_id".into() });
    }
    if s.user_text.is_empty() {
        return Err(DatasetError::Invalid { line, reason: "empty user text".into() });
    }
    Ok(s)
}
