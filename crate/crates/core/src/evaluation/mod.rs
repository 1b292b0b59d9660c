//! Detection scores (accuracy, per-class and aggregate F1) and explanation
//! scores (ROUGE-L, cosine similarity) for free-text model outputs.

mod report;
mod rouge;
mod verdict;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{DatasetManifest, FeatureMatrix, Label};
use crate::linear_head::f1;
use crate::par;

pub use report::{render_table, CSS_ABSENT};
pub use rouge::{lcs_len, rouge_l, tokenize, DEFAULT_BETA};
pub use verdict::{extract_verdict, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} verdicts vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("response for {0:?} has no reference entry")]
    MissingReference(String),
    #[error("embeddings misaligned: {0}")]
    MisalignedEmbeddings(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding vector")]
    ZeroNormVector,
    #[error("line {line}: invalid response record: {reason}")]
    InvalidResponse { line: usize, reason: String },
}

/// Confusion counts with Fake as the positive class. Unknown verdicts are
/// kept out of `fp`/`fn` and tallied per true class instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub unknown_real: usize,
    pub unknown_fake: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.unknown_real + self.unknown_fake
    }

    pub fn fake_support(&self) -> usize {
        self.tp + self.fn_ + self.unknown_fake
    }

    pub fn real_support(&self) -> usize {
        self.tn + self.fp + self.unknown_real
    }

    fn add(&mut self, verdict: Verdict, label: Label) {
        match (verdict, label) {
            (Verdict::Fake, Label::Fake) => self.tp += 1,
            (Verdict::Fake, Label::Real) => self.fp += 1,
            (Verdict::Real, Label::Real) => self.tn += 1,
            (Verdict::Real, Label::Fake) => self.fn_ += 1,
            (Verdict::Unknown, Label::Real) => self.unknown_real += 1,
            (Verdict::Unknown, Label::Fake) => self.unknown_fake += 1,
        }
    }
}

pub fn confusion(verdicts: &[Verdict], labels: &[Label]) -> Result<Confusion, EvalError> {
    if verdicts.len() != labels.len() {
        return Err(EvalError::LengthMismatch(verdicts.len(), labels.len()));
    }
    let mut c = Confusion::default();
    for (&v, &l) in verdicts.iter().zip(labels) {
        c.add(v, l);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    /// Recall of the class.
    pub accuracy: f64,
    /// One-vs-rest F1.
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub per_class: BTreeMap<Label, ClassScore>,
    pub overall_accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub fake_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn detection_metrics(c: &Confusion) -> Result<DetectionMetrics, EvalError> {
    let n = c.total();
    if n == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    // A Real-class miss is anything truly Real not called Real.
    let fake = ClassScore {
        accuracy: ratio(c.tp, c.fake_support()),
        f1: f1(c.tp, c.fp, c.fn_ + c.unknown_fake),
        support: c.fake_support(),
    };
    let real = ClassScore {
        accuracy: ratio(c.tn, c.real_support()),
        f1: f1(c.tn, c.fn_, c.fp + c.unknown_real),
        support: c.real_support(),
    };
    let weighted_f1 =
        fake.f1 * ratio(fake.support, n) + real.f1 * ratio(real.support, n);
    Ok(DetectionMetrics {
        overall_accuracy: ratio(c.tp + c.tn, n),
        macro_f1: (fake.f1 + real.f1) / 2.0,
        weighted_f1,
        fake_f1: fake.f1,
        per_class: BTreeMap::from([(Label::Real, real), (Label::Fake, fake)]),
    })
}

/// Cosine similarity.
pub fn css(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroNormVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One line of a responses file. Success lines carry `response`; failed
/// backend calls carry `error` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability_fake: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResponseRecord {
    pub fn ok(image_id: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            probability_fake: None,
            prompt: None,
            response: Some(response.into()),
            error: None,
        }
    }
}

pub fn parse_responses(text: &str) -> Result<Vec<ResponseRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResponseRecord =
            serde_json::from_str(line).map_err(|e| EvalError::InvalidResponse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if rec.response.is_none() && rec.error.is_none() {
            return Err(EvalError::InvalidResponse {
                line: i + 1,
                reason: "record has neither 'response' nor 'error'".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Candidate/reference explanation embeddings; row `i` of each matrix
/// belongs to the `i`-th response.
#[derive(Debug, Clone)]
pub struct EmbeddingPairs {
    pub candidate: FeatureMatrix,
    pub reference: FeatureMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub beta: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    #[serde(flatten)]
    pub detection: DetectionMetrics,
    pub counts: Confusion,
    pub rouge_l_mean: Option<f64>,
    pub rouge_l_samples: usize,
    pub css_mean: Option<f64>,
    pub css_samples: usize,
    pub failed_responses: usize,
}

struct Scored {
    verdict: Verdict,
    label: Label,
    rouge: Option<f64>,
}

/// Scores a responses file against the manifest's labels and reference
/// explanations. Failed responses count as Unknown and score 0 ROUGE-L
/// where a reference exists.
pub fn evaluate_run(
    responses: &[ResponseRecord],
    references: &DatasetManifest,
    embeddings: Option<&EmbeddingPairs>,
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if responses.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let index: HashMap<&str, usize> = references
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_id.as_str(), i))
        .collect();
    let entries = responses
        .iter()
        .map(|r| {
            index
                .get(r.image_id.as_str())
                .map(|&i| &references.entries()[i])
                .ok_or_else(|| EvalError::MissingReference(r.image_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let pairs: Vec<_> = responses.iter().zip(entries).collect();
    let scored = par::map_ordered(&pairs, |(resp, entry)| {
        let text = resp.response.as_deref().unwrap_or("");
        Scored {
            verdict: extract_verdict(text),
            label: entry.label,
            rouge: entry
                .explanation
                .as_deref()
                .map(|ex| rouge_l(&tokenize(ex), &tokenize(text), options.beta)),
        }
    });

    let mut counts = Confusion::default();
    for s in &scored {
        counts.add(s.verdict, s.label);
    }
    let detection = detection_metrics(&counts)?;
    let rouges: Vec<f64> = scored.iter().filter_map(|s| s.rouge).collect();
    let rouge_l_mean = mean(&rouges);

    let css_values = match embeddings {
        Some(e) => css_pairs(e, responses.len())?,
        None => Vec::new(),
    };

    Ok(EvalReport {
        samples: responses.len(),
        detection,
        counts,
        rouge_l_mean,
        rouge_l_samples: rouges.len(),
        css_mean: mean(&css_values),
        css_samples: css_values.len(),
        failed_responses: responses.iter().filter(|r| r.response.is_none()).count(),
    })
}

fn css_pairs(e: &EmbeddingPairs, expected_rows: usize) -> Result<Vec<f64>, EvalError> {
    if e.candidate.rows() != expected_rows || e.reference.rows() != expected_rows {
        return Err(EvalError::MisalignedEmbeddings(format!(
            "{} responses but {} candidate and {} reference rows",
            expected_rows,
            e.candidate.rows(),
            e.reference.rows()
        )));
    }
    if e.candidate.dim() != e.reference.dim() {
        return Err(EvalError::MisalignedEmbeddings(format!(
            "candidate dim {} != reference dim {}",
            e.candidate.dim(),
            e.reference.dim()
        )));
    }
    let rows: Vec<usize> = (0..expected_rows).collect();
    par::map_ordered(&rows, |&i| css(e.candidate.row(i), e.reference.row(i)))
        .into_iter()
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(par::compensated_sum(values.iter().copied()) / values.len() as f64)
    }
}
