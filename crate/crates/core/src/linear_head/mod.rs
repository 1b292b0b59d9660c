//! The 1024 → 10 → 1 probe head over frozen [CLS] features:
//!
//! ```text
//! H1 = LeakyReLU(x·W1 + b1, 0.01)
//! H2 = Dropout(H1, p = 0.3)
//! ŷ  = σ(H2·W2 + b2)
//! ```
//!
//! Forward, BCE loss, exact backprop, Adam training, and batch prediction.

mod io;
mod train;

use serde::Serialize;
use thiserror::Error;

use crate::feature_store::{FeatureRecord, Label, CLS_DIM};
use crate::par;
use crate::rng::SeededRng;

pub use io::{load_head, save_head, HeadIoError, HeadSidecar};
pub use train::{train, Adam, EpochLog, TrainConfig, TrainingLog};

pub const HIDDEN_WIDTH: usize = 10;
pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
/// Probability clamp applied inside the BCE loss only.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("non-finite input feature at index {0}")]
    NonFiniteInput(usize),
    #[error("feature length {found} does not match head input width {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training split contains a single class")]
    SingleClassTrainingSet,
    #[error("validation split is empty")]
    EmptyValidationSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dropout mask covers {found} samples but the batch has {expected}")]
    MaskMismatch { expected: usize, found: usize },
}

/// Weights of the head plus its fixed, non-learned hyperparameters.
///
/// `w1` is row-major `dim × hidden`, so `w1[i * hidden + j]` connects input
/// `i` to hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub dim: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    /// Inputs are scaled to unit L2 norm before the first layer.
    pub l2_normalize: bool,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient of the mean loss, laid out exactly like [`HeadParams`] weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl HeadParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout_p: DEFAULT_DROPOUT,
            l2_normalize: false,
            w1: vec![0.0; dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Zero head with the standard 1024 × 10 shape.
    pub fn standard() -> Self {
        Self::zeros(CLS_DIM, HIDDEN_WIDTH)
    }

    /// W1 and W2 uniform in `±1/√fan_in`, biases zero. Draws W1 in row-major
    /// order, then W2.
    pub fn init_uniform(dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(dim, hidden);
        let a1 = 1.0 / (dim as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.uniform(-a1, a1);
        }
        let a2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.uniform(-a2, a2);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check_input(&self, features: &[f64]) -> Result<(), HeadError> {
        if features.len() != self.dim {
            return Err(HeadError::DimensionMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        match features.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(HeadError::NonFiniteInput(i)),
            None => Ok(()),
        }
    }

    fn prepare<'a>(&self, features: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        if !self.l2_normalize {
            return features.into();
        }
        let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return features.into();
        }
        features.iter().map(|v| v / norm).collect::<Vec<_>>().into()
    }

    /// `x·W1 + b1`.
    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b1.clone();
        for (xi, row) in x.iter().zip(self.w1.chunks_exact(self.hidden)) {
            if *xi == 0.0 {
                continue;
            }
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        z
    }

    fn leaky(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    /// Derivative of LeakyReLU; at exactly 0 the negative-side slope is used.
    fn leaky_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }
}

impl Gradients {
    pub fn zeros_like(p: &HeadParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: 0.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub enum ForwardMode<'a> {
    Eval,
    /// Inverted dropout: one uniform draw per hidden unit, unit kept iff the
    /// draw is `>= p`, kept units scaled by `1/(1-p)`.
    Train(&'a mut SeededRng),
}

/// Probability that `features` is fake.
pub fn forward(
    features: &[f64],
    params: &HeadParams,
    mode: ForwardMode<'_>,
) -> Result<f64, HeadError> {
    params.check_input(features)?;
    let x = params.prepare(features);
    let z1 = params.pre_activation(&x);
    let mut z2 = params.b2;
    match mode {
        ForwardMode::Eval => {
            for (z, w) in z1.iter().zip(&params.w2) {
                z2 += params.leaky(*z) * w;
            }
        }
        ForwardMode::Train(rng) => {
            let scale = 1.0 / (1.0 - params.dropout_p);
            for (z, w) in z1.iter().zip(&params.w2) {
                if rng.next_f64() >= params.dropout_p {
                    z2 += params.leaky(*z) * scale * w;
                }
            }
        }
    }
    Ok(sigmoid(z2))
}

/// Pre-sigmoid output `H2·W2 + b2` with an explicit keep mask over hidden
/// units (kept units scaled by `1/(1-p)`); `None` is eval mode.
pub fn masked_logit(
    features: &[f64],
    params: &HeadParams,
    keep: Option<&[bool]>,
) -> Result<f64, HeadError> {
    params.check_input(features)?;
    let x = params.prepare(features);
    let z1 = params.pre_activation(&x);
    let scale = 1.0 / (1.0 - params.dropout_p);
    let mut z2 = params.b2;
    for (j, (z, w)) in z1.iter().zip(&params.w2).enumerate() {
        let k = match keep {
            None => 1.0,
            Some(mask) if mask[j] => scale,
            Some(_) => 0.0,
        };
        z2 += params.leaky(*z) * k * w;
    }
    Ok(z2)
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1-ε]`.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64, HeadError> {
    if predictions.len() != labels.len() {
        return Err(HeadError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(HeadError::EmptyBatch);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| sample_bce(p, y))
        .sum();
    Ok(total / predictions.len() as f64)
}

fn sample_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Per-sample keep flags for the hidden layer during one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    hidden: usize,
    keep: Vec<bool>,
}

impl DropoutMask {
    /// `keep` is row-major `samples × hidden`.
    pub fn new(hidden: usize, keep: Vec<bool>) -> Self {
        assert!(hidden > 0 && keep.len().is_multiple_of(hidden), "mask must be samples × hidden");
        Self { hidden, keep }
    }

    /// Draws `samples × hidden` flags, same rule as [`ForwardMode::Train`].
    pub fn sample(samples: usize, hidden: usize, p: f64, rng: &mut SeededRng) -> Self {
        let keep = (0..samples * hidden).map(|_| rng.next_f64() >= p).collect();
        Self { hidden, keep }
    }

    pub fn samples(&self) -> usize {
        self.keep.len() / self.hidden
    }

    fn row(&self, n: usize) -> &[bool] {
        &self.keep[n * self.hidden..(n + 1) * self.hidden]
    }
}

/// Analytic gradient of the mean BCE over `batch`. With a mask, kept hidden
/// units are scaled by `1/(1-p)` and dropped ones contribute nothing.
pub fn gradient(
    batch: &[FeatureRecord],
    params: &HeadParams,
    mask: Option<&DropoutMask>,
) -> Result<Gradients, HeadError> {
    loss_and_gradient(batch, params, mask).map(|(_, g)| g)
}

/// Mean BCE of the (masked) forward pass alongside its gradient.
pub fn loss_and_gradient(
    batch: &[FeatureRecord],
    params: &HeadParams,
    mask: Option<&DropoutMask>,
) -> Result<(f64, Gradients), HeadError> {
    if batch.is_empty() {
        return Err(HeadError::EmptyBatch);
    }
    if let Some(m) = mask {
        if m.samples() != batch.len() || m.hidden != params.hidden {
            return Err(HeadError::MaskMismatch {
                expected: batch.len(),
                found: m.samples(),
            });
        }
    }
    let n = batch.len() as f64;
    let scale = 1.0 / (1.0 - params.dropout_p);
    let mut g = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let mut h2 = vec![0.0; params.hidden];
    let mut keep_scale = vec![1.0; params.hidden];

    for (s, rec) in batch.iter().enumerate() {
        params.check_input(&rec.features)?;
        let x = params.prepare(&rec.features);
        let z1 = params.pre_activation(&x);
        if let Some(m) = mask {
            for (k, &kept) in keep_scale.iter_mut().zip(m.row(s)) {
                *k = if kept { scale } else { 0.0 };
            }
        }
        let mut z2 = params.b2;
        for j in 0..params.hidden {
            h2[j] = params.leaky(z1[j]) * keep_scale[j];
            z2 += h2[j] * params.w2[j];
        }
        let p = sigmoid(z2);
        let y = rec.label.target();
        loss += sample_bce(p, y);

        let dz2 = (p - y) / n;
        g.b2 += dz2;
        for j in 0..params.hidden {
            g.w2[j] += h2[j] * dz2;
            let dz1 = params.w2[j] * dz2 * keep_scale[j] * params.leaky_grad(z1[j]);
            if dz1 == 0.0 {
                continue;
            }
            g.b1[j] += dz1;
            for (i, xi) in x.iter().enumerate() {
                g.w1[i * params.hidden + j] += xi * dz1;
            }
        }
    }
    Ok((loss / n, g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadPrediction {
    pub image_id: String,
    pub probability_fake: f64,
}

/// Eval-mode probability per record, in input order. Runs on the rayon pool
/// when the `parallel` feature is enabled.
pub fn predict_batch(
    records: &[FeatureRecord],
    params: &HeadParams,
) -> Result<Vec<HeadPrediction>, HeadError> {
    par::map_ordered(records, |r| predict_one(r, params))
        .into_iter()
        .collect()
}

/// Single-threaded [`predict_batch`].
pub fn predict_batch_sequential(
    records: &[FeatureRecord],
    params: &HeadParams,
) -> Result<Vec<HeadPrediction>, HeadError> {
    records.iter().map(|r| predict_one(r, params)).collect()
}

fn predict_one(r: &FeatureRecord, params: &HeadParams) -> Result<HeadPrediction, HeadError> {
    Ok(HeadPrediction {
        image_id: r.image_id.clone(),
        probability_fake: forward(&r.features, params, ForwardMode::Eval)?,
    })
}

/// Thresholded label: probabilities at or above the threshold are Fake.
pub fn decide(probability_fake: f64, threshold: f64) -> Label {
    if probability_fake >= threshold {
        Label::Fake
    } else {
        Label::Real
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    /// F1 with Fake as the positive class.
    pub f1_fake: f64,
}

pub fn classifier_metrics(
    predictions: &[HeadPrediction],
    labels: &[Label],
    threshold: f64,
) -> Result<ClassifierMetrics, HeadError> {
    if predictions.len() != labels.len() {
        return Err(HeadError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(HeadError::EmptyBatch);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (p, &y) in predictions.iter().zip(labels) {
        match (decide(p.probability_fake, threshold), y) {
            (Label::Fake, Label::Fake) => tp += 1,
            (Label::Fake, Label::Real) => fp += 1,
            (Label::Real, Label::Real) => tn += 1,
            (Label::Real, Label::Fake) => fn_ += 1,
        }
    }
    Ok(ClassifierMetrics {
        accuracy: (tp + tn) as f64 / predictions.len() as f64,
        f1_fake: f1(tp, fp, fn_),
    })
}

/// `2TP / (2TP + FP + FN)`, 0 when undefined.
pub(crate) fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 || tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}
