use serde::{Deserialize, Serialize};

use super::{
    classifier_metrics, loss_and_gradient, predict_batch_sequential, DropoutMask, Gradients,
    HeadError, HeadParams, DEFAULT_DROPOUT, DEFAULT_LEAKY_SLOPE, HIDDEN_WIDTH,
};
use crate::feature_store::{FeatureRecord, Label, Split};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub l2_normalize: bool,
    /// Decision threshold used for validation accuracy.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 64,
            dropout_p: DEFAULT_DROPOUT,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            hidden: HIDDEN_WIDTH,
            seed: 0,
            patience: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            l2_normalize: false,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HeadError> {
        let bad = |m: &str| Err(HeadError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

/// Adam with bias correction over the flattened parameter vector
/// (W1, b1, W2, b2 in that order).
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            lr,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut HeadParams, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let weights = params
            .w1
            .iter_mut()
            .chain(params.b1.iter_mut())
            .chain(params.w2.iter_mut())
            .chain(std::iter::once(&mut params.b2));
        let grads = grads
            .w1
            .iter()
            .chain(&grads.b1)
            .chain(&grads.w2)
            .chain(std::iter::once(&grads.b2));
        for (((w, g), m), v) in weights.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Trains on the `train` split and selects by accuracy on the `val` split.
/// Records from the `test` split are ignored.
///
/// Draw order from the seeded stream: parameter initialisation comes from a
/// split-off child stream; the parent then supplies, per epoch, one shuffle
/// of the training indices followed by `batch × hidden` dropout draws per
/// mini-batch. Single-threaded, so a fixed seed gives identical parameters.
pub fn train(
    records: &[FeatureRecord],
    config: &TrainConfig,
) -> Result<(HeadParams, TrainingLog), HeadError> {
    config.validate()?;
    let train_set: Vec<&FeatureRecord> =
        records.iter().filter(|r| r.split == Split::Train).collect();
    let val_set: Vec<FeatureRecord> = records
        .iter()
        .filter(|r| r.split == Split::Val)
        .cloned()
        .collect();
    if train_set.is_empty() {
        return Err(HeadError::EmptyBatch);
    }
    let has = |l: Label| train_set.iter().any(|r| r.label == l);
    if !(has(Label::Real) && has(Label::Fake)) {
        return Err(HeadError::SingleClassTrainingSet);
    }
    if val_set.is_empty() {
        return Err(HeadError::EmptyValidationSet);
    }
    let dim = train_set[0].features.len();
    let val_labels: Vec<Label> = val_set.iter().map(|r| r.label).collect();

    let mut rng = SeededRng::new(config.seed);
    let mut init_rng = rng.split();
    let mut params = HeadParams::init_uniform(dim, config.hidden, &mut init_rng);
    params.leaky_slope = config.leaky_slope;
    params.dropout_p = config.dropout_p;
    params.l2_normalize = config.l2_normalize;

    let mut adam = Adam::new(
        params.num_parameters(),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<FeatureRecord> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mask = (params.dropout_p > 0.0).then(|| {
                DropoutMask::sample(batch.len(), params.hidden, params.dropout_p, &mut rng)
            });
            let (loss, grads) = loss_and_gradient(&batch, &params, mask.as_ref())?;
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut params, &grads);
        }
        let preds = predict_batch_sequential(&val_set, &params)?;
        let val_accuracy = classifier_metrics(&preds, &val_labels, config.threshold)?.accuracy;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok((
        best,
        TrainingLog {
            epochs: log,
            best_epoch,
            best_val_accuracy: best_acc,
            stopped_early,
        },
    ))
}
