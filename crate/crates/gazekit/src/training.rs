//! Training: uncertainty-weighted cosine loss, Adam, quadrant-balancing
//! augmentation, confidence statistics, and the early-stopped epoch loop.
//!
//! The per-sample loss is
//!
//! ```text
//! L = exp(-sigma)/2 * (-g . g_hat / (|g| |g_hat|)) + ln(sigma)/2
//! ```
//!
//! which needs no uncertainty labels: the exp(-sigma) factor attenuates the
//! cosine term while ln(sigma)/2 penalizes large uncertainties. Note that L
//! decreases without bound as sigma -> 0, which is why the network floors
//! sigma at `SIGMA_FLOOR`; the useful uncertainty signal comes from sigma
//! descending more slowly on samples with high cosine error, so training must
//! stop on validation angular error (as done here) rather than run the loss
//! to convergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledSample;
use crate::evaluation::angular_error;
use crate::features::{mirror_sample, GazeLabel, NUM_KEYPOINTS};
use crate::network::{init_weights, InputVariant, ModelWeights, SIGMA_FLOOR};
use crate::rng::{SeedRng, SeedRngExt};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Greatest lower bound of the per-sample loss given the sigma floor.
pub fn loss_floor() -> f64 {
    -0.5 * (-SIGMA_FLOOR).exp() + SIGMA_FLOOR.ln() / 2.0
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("prediction norm below 1e-12; cosine undefined")]
    DegeneratePrediction,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (samples: {})", samples.join(", "))]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64, samples: Vec<String> },
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    None,
    QuadrantBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 penalty applied to the two hidden layers' weight matrices only.
    pub l2_hidden: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub input_variant: InputVariant,
    /// Keep the base model's confidence statistics when fine-tuning instead
    /// of recomputing them from the new training set.
    pub freeze_conf_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 1024,
            max_epochs: 500,
            patience: 20,
            l2_hidden: 1e-4,
            seed: 0,
            augmentation: Augmentation::None,
            input_variant: InputVariant::Gated,
            freeze_conf_stats: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning a pre-trained model on a new camera/domain.
    pub fn fine_tune_default() -> Self {
        Self { learning_rate: 1e-5, batch_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.l2_hidden < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "l2_hidden must be non-negative, got {}",
                self.l2_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-sample loss over the epoch, including the L2 term.
    pub train_loss: f64,
    /// Mean angular error on the validation set after the epoch, degrees.
    pub val_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: InputVariant,
    pub seed: u64,
    /// Validation error of the freshly initialized model, before any update.
    pub initial_val_error_deg: f64,
    /// Epoch index (into `history`) whose weights were restored; `None` when
    /// no epoch ran.
    pub best_epoch: Option<usize>,
    /// Validation error at the best epoch, degrees.
    pub final_val_error_deg: f64,
    pub stop_reason: StopReason,
    pub history: Vec<EpochStats>,
}

/// Per-sample loss value. `g` must be (near) unit; errors when the raw
/// prediction has negligible norm.
pub fn loss(g: &GazeLabel, g_tilde: [f64; 2], sigma: f64) -> Result<f64, TrainError> {
    let norm = (g_tilde[0] * g_tilde[0] + g_tilde[1] * g_tilde[1]).sqrt();
    if norm < 1e-12 {
        return Err(TrainError::DegeneratePrediction);
    }
    let g_norm = (g.g[0] * g.g[0] + g.g[1] * g.g[1]).sqrt();
    let cos = (g.g[0] * g_tilde[0] + g.g[1] * g_tilde[1]) / (g_norm * norm);
    Ok((-sigma).exp() / 2.0 * (-cos) + sigma.ln() / 2.0)
}

/// Loss value plus its gradients with respect to the raw prediction and the
/// (post-transform) uncertainty.
pub fn loss_gradients(
    g: &GazeLabel,
    g_tilde: [f64; 2],
    sigma: f64,
) -> Result<(f64, [f64; 2], f64), TrainError> {
    let norm = (g_tilde[0] * g_tilde[0] + g_tilde[1] * g_tilde[1]).sqrt();
    if norm < 1e-12 {
        return Err(TrainError::DegeneratePrediction);
    }
    let unit = [g_tilde[0] / norm, g_tilde[1] / norm];
    let cos = g.g[0] * unit[0] + g.g[1] * unit[1];
    let value = (-sigma).exp() / 2.0 * (-cos) + sigma.ln() / 2.0;
    let scale = -(-sigma).exp() / 2.0 / norm;
    let d_g = [scale * (g.g[0] - cos * unit[0]), scale * (g.g[1] - cos * unit[1])];
    let d_sigma = (-sigma).exp() * cos / 2.0 + 0.5 / sigma;
    Ok((value, d_g, d_sigma))
}

/// Mean and population standard deviation over every confidence value of the
/// training set (absent keypoints contribute zeros). The deviation is clamped
/// below by 1e-6 so standardization stays finite on constant-confidence sets.
pub fn compute_confidence_stats(train_set: &[LabeledSample]) -> (f64, f64) {
    let n = (train_set.len() * NUM_KEYPOINTS) as f64;
    let mut sum = 0.0;
    for s in train_set {
        for i in 0..NUM_KEYPOINTS {
            sum += s.features.confidence(i);
        }
    }
    let mean = sum / n;
    let mut sq = 0.0;
    for s in train_set {
        for i in 0..NUM_KEYPOINTS {
            sq += (s.features.confidence(i) - mean).powi(2);
        }
    }
    let std = (sq / n).sqrt().max(1e-6);
    (mean, std)
}

/// The over-represented gaze quadrant: label angles in `[-90, 0]` degrees.
pub fn in_quadrant_a(label: &GazeLabel) -> bool {
    let a = label.angle_deg();
    (-90.0..=0.0).contains(&a)
}

/// The under-represented gaze quadrant: label angles in `[-180, -90)` degrees.
pub fn in_quadrant_b(label: &GazeLabel) -> bool {
    let a = label.angle_deg();
    (-180.0..-90.0).contains(&a)
}

/// Equalizes the two lower gaze quadrants by mirroring randomly selected
/// samples from the over-represented one. Original samples are never removed
/// and samples outside the two quadrants are untouched.
pub fn balance_quadrants(train_set: &[LabeledSample], rng: &mut SeedRng) -> Vec<LabeledSample> {
    use rand::seq::SliceRandom;

    let a_idx: Vec<usize> =
        (0..train_set.len()).filter(|&i| in_quadrant_a(&train_set[i].label)).collect();
    let b_idx: Vec<usize> =
        (0..train_set.len()).filter(|&i| in_quadrant_b(&train_set[i].label)).collect();
    let (over, need) = if a_idx.len() >= b_idx.len() {
        (a_idx.clone(), a_idx.len() - b_idx.len())
    } else {
        (b_idx.clone(), b_idx.len() - a_idx.len())
    };
    let mut out = train_set.to_vec();
    if need == 0 {
        return out;
    }
    let mut chosen: Vec<usize> = over.choose_multiple(rng, need).copied().collect();
    chosen.sort_unstable();
    for i in chosen {
        let s = &train_set[i];
        let (features, label) = mirror_sample(&s.features, &s.label);
        out.push(LabeledSample { meta: s.meta.clone(), features, label });
    }
    out
}

/// First and second moment accumulators of Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update for a single coordinate. Returns the
/// additive weight delta.
pub(crate) fn adam_delta(m: &mut f64, v: &mut f64, t: u64, grad: f64, lr: f64) -> f64 {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
    let m_hat = *m / (1.0 - ADAM_BETA1.powi(t as i32));
    let v_hat = *v / (1.0 - ADAM_BETA2.powi(t as i32));
    -lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
}

/// Applies one Adam step. The L2 penalty (`l2_hidden * w`) is added to the
/// gradient of every hidden-layer weight-matrix entry before the update;
/// biases, the input layer, and the output layer are not penalized.
pub fn adam_step(
    weights: &mut ModelWeights,
    gradients: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    l2_hidden: f64,
) {
    assert_eq!(gradients.len(), state.m.len(), "gradient/state length mismatch");
    state.t += 1;
    let t = state.t;
    let mut i = 0;
    weights.visit_params_mut(|w, hidden_weight| {
        let g = gradients[i] + if hidden_weight { l2_hidden * *w } else { 0.0 };
        *w += adam_delta(&mut state.m[i], &mut state.v[i], t, g, learning_rate);
        i += 1;
    });
    assert_eq!(i, gradients.len());
}

/// Mean angular error of `weights` on a sample set, degrees. Degenerate
/// predictions score the worst possible 180 degrees.
pub fn mean_angular_error(weights: &ModelWeights, samples: &[LabeledSample]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let p = weights.forward(&s.features).prediction;
            angular_error(s.label.g, p.g).unwrap_or(180.0)
        })
        .sum();
    sum / samples.len() as f64
}

/// Trains a fresh model. Deterministic given `(config, data)`.
pub fn train(
    config: &TrainConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
) -> Result<(ModelWeights, TrainReport), TrainError> {
    config.validate()?;
    let mut weights = init_weights(config.seed, config.input_variant);
    let (mean, std) = non_empty_stats(config, train_set, val_set)?;
    weights.conf_mean = mean;
    weights.conf_std = std;
    run_training(weights, config, train_set, val_set)
}

/// Continues training from `base`. Confidence statistics are recomputed from
/// the new training set unless `config.freeze_conf_stats` is set.
pub fn fine_tune(
    base: &ModelWeights,
    config: &TrainConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
) -> Result<(ModelWeights, TrainReport), TrainError> {
    config.validate()?;
    if base.variant() != config.input_variant {
        return Err(TrainError::ArchMismatch {
            expected: config.input_variant.arch_tag().to_string(),
            found: base.arch_tag.clone(),
        });
    }
    let mut weights = base.clone();
    if !config.freeze_conf_stats {
        let (mean, std) = non_empty_stats(config, train_set, val_set)?;
        weights.conf_mean = mean;
        weights.conf_std = std;
    } else if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    run_training(weights, config, train_set, val_set)
}

fn non_empty_stats(
    _config: &TrainConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
) -> Result<(f64, f64), TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(compute_confidence_stats(train_set))
}

fn run_training(
    mut weights: ModelWeights,
    config: &TrainConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
) -> Result<(ModelWeights, TrainReport), TrainError> {
    use rand::seq::SliceRandom;

    let mut rng = SeedRng::for_stream(config.seed, 0x7231);
    let working: Vec<LabeledSample> = match config.augmentation {
        Augmentation::None => train_set.to_vec(),
        Augmentation::QuadrantBalance => balance_quadrants(train_set, &mut rng),
    };

    let initial_val = mean_angular_error(&weights, val_set);
    let param_count = weights.param_count();
    let mut state = AdamState::new(param_count);
    let mut grad_sum = vec![0.0; param_count];

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelWeights)> = None;
    let mut epochs_since_best = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    let mut order: Vec<usize> = (0..working.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            grad_sum.iter_mut().for_each(|g| *g = 0.0);
            let mut data_loss_sum = 0.0;
            for &i in batch {
                let s = &working[i];
                let trace = weights.forward(&s.features);
                let p = trace.prediction;
                let (value, d_g, d_sigma) = loss_gradients(&s.label, p.g, p.sigma)?;
                data_loss_sum += value;
                let g = weights.backward(&trace, d_g[0], d_g[1], d_sigma);
                for (acc, gi) in grad_sum.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let inv_n = 1.0 / batch.len() as f64;
            grad_sum.iter_mut().for_each(|g| *g *= inv_n);

            let batch_loss = data_loss_sum * inv_n + l2_penalty(&weights, config.l2_hidden);
            if !batch_loss.is_finite() {
                let samples =
                    batch.iter().take(8).map(|&i| working[i].meta.key()).collect();
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                    samples,
                });
            }
            epoch_loss_sum += batch_loss * batch.len() as f64;

            adam_step(&mut weights, &grad_sum, &mut state, config.learning_rate, config.l2_hidden);
        }

        let val_err = mean_angular_error(&weights, val_set);
        history.push(EpochStats {
            train_loss: epoch_loss_sum / working.len() as f64,
            val_error_deg: val_err,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val_err < *b) {
            best = Some((epoch, val_err, weights.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (best_epoch, final_val) = match best {
        Some((e, v, w)) => {
            weights = w;
            (Some(e), v)
        }
        None => (None, initial_val),
    };
    let report = TrainReport {
        variant: config.input_variant,
        seed: config.seed,
        initial_val_error_deg: initial_val,
        best_epoch,
        final_val_error_deg: final_val,
        stop_reason,
        history,
    };
    Ok((weights, report))
}

/// The L2 term added to reported losses: `l2/2 * sum(w^2)` over hidden
/// weights, consistent with the `l2 * w` gradient contribution.
fn l2_penalty(weights: &ModelWeights, l2_hidden: f64) -> f64 {
    if l2_hidden == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for layer in [&weights.fc1, &weights.fc2] {
        for row in &layer.weights {
            for w in row {
                sum += w * w;
            }
        }
    }
    0.5 * l2_hidden * sum
}
