//! The gaze regression network: a fixed small MLP whose input layer gates
//! each coordinate on its keypoint's detection confidence.
//!
//! Architecture: 10 gated input units (one per keypoint coordinate), two
//! fully-connected hidden layers of 10 relu units, and a linear output layer
//! of 3 units. Outputs 0 and 1 are the raw gaze vector; output 2 feeds a
//! softplus (plus a small floor) to produce the strictly positive
//! uncertainty. In the standard configuration the network has exactly 283
//! learnable parameters.
//!
//! Each gated unit computes `relu(w_in * q + b_in) * sigmoid(w_gate * c)`,
//! where `q` is one centered/scaled coordinate and `c` is the keypoint's
//! standardized confidence. The gate deliberately has no bias so that it
//! cannot learn to ignore the confidence on datasets dominated by confident
//! detections; a zero raw confidence (absent keypoint) standardizes to a
//! strongly negative value and closes the gate.
//!
//! Two ablation input layers are supported: `coords-only` drops confidences
//! entirely (10 plain relu units) and `relu-conf` feeds coordinates and
//! confidences through 15 plain relu units with no gating.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_LEN, NUM_KEYPOINTS};
use crate::rng::{normal, SeedRng, SeedRngExt};

/// Lower bound added to the softplus output so the uncertainty stays
/// strictly positive and `ln(sigma)` stays finite.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Current model file schema version.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

const HIDDEN: usize = 10;
const OUTPUTS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Input-layer flavor of the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputVariant {
    /// Confidence-gated units on each coordinate (the standard model).
    Gated,
    /// Plain relu units on coordinates only; confidences are discarded.
    CoordsOnly,
    /// Plain relu units on coordinates and confidences, no gating.
    ReluConf,
}

impl InputVariant {
    pub fn arch_tag(&self) -> &'static str {
        match self {
            InputVariant::Gated => "gated10-fc10-fc10-out3",
            InputVariant::CoordsOnly => "relu10-fc10-fc10-out3",
            InputVariant::ReluConf => "relu15-fc10-fc10-out3",
        }
    }

    fn from_arch_tag(tag: &str) -> Option<Self> {
        match tag {
            "gated10-fc10-fc10-out3" => Some(InputVariant::Gated),
            "relu10-fc10-fc10-out3" => Some(InputVariant::CoordsOnly),
            "relu15-fc10-fc10-out3" => Some(InputVariant::ReluConf),
            _ => None,
        }
    }

    /// Width of the input layer (= fan-in of the first hidden layer).
    pub fn input_width(&self) -> usize {
        match self {
            InputVariant::Gated | InputVariant::CoordsOnly => 2 * NUM_KEYPOINTS,
            InputVariant::ReluConf => FEATURE_LEN,
        }
    }
}

impl std::fmt::Display for InputVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            InputVariant::Gated => "gated",
            InputVariant::CoordsOnly => "coords-only",
            InputVariant::ReluConf => "relu-conf",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for InputVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gated" => Ok(InputVariant::Gated),
            "coords-only" => Ok(InputVariant::CoordsOnly),
            "relu-conf" => Ok(InputVariant::ReluConf),
            other => Err(format!(
                "unknown variant '{other}' (expected gated, coords-only, or relu-conf)"
            )),
        }
    }
}

/// Parameters of one confidence-gated input unit: an affine relu path on the
/// coordinate and a bias-free sigmoid gate on the confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedUnit {
    pub w_in: f64,
    pub b_in: f64,
    pub w_gate: f64,
}

/// Parameters of one plain relu input unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReluUnit {
    pub w: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputLayer {
    Gated { units: Vec<GatedUnit> },
    Relu { units: Vec<ReluUnit>, with_confidences: bool },
}

impl InputLayer {
    pub fn variant(&self) -> InputVariant {
        match self {
            InputLayer::Gated { .. } => InputVariant::Gated,
            InputLayer::Relu { with_confidences: false, .. } => InputVariant::CoordsOnly,
            InputLayer::Relu { with_confidences: true, .. } => InputVariant::ReluConf,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            InputLayer::Gated { units } => 3 * units.len(),
            InputLayer::Relu { units, .. } => 2 * units.len(),
        }
    }

    fn width(&self) -> usize {
        match self {
            InputLayer::Gated { units } => units.len(),
            InputLayer::Relu { units, .. } => units.len(),
        }
    }
}

/// A dense layer stored row-major: `weights[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.len()
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.iter().zip(&self.biases)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b;
        }
    }
}

/// All model parameters plus the frozen confidence statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub arch_tag: String,
    pub input: InputLayer,
    pub fc1: Dense,
    pub fc2: Dense,
    pub out: Dense,
    /// Mean of the training-set confidence values (all slots, zeros included).
    pub conf_mean: f64,
    /// Standard deviation of the training-set confidences, clamped above zero.
    pub conf_std: f64,
}

/// One network prediction: raw gaze vector and positive uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePrediction {
    /// Raw regression outputs; not necessarily unit length.
    pub g: [f64; 2],
    /// Uncertainty after the softplus-plus-floor transform; always positive.
    pub sigma: f64,
}

impl GazePrediction {
    /// Normalized gaze direction, if the raw vector is non-degenerate.
    pub fn unit(&self) -> Option<[f64; 2]> {
        let norm = (self.g[0] * self.g[0] + self.g[1] * self.g[1]).sqrt();
        (norm >= 1e-12).then(|| [self.g[0] / norm, self.g[1] / norm])
    }
}

/// Cached intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    features: [f64; FEATURE_LEN],
    std_confs: [f64; NUM_KEYPOINTS],
    /// Pre-activation of each input unit's relu path.
    input_pre: Vec<f64>,
    /// Gate value of each gated unit (unused by relu variants).
    gates: Vec<f64>,
    input_out: Vec<f64>,
    z1: [f64; HIDDEN],
    a1: [f64; HIDDEN],
    z2: [f64; HIDDEN],
    a2: [f64; HIDDEN],
    z3: [f64; OUTPUTS],
    pub prediction: GazePrediction,
}

/// Gradients for every learnable parameter, flattened in canonical order
/// (input layer, fc1 weights then biases, fc2, output layer).
pub type GradientVec = Vec<f64>;

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient convention: relu'(0) = 0.
pub fn relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Output of one gated unit on a coordinate `q` and standardized confidence.
pub fn gated_unit_forward(q: f64, c_std: f64, p: &GatedUnit) -> f64 {
    relu(p.w_in * q + p.b_in) * sigmoid(p.w_gate * c_std)
}

impl ModelWeights {
    /// Total learnable parameter count (confidence statistics excluded).
    pub fn param_count(&self) -> usize {
        self.input.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
            + self.out.param_count()
    }

    /// Per-layer learnable parameter counts: (input, fc1, fc2, output).
    pub fn layer_param_counts(&self) -> (usize, usize, usize, usize) {
        (
            self.input.param_count(),
            self.fc1.param_count(),
            self.fc2.param_count(),
            self.out.param_count(),
        )
    }

    pub fn variant(&self) -> InputVariant {
        self.input.variant()
    }

    /// Copies all learnable parameters into a flat vector in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match &self.input {
            InputLayer::Gated { units } => {
                for u in units {
                    out.extend([u.w_in, u.b_in, u.w_gate]);
                }
            }
            InputLayer::Relu { units, .. } => {
                for u in units {
                    out.extend([u.w, u.b]);
                }
            }
        }
        for layer in [&self.fc1, &self.fc2, &self.out] {
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Applies `f` to every learnable parameter in canonical order. `hidden_weight`
    /// is true exactly for fc1/fc2 weight-matrix entries (the L2-penalized set).
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut f64, bool)) {
        match &mut self.input {
            InputLayer::Gated { units } => {
                for u in units {
                    f(&mut u.w_in, false);
                    f(&mut u.b_in, false);
                    f(&mut u.w_gate, false);
                }
            }
            InputLayer::Relu { units, .. } => {
                for u in units {
                    f(&mut u.w, false);
                    f(&mut u.b, false);
                }
            }
        }
        for (layer, penalized) in [(&mut self.fc1, true), (&mut self.fc2, true), (&mut self.out, false)] {
            for row in &mut layer.weights {
                for w in row {
                    f(w, penalized);
                }
            }
            for b in &mut layer.biases {
                f(b, false);
            }
        }
    }

    /// Standardizes a raw confidence with the frozen statistics.
    pub fn standardize_conf(&self, c: f64) -> f64 {
        (c - self.conf_mean) / self.conf_std
    }

    /// Forward pass. Returns the prediction together with every cached
    /// pre-activation needed by `backward`.
    pub fn forward(&self, features: &FeatureVector) -> ForwardTrace {
        let mut std_confs = [0.0; NUM_KEYPOINTS];
        for (i, c) in std_confs.iter_mut().enumerate() {
            *c = self.standardize_conf(features.confidence(i));
        }

        let width = self.input.width();
        let mut input_pre = vec![0.0; width];
        let mut gates = vec![0.0; width];
        let mut input_out = vec![0.0; width];
        match &self.input {
            InputLayer::Gated { units } => {
                for (i, u) in units.iter().enumerate() {
                    let q = coordinate(features, i);
                    let pre = u.w_in * q + u.b_in;
                    let gate = sigmoid(u.w_gate * std_confs[i / 2]);
                    input_pre[i] = pre;
                    gates[i] = gate;
                    input_out[i] = relu(pre) * gate;
                }
            }
            InputLayer::Relu { units, with_confidences } => {
                for (i, u) in units.iter().enumerate() {
                    let q = relu_input(features, &std_confs, i, *with_confidences);
                    let pre = u.w * q + u.b;
                    input_pre[i] = pre;
                    input_out[i] = relu(pre);
                }
            }
        }

        let mut z1 = [0.0; HIDDEN];
        self.fc1.apply(&input_out, &mut z1);
        let mut a1 = [0.0; HIDDEN];
        for (a, z) in a1.iter_mut().zip(&z1) {
            *a = relu(*z);
        }
        let mut z2 = [0.0; HIDDEN];
        self.fc2.apply(&a1, &mut z2);
        let mut a2 = [0.0; HIDDEN];
        for (a, z) in a2.iter_mut().zip(&z2) {
            *a = relu(*z);
        }
        let mut z3 = [0.0; OUTPUTS];
        self.out.apply(&a2, &mut z3);

        let prediction = GazePrediction {
            g: [z3[0], z3[1]],
            sigma: softplus(z3[2]) + SIGMA_FLOOR,
        };
        ForwardTrace {
            features: features.values,
            std_confs,
            input_pre,
            gates,
            input_out,
            z1,
            a1,
            z2,
            a2,
            z3,
            prediction,
        }
    }

    /// Reverse-mode gradients of every learnable parameter.
    ///
    /// `d_gx`, `d_gy` are gradients with respect to the raw gaze outputs and
    /// `d_sigma` with respect to the post-softplus uncertainty; the softplus
    /// is differentiated here.
    pub fn backward(&self, trace: &ForwardTrace, d_gx: f64, d_gy: f64, d_sigma: f64) -> GradientVec {
        let layout = ParamLayout::of(self);
        let mut grad = vec![0.0; layout.total];

        // Output head: d/dz3.
        let dz3 = [d_gx, d_gy, d_sigma * sigmoid(trace.z3[2])];

        // Output layer params and upstream into a2.
        let mut da2 = [0.0; HIDDEN];
        for o in 0..OUTPUTS {
            for i in 0..HIDDEN {
                grad[layout.out_w + o * HIDDEN + i] = dz3[o] * trace.a2[i];
                da2[i] += dz3[o] * self.out.weights[o][i];
            }
            grad[layout.out_b + o] = dz3[o];
        }

        // fc2.
        let mut dz2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            dz2[i] = da2[i] * relu_prime(trace.z2[i]);
        }
        let mut da1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            for i in 0..HIDDEN {
                grad[layout.fc2_w + o * HIDDEN + i] = dz2[o] * trace.a1[i];
                da1[i] += dz2[o] * self.fc2.weights[o][i];
            }
            grad[layout.fc2_b + o] = dz2[o];
        }

        // fc1.
        let width = self.input.width();
        let mut dz1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            dz1[i] = da1[i] * relu_prime(trace.z1[i]);
        }
        let mut du = vec![0.0; width];
        for o in 0..HIDDEN {
            for i in 0..width {
                grad[layout.fc1_w + o * width + i] = dz1[o] * trace.input_out[i];
                du[i] += dz1[o] * self.fc1.weights[o][i];
            }
            grad[layout.fc1_b + o] = dz1[o];
        }

        // Input layer.
        match &self.input {
            InputLayer::Gated { units } => {
                for i in 0..units.len() {
                    let q = coordinate_from_raw(&trace.features, i);
                    let pre = trace.input_pre[i];
                    let gate = trace.gates[i];
                    let r = relu(pre);
                    let rp = relu_prime(pre);
                    let c = trace.std_confs[i / 2];
                    grad[layout.input + 3 * i] = du[i] * rp * q * gate;
                    grad[layout.input + 3 * i + 1] = du[i] * rp * gate;
                    grad[layout.input + 3 * i + 2] = du[i] * r * gate * (1.0 - gate) * c;
                }
            }
            InputLayer::Relu { units, with_confidences } => {
                for i in 0..units.len() {
                    let q = relu_input_from_raw(&trace.features, &trace.std_confs, i, *with_confidences);
                    let rp = relu_prime(trace.input_pre[i]);
                    grad[layout.input + 2 * i] = du[i] * rp * q;
                    grad[layout.input + 2 * i + 1] = du[i] * rp;
                }
            }
        }
        grad
    }

    /// Serializes the model as a versioned JSON document. Floating-point
    /// values round-trip exactly.
    pub fn save(&self, path: &Path, meta: &ModelMeta) -> Result<(), ModelError> {
        let file = ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            arch_tag: self.arch_tag.clone(),
            input: self.input.clone(),
            fc1: self.fc1.clone(),
            fc2: self.fc2.clone(),
            out: self.out.clone(),
            conf_mean: self.conf_mean,
            conf_std: self.conf_std,
            meta: meta.clone(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(json.as_bytes())?;
            f.write_all(b"\n")?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelMeta), ModelError> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| ModelError::CorruptModel(format!("{e}")))?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::CorruptModel(format!(
                "unsupported schema version {}",
                file.schema_version
            )));
        }
        let Some(variant) = InputVariant::from_arch_tag(&file.arch_tag) else {
            return Err(ModelError::ArchMismatch {
                expected: "one of gated10/relu10/relu15 -fc10-fc10-out3".into(),
                found: file.arch_tag,
            });
        };
        let weights = ModelWeights {
            arch_tag: file.arch_tag,
            input: file.input,
            fc1: file.fc1,
            fc2: file.fc2,
            out: file.out,
            conf_mean: file.conf_mean,
            conf_std: file.conf_std,
        };
        weights.validate(variant)?;
        Ok((weights, file.meta))
    }

    fn validate(&self, variant: InputVariant) -> Result<(), ModelError> {
        if self.input.variant() != variant {
            return Err(ModelError::CorruptModel(
                "input layer kind disagrees with arch tag".into(),
            ));
        }
        let width = variant.input_width();
        let shape_ok = self.input.width() == width
            && self.fc1.weights.len() == HIDDEN
            && self.fc1.weights.iter().all(|r| r.len() == width)
            && self.fc1.biases.len() == HIDDEN
            && self.fc2.weights.len() == HIDDEN
            && self.fc2.weights.iter().all(|r| r.len() == HIDDEN)
            && self.fc2.biases.len() == HIDDEN
            && self.out.weights.len() == OUTPUTS
            && self.out.weights.iter().all(|r| r.len() == HIDDEN)
            && self.out.biases.len() == OUTPUTS;
        if !shape_ok {
            return Err(ModelError::CorruptModel(format!(
                "parameter shape mismatch for {} ({} parameters found)",
                self.arch_tag,
                self.param_count()
            )));
        }
        if !self.conf_std.is_finite() || self.conf_std <= 0.0 {
            return Err(ModelError::CorruptModel("conf_std must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat gradient vector.
#[derive(Debug, Clone, Copy)]
pub struct ParamLayout {
    pub input: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn of(w: &ModelWeights) -> Self {
        let input = 0;
        let fc1_w = input + w.input.param_count();
        let fc1_b = fc1_w + w.fc1.weights.iter().map(Vec::len).sum::<usize>();
        let fc2_w = fc1_b + w.fc1.biases.len();
        let fc2_b = fc2_w + w.fc2.weights.iter().map(Vec::len).sum::<usize>();
        let out_w = fc2_b + w.fc2.biases.len();
        let out_b = out_w + w.out.weights.iter().map(Vec::len).sum::<usize>();
        let total = out_b + w.out.biases.len();
        Self { input, fc1_w, fc1_b, fc2_w, fc2_b, out_w, out_b, total }
    }
}

fn coordinate(features: &FeatureVector, unit: usize) -> f64 {
    coordinate_from_raw(&features.values, unit)
}

fn coordinate_from_raw(values: &[f64; FEATURE_LEN], unit: usize) -> f64 {
    // Unit 2k is the x coordinate of slot k, unit 2k+1 its y coordinate.
    values[3 * (unit / 2) + (unit % 2)]
}

fn relu_input(features: &FeatureVector, std_confs: &[f64; NUM_KEYPOINTS], unit: usize, with_conf: bool) -> f64 {
    relu_input_from_raw(&features.values, std_confs, unit, with_conf)
}

fn relu_input_from_raw(
    values: &[f64; FEATURE_LEN],
    std_confs: &[f64; NUM_KEYPOINTS],
    unit: usize,
    with_conf: bool,
) -> f64 {
    if !with_conf {
        return coordinate_from_raw(values, unit);
    }
    // With confidences the input order follows the feature vector itself:
    // (x, y, c) per slot; confidences are standardized.
    match unit % 3 {
        2 => std_confs[unit / 3],
        k => values[3 * (unit / 3) + k],
    }
}

/// Provenance stored alongside the weights in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub seed: u64,
    pub config_digest: String,
    pub train_records: usize,
    pub best_epoch: Option<usize>,
    pub val_error_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    arch_tag: String,
    input: InputLayer,
    fc1: Dense,
    fc2: Dense,
    out: Dense,
    conf_mean: f64,
    conf_std: f64,
    meta: ModelMeta,
}

/// Builds a freshly initialized model, fully determined by `seed`.
///
/// Input-layer parameters start at exactly 1.0. Fully-connected weights are
/// drawn from a zero-mean normal with variance `2 / fan_in`; biases start at
/// zero. Confidence statistics are placeholders (mean 0, std 1) until
/// training freezes the real ones.
pub fn init_weights(seed: u64, variant: InputVariant) -> ModelWeights {
    let mut rng = SeedRng::seed(seed);
    let width = variant.input_width();
    let input = match variant {
        InputVariant::Gated => InputLayer::Gated {
            units: vec![GatedUnit { w_in: 1.0, b_in: 1.0, w_gate: 1.0 }; width],
        },
        InputVariant::CoordsOnly => InputLayer::Relu {
            units: vec![ReluUnit { w: 1.0, b: 1.0 }; width],
            with_confidences: false,
        },
        InputVariant::ReluConf => InputLayer::Relu {
            units: vec![ReluUnit { w: 1.0, b: 1.0 }; width],
            with_confidences: true,
        },
    };
    let he = |rng: &mut SeedRng, rows: usize, cols: usize| -> Dense {
        let std = (2.0 / cols as f64).sqrt();
        let weights = (0..rows)
            .map(|_| (0..cols).map(|_| normal(rng) * std).collect())
            .collect();
        Dense { weights, biases: vec![0.0; rows] }
    };
    let fc1 = he(&mut rng, HIDDEN, width);
    let fc2 = he(&mut rng, HIDDEN, HIDDEN);
    let out = he(&mut rng, OUTPUTS, HIDDEN);
    ModelWeights {
        arch_tag: variant.arch_tag().to_string(),
        input,
        fc1,
        fc2,
        out,
        conf_mean: 0.0,
        conf_std: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_feature_vector, KeypointDetection, PersonDetections};

    fn any_features() -> FeatureVector {
        let p = PersonDetections::new(
            [
                KeypointDetection::new(100.0, 100.0, 0.9).unwrap(),
                KeypointDetection::new(90.0, 88.0, 0.8).unwrap(),
                KeypointDetection::new(110.0, 88.0, 0.7).unwrap(),
                KeypointDetection::new(80.0, 95.0, 0.6).unwrap(),
                KeypointDetection::absent(),
            ],
            "p0",
        );
        build_feature_vector(&p).unwrap()
    }

    #[test]
    fn census_standard_architecture() {
        let w = init_weights(0, InputVariant::Gated);
        assert_eq!(w.param_count(), 283);
        assert_eq!(w.layer_param_counts(), (30, 110, 110, 33));
        // Fully determined by seed, regardless of the seed value.
        for seed in [1u64, 42, u64::MAX] {
            assert_eq!(init_weights(seed, InputVariant::Gated).param_count(), 283);
        }
    }

    #[test]
    fn census_ablation_architectures() {
        assert_eq!(init_weights(0, InputVariant::CoordsOnly).param_count(), 273);
        assert_eq!(init_weights(0, InputVariant::ReluConf).param_count(), 333);
    }

    #[test]
    fn census_counts_synthetic_descriptor() {
        // A hypothetical 5-gated-unit variant: the counter works off the
        // actual parameter storage, not a hardcoded total.
        let mut w = init_weights(0, InputVariant::Gated);
        w.input = InputLayer::Gated {
            units: vec![GatedUnit { w_in: 1.0, b_in: 1.0, w_gate: 1.0 }; 5],
        };
        w.fc1 = Dense { weights: vec![vec![0.0; 5]; 10], biases: vec![0.0; 10] };
        assert_eq!(w.param_count(), 15 + (50 + 10) + 110 + 33);
    }

    #[test]
    fn init_is_deterministic_and_ones() {
        let a = init_weights(7, InputVariant::Gated);
        let b = init_weights(7, InputVariant::Gated);
        assert_eq!(a, b);
        let c = init_weights(8, InputVariant::Gated);
        assert_ne!(a, c);
        if let InputLayer::Gated { units } = &a.input {
            for u in units {
                assert_eq!((u.w_in, u.b_in, u.w_gate), (1.0, 1.0, 1.0));
            }
        } else {
            panic!("expected gated input layer");
        }
        assert!(a.fc1.biases.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn gated_unit_closed_forms() {
        let p = GatedUnit { w_in: 1.0, b_in: 1.0, w_gate: 1.0 };
        // relu(1.5) * sigmoid(0) = 0.75
        assert!((gated_unit_forward(0.5, 0.0, &p) - 0.75).abs() < 1e-15);
        // Gate closes as the standardized confidence goes very negative.
        assert!(gated_unit_forward(123.0, -745.0, &p).abs() < 1e-300);
        // Negative relu path kills the output regardless of the gate.
        assert_eq!(gated_unit_forward(-2.0, 5.0, &p), 0.0);
    }

    #[test]
    fn gate_is_monotone_in_confidence() {
        let p = GatedUnit { w_in: 1.0, b_in: 0.5, w_gate: 0.8 };
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let c = -5.0 + 0.1 * i as f64;
            let v = gated_unit_forward(0.7, c, &p);
            assert!(v > prev, "not strictly increasing at c={c}");
            prev = v;
        }
    }

    #[test]
    fn absent_keypoints_are_gated_below_mean_confidence() {
        // With any positive gate weight, a raw confidence of zero (absent
        // keypoint) standardizes below the dataset mean and closes the gate
        // further than an average detection does.
        let mut w = init_weights(0, InputVariant::Gated);
        w.conf_mean = 0.62;
        w.conf_std = 0.21;
        for w_gate in [0.3, 1.0, 4.0] {
            let gate_absent = sigmoid(w_gate * w.standardize_conf(0.0));
            let gate_mean = sigmoid(w_gate * w.standardize_conf(w.conf_mean));
            assert!(gate_absent < gate_mean, "w_gate {w_gate}: {gate_absent} vs {gate_mean}");
        }
        // Strongly scaled gates drive the absent-keypoint factor toward zero.
        assert!(sigmoid(8.0 * w.standardize_conf(0.0)) < 1e-10);
    }

    #[test]
    fn forward_zero_input_matches_hand_rolled() {
        let w = init_weights(3, InputVariant::Gated);
        let f = FeatureVector { values: [0.0; FEATURE_LEN], present: [false; 5] };
        let trace = w.forward(&f);

        // Hand-roll the four layers for the all-zero input.
        let InputLayer::Gated { units } = &w.input else { unreachable!() };
        let u: Vec<f64> = units
            .iter()
            .map(|g| relu(g.b_in) * sigmoid(0.0))
            .collect();
        let mut a1 = [0.0; 10];
        for o in 0..10 {
            let z: f64 = w.fc1.weights[o].iter().zip(&u).map(|(w, x)| w * x).sum::<f64>()
                + w.fc1.biases[o];
            a1[o] = relu(z);
        }
        let mut a2 = [0.0; 10];
        for o in 0..10 {
            let z: f64 = w.fc2.weights[o].iter().zip(&a1).map(|(w, x)| w * x).sum::<f64>()
                + w.fc2.biases[o];
            a2[o] = relu(z);
        }
        let mut z3 = [0.0; 3];
        for o in 0..3 {
            z3[o] = w.out.weights[o].iter().zip(&a2).map(|(w, x)| w * x).sum::<f64>()
                + w.out.biases[o];
        }
        assert!((trace.prediction.g[0] - z3[0]).abs() < 1e-15);
        assert!((trace.prediction.g[1] - z3[1]).abs() < 1e-15);
        assert!((trace.prediction.sigma - (softplus(z3[2]) + SIGMA_FLOOR)).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic() {
        let w = init_weights(11, InputVariant::Gated);
        let f = any_features();
        let a = w.forward(&f).prediction;
        let b = w.forward(&f).prediction;
        assert_eq!(a.g, b.g);
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn sigma_is_floored() {
        let mut w = init_weights(5, InputVariant::Gated);
        // Force a hugely negative raw uncertainty output.
        w.out.biases[2] = -1e6;
        w.out.weights[2].iter_mut().for_each(|v| *v = 0.0);
        let f = any_features();
        let p = w.forward(&f).prediction;
        assert!(p.sigma >= SIGMA_FLOOR);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let w = init_weights(2, InputVariant::Gated);
        let f = any_features();
        let trace = w.forward(&f);
        let g = w.backward(&trace, 0.0, 0.0, 0.0);
        assert_eq!(g.len(), w.param_count());
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_vector_matches_param_count_for_all_variants() {
        let f = any_features();
        for variant in [InputVariant::Gated, InputVariant::CoordsOnly, InputVariant::ReluConf] {
            let w = init_weights(9, variant);
            let trace = w.forward(&f);
            let g = w.backward(&trace, 0.3, -0.2, 0.1);
            assert_eq!(g.len(), w.param_count());
            assert_eq!(g.len(), w.flatten().len());
        }
    }

    #[test]
    fn closed_gate_silences_coordinate_gradients() {
        let mut w = init_weights(4, InputVariant::Gated);
        if let InputLayer::Gated { units } = &mut w.input {
            units[0].w_gate = 200.0; // gate ~ sigmoid(200 * c)
        }
        // Standardized confidence of slot 0 is strongly negative when the
        // raw confidence is far below the mean.
        w.conf_mean = 0.9;
        w.conf_std = 0.1;
        let p = PersonDetections::new(
            [
                KeypointDetection::new(10.0, 10.0, 0.05).unwrap(),
                KeypointDetection::new(0.0, 0.0, 0.9).unwrap(),
                KeypointDetection::new(20.0, 0.0, 0.9).unwrap(),
                KeypointDetection::absent(),
                KeypointDetection::absent(),
            ],
            "p",
        );
        let f = build_feature_vector(&p).unwrap();
        let trace = w.forward(&f);
        assert!(trace.gates[0] < 1e-12, "gate should be closed: {}", trace.gates[0]);
        let g = w.backward(&trace, 1.0, 1.0, 1.0);
        // Gradients of the relu path of unit 0 vanish with the gate.
        assert!(g[0].abs() < 1e-10, "w_in grad {}", g[0]);
        assert!(g[1].abs() < 1e-10, "b_in grad {}", g[1]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Central-difference check of the full backward pass through a
        // cosine-style objective on all three output heads.
        use crate::rng::{SeedRng, SeedRngExt};
        use rand::Rng;

        let objective = |w: &ModelWeights, f: &FeatureVector, target: [f64; 2]| -> f64 {
            let p = w.forward(f).prediction;
            let norm = (p.g[0] * p.g[0] + p.g[1] * p.g[1]).sqrt().max(1e-12);
            let cos = (target[0] * p.g[0] + target[1] * p.g[1]) / norm;
            (-p.sigma).exp() / 2.0 * (-cos) + p.sigma.ln() / 2.0
        };

        for (trial, variant) in [InputVariant::Gated, InputVariant::CoordsOnly, InputVariant::ReluConf]
            .into_iter()
            .enumerate()
        {
            let mut rng = SeedRng::for_stream(31, trial as u64);
            let mut w = init_weights(100 + trial as u64, variant);
            // Perturb away from the all-ones init so gates are generic.
            w.visit_params_mut(|p, _| *p += 0.3 * (rng.gen::<f64>() - 0.5));
            w.conf_mean = 0.55;
            w.conf_std = 0.25;
            let f = any_features();
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let target = [theta.cos(), theta.sin()];

            let trace = w.forward(&f);
            let p = trace.prediction;
            let norm = (p.g[0] * p.g[0] + p.g[1] * p.g[1]).sqrt();
            let unit = [p.g[0] / norm, p.g[1] / norm];
            let cos = target[0] * unit[0] + target[1] * unit[1];
            let scale = -(-p.sigma).exp() / 2.0 / norm;
            let d_g = [scale * (target[0] - cos * unit[0]), scale * (target[1] - cos * unit[1])];
            let d_sigma = (-p.sigma).exp() * cos / 2.0 + 0.5 / p.sigma;
            let analytic = w.backward(&trace, d_g[0], d_g[1], d_sigma);

            let flat = w.flatten();
            let h = 1e-6;
            for i in 0..flat.len() {
                let bump = |delta: f64| {
                    let mut wd = w.clone();
                    let mut j = 0;
                    wd.visit_params_mut(|p, _| {
                        if j == i {
                            *p += delta;
                        }
                        j += 1;
                    });
                    objective(&wd, &f, target)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let a = analytic[i];
                // 1e-9 absolute floor: the rounding noise of the difference
                // oracle itself (~eps * |loss| / h).
                if a.abs().max(fd.abs()) > 1e-8 && (a - fd).abs() >= 1e-9 {
                    let rel = (a - fd).abs() / a.abs().max(fd.abs());
                    assert!(rel < 1e-5, "{variant} param {i}: analytic {a} vs fd {fd} (rel {rel})");
                }
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut w = init_weights(21, InputVariant::Gated);
        w.conf_mean = 0.5712345678901234;
        w.conf_std = 0.2109876543210987;
        let meta = ModelMeta {
            seed: 21,
            config_digest: "abc".into(),
            train_records: 10,
            best_epoch: Some(3),
            val_error_deg: 12.25,
        };
        w.save(&path, &meta).unwrap();
        let (loaded, loaded_meta) = ModelWeights::load(&path).unwrap();
        assert_eq!(loaded, w);
        assert_eq!(loaded_meta, meta);
        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.json");
        loaded.save(&path2, &loaded_meta).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_wrong_parameter_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let w = init_weights(1, InputVariant::Gated);
        w.save(&path, &ModelMeta::default()).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        // Drop one output bias: 282 parameters.
        doc["out"]["biases"].as_array_mut().unwrap().pop();
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        match ModelWeights::load(&path) {
            Err(ModelError::CorruptModel(_)) => {}
            other => panic!("expected CorruptModel, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_foreign_arch_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let w = init_weights(1, InputVariant::Gated);
        w.save(&path, &ModelMeta::default()).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["arch_tag"] = serde_json::json!("gated5-fc4-out3");
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        match ModelWeights::load(&path) {
            Err(ModelError::ArchMismatch { .. }) => {}
            other => panic!("expected ArchMismatch, got {other:?}"),
        }
    }
}
