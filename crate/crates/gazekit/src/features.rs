//! Keypoint detections and their normalized feature representation.
//!
//! A person is described by five facial keypoints in a fixed slot order:
//! nose, right eye, left eye, right ear, left ear. Each keypoint carries
//! image coordinates (x rightward, y downward, in pixels) and a detector
//! confidence in `[0, 1]`. An absent detection is encoded as `(0, 0, 0)`.
//!
//! Detections are converted into a 15-value feature vector: coordinates are
//! centered on the head centroid (mean of the detected keypoints) and scaled
//! by the distance from the centroid to the farthest detected keypoint, so
//! the representation is invariant to translation and scale. Confidences are
//! passed through raw; standardization happens inside the network using
//! statistics frozen at training time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of facial keypoint slots per person.
pub const NUM_KEYPOINTS: usize = 5;

/// Length of the feature vector: (x, y, confidence) per keypoint slot.
pub const FEATURE_LEN: usize = 3 * NUM_KEYPOINTS;

/// Minimum number of detected keypoints for a sample to be estimable.
pub const MIN_DETECTED: usize = 2;

/// Keypoint slot indices, in the fixed concatenation order.
pub mod slot {
    pub const NOSE: usize = 0;
    pub const RIGHT_EYE: usize = 1;
    pub const LEFT_EYE: usize = 2;
    pub const RIGHT_EAR: usize = 3;
    pub const LEFT_EAR: usize = 4;
}

/// Human-readable names for the five slots, in slot order.
pub const SLOT_NAMES: [&str; NUM_KEYPOINTS] =
    ["nose", "right_eye", "left_eye", "right_ear", "left_ear"];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("fewer than {MIN_DETECTED} keypoints detected ({detected})")]
    TooFewKeypoints { detected: usize },
    #[error("all detected keypoints coincide (zero head size)")]
    DegenerateGeometry,
    #[error("eye and fixation point coincide")]
    ZeroLengthGaze,
    #[error("annotation vectors cancel out (mean norm below 1e-9)")]
    DegenerateMean,
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

/// One facial keypoint: image coordinates plus detector confidence.
///
/// Convention inherited from the pose estimator: `c == 0` means the keypoint
/// was not detected, and its coordinates are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointDetection {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl KeypointDetection {
    pub fn absent() -> Self {
        Self { x: 0.0, y: 0.0, c: 0.0 }
    }

    pub fn new(x: f64, y: f64, c: f64) -> Result<Self, FeatureError> {
        if !(0.0..=1.0).contains(&c) || !c.is_finite() {
            return Err(FeatureError::InvalidConfidence(c));
        }
        if c == 0.0 {
            Ok(Self::absent())
        } else {
            Ok(Self { x, y, c })
        }
    }

    pub fn is_detected(&self) -> bool {
        self.c > 0.0
    }
}

/// The five keypoint slots of one detected person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonDetections {
    pub keypoints: [KeypointDetection; NUM_KEYPOINTS],
    pub person_id: String,
}

impl PersonDetections {
    pub fn new(keypoints: [KeypointDetection; NUM_KEYPOINTS], person_id: impl Into<String>) -> Self {
        Self { keypoints, person_id: person_id.into() }
    }

    /// Number of detected keypoints (slots with `c > 0`).
    pub fn num_detected(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_detected()).count()
    }
}

/// Head centroid and size of one person, computed over detected keypoints only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadGeometry {
    /// Mean position of the detected keypoints, in pixels.
    pub centroid: [f64; 2],
    /// Distance from the centroid to the farthest detected keypoint, in pixels.
    pub delta: f64,
}

/// Computes centroid and scale over the detected keypoints of one person.
pub fn head_geometry(person: &PersonDetections) -> Result<HeadGeometry, FeatureError> {
    let detected: Vec<&KeypointDetection> =
        person.keypoints.iter().filter(|k| k.is_detected()).collect();
    if detected.len() < MIN_DETECTED {
        return Err(FeatureError::TooFewKeypoints { detected: detected.len() });
    }
    let n = detected.len() as f64;
    let cx = detected.iter().map(|k| k.x).sum::<f64>() / n;
    let cy = detected.iter().map(|k| k.y).sum::<f64>() / n;
    let delta = detected
        .iter()
        .map(|k| ((k.x - cx).powi(2) + (k.y - cy).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if delta == 0.0 {
        return Err(FeatureError::DegenerateGeometry);
    }
    Ok(HeadGeometry { centroid: [cx, cy], delta })
}

/// The normalized 15-value input representation of one person.
///
/// Layout: for each slot in order, `(x_hat, y_hat, c)` where the coordinates
/// are centered on the head centroid and divided by the head scale, and `c`
/// is the raw detector confidence. Absent slots contribute `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_LEN],
    pub present: [bool; NUM_KEYPOINTS],
}

impl FeatureVector {
    pub fn coord(&self, slot: usize) -> [f64; 2] {
        [self.values[3 * slot], self.values[3 * slot + 1]]
    }

    pub fn confidence(&self, slot: usize) -> f64 {
        self.values[3 * slot + 2]
    }

    /// Number of detected keypoints backing this vector (the sample's `k`).
    pub fn num_detected(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }
}

/// A unit 2D gaze direction in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeLabel {
    pub g: [f64; 2],
    pub source: LabelSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Direction,
    EyePlusFixation,
    Synthetic,
}

impl GazeLabel {
    /// Normalizes `v` into a unit label. Errors if the norm is below 1e-9.
    pub fn from_vector(v: [f64; 2], source: LabelSource) -> Result<Self, FeatureError> {
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if norm < 1e-9 {
            return Err(FeatureError::DegenerateMean);
        }
        Ok(Self { g: [v[0] / norm, v[1] / norm], source })
    }

    /// Label angle in degrees, measured as `atan2(-g_y, g_x)` so that the
    /// upper image half-plane maps to positive angles.
    pub fn angle_deg(&self) -> f64 {
        (-self.g[1]).atan2(self.g[0]).to_degrees()
    }
}

/// Builds the normalized feature vector of one person.
///
/// The centroid and scale are computed over detected keypoints only; absent
/// slots stay `(0, 0, 0)`. Errors if fewer than two keypoints are detected or
/// if every detected keypoint coincides.
pub fn build_feature_vector(person: &PersonDetections) -> Result<FeatureVector, FeatureError> {
    let geom = head_geometry(person)?;
    let mut values = [0.0; FEATURE_LEN];
    let mut present = [false; NUM_KEYPOINTS];
    for (i, kp) in person.keypoints.iter().enumerate() {
        if kp.is_detected() {
            values[3 * i] = (kp.x - geom.centroid[0]) / geom.delta;
            values[3 * i + 1] = (kp.y - geom.centroid[1]) / geom.delta;
            values[3 * i + 2] = kp.c;
            present[i] = true;
        }
    }
    Ok(FeatureVector { values, present })
}

/// Reflects a sample about the vertical axis.
///
/// All x coordinates are negated, the anatomical sides of eyes and ears are
/// exchanged, and the label's x component is negated. Applying it twice
/// returns the original sample.
pub fn mirror_sample(features: &FeatureVector, label: &GazeLabel) -> (FeatureVector, GazeLabel) {
    let mut out = features.clone();
    let swap = [(slot::RIGHT_EYE, slot::LEFT_EYE), (slot::RIGHT_EAR, slot::LEFT_EAR)];
    for (a, b) in swap {
        for j in 0..3 {
            out.values.swap(3 * a + j, 3 * b + j);
        }
        out.present.swap(a, b);
    }
    for i in 0..NUM_KEYPOINTS {
        out.values[3 * i] = -out.values[3 * i];
    }
    let mirrored_label = GazeLabel { g: [-label.g[0], label.g[1]], source: label.source };
    (out, mirrored_label)
}

/// Converts an (eye, fixation) annotation pair into a unit gaze label.
pub fn derive_gaze_from_annotation(eye: [f64; 2], fixation: [f64; 2]) -> Result<GazeLabel, FeatureError> {
    let d = [fixation[0] - eye[0], fixation[1] - eye[1]];
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if norm < 1e-12 {
        return Err(FeatureError::ZeroLengthGaze);
    }
    Ok(GazeLabel { g: [d[0] / norm, d[1] / norm], source: LabelSource::EyePlusFixation })
}

/// Mean of several unit annotation vectors, renormalized to unit length.
///
/// Errors when the vectors cancel out (mean norm below 1e-9).
pub fn average_annotation(vectors: &[[f64; 2]]) -> Result<GazeLabel, FeatureError> {
    assert!(!vectors.is_empty(), "average_annotation requires at least one vector");
    let n = vectors.len() as f64;
    let mean = [
        vectors.iter().map(|v| v[0]).sum::<f64>() / n,
        vectors.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    GazeLabel::from_vector(mean, LabelSource::Direction)
}

/// Radius multiplier for accepting a subject match around the head centroid.
pub const MATCH_RADIUS_FACTOR: f64 = 1.5;

/// Finds the person whose head centroid is nearest to an annotated eye point.
///
/// Candidates with fewer than two detected keypoints (or degenerate geometry)
/// are skipped. The nearest candidate is returned only when the annotated
/// point falls within `1.5 * delta` of its centroid; `None` marks the sample
/// as non-estimable.
pub fn match_subject(people: &[PersonDetections], annotated_eye: [f64; 2]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, person) in people.iter().enumerate() {
        let Ok(geom) = head_geometry(person) else { continue };
        let d = ((annotated_eye[0] - geom.centroid[0]).powi(2)
            + (annotated_eye[1] - geom.centroid[1]).powi(2))
        .sqrt();
        if best.is_none_or(|(_, bd, _)| d < bd) {
            best = Some((i, d, geom.delta));
        }
    }
    let (idx, dist, delta) = best?;
    (dist <= MATCH_RADIUS_FACTOR * delta).then_some(idx)
}
