//! Non-learned geometric gaze baseline.
//!
//! The estimate is built from linear geometry on the raw keypoints. It needs
//! the nose and at least one eye.
//!
//! 1. The eye axis `e` is the unit direction between the two eyes (a
//!    horizontal axis through the single detected eye when only one is
//!    present).
//! 2. The symmetry axis `s` is the unit normal of the eye axis.
//! 3. The facial direction `n` points toward the side where the nose lies:
//!    along the eye axis (`n = sign(<nose - eye_centroid, e>) * e`) in a
//!    lateral configuration, along the symmetry axis
//!    (`n = sign(<nose - eye_centroid, s>) * s`) in a frontal one.
//! 4. The pitch `omega` is the in-face angle from the facial direction to
//!    the ear-centroid-to-eye-centroid ray `v` (ears sit behind, eyes in
//!    front, so `v` tracks where the face points). A configuration counts as
//!    lateral when `v` leans off the symmetry axis (its eye-axis component
//!    is at least a quarter of its norm); rotating `n` by the measured angle
//!    then reproduces the ray direction itself. In frontal configurations
//!    (including symmetric ears, `v` near the symmetry axis, or no detected
//!    ear) the ray carries no usable pitch and `omega = 0`.
//! 5. The gaze is `n` rotated by `omega`; positive `omega` rotates clockwise
//!    on screen (image y points down).
//!
//! Measuring `omega` inside the face frame (rather than against the image
//! horizontal) keeps the construction equivariant under in-plane rotation;
//! for an upright face the two references coincide. Tying the signs to the
//! nose side makes mirrored inputs produce mirrored estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{slot, PersonDetections};

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("nose not detected")]
    MissingNose,
    #[error("no eye detected")]
    MissingEyes,
}

/// Geometric estimate with its intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomEstimate {
    pub gaze: [f64; 2],
    pub symmetry_axis: [f64; 2],
    pub facial_normal: [f64; 2],
    /// Pitch in radians; positive rotates clockwise on screen.
    pub pitch: f64,
}

/// Fraction of the ear-to-eye vector norm that its eye-axis component must
/// exceed for the configuration to count as lateral.
const LATERAL_RATIO: f64 = 0.25;

pub fn estimate_gaze_geom(person: &PersonDetections) -> Result<GeomEstimate, GeomError> {
    let kp = &person.keypoints;
    if !kp[slot::NOSE].is_detected() {
        return Err(GeomError::MissingNose);
    }
    let right_eye =
        kp[slot::RIGHT_EYE].is_detected().then(|| [kp[slot::RIGHT_EYE].x, kp[slot::RIGHT_EYE].y]);
    let left_eye =
        kp[slot::LEFT_EYE].is_detected().then(|| [kp[slot::LEFT_EYE].x, kp[slot::LEFT_EYE].y]);
    let nose = [kp[slot::NOSE].x, kp[slot::NOSE].y];

    let (eye_axis, eye_centroid) = match (right_eye, left_eye) {
        (Some(r), Some(l)) => {
            let d = [l[0] - r[0], l[1] - r[1]];
            let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let axis = if norm > 1e-12 { [d[0] / norm, d[1] / norm] } else { [1.0, 0.0] };
            (axis, [(r[0] + l[0]) / 2.0, (r[1] + l[1]) / 2.0])
        }
        (Some(e), None) | (None, Some(e)) => ([1.0, 0.0], e),
        (None, None) => return Err(GeomError::MissingEyes),
    };

    let symmetry_axis = [-eye_axis[1], eye_axis[0]];
    let to_nose = [nose[0] - eye_centroid[0], nose[1] - eye_centroid[1]];
    let nose_sign = |axis: [f64; 2]| -> f64 {
        if to_nose[0] * axis[0] + to_nose[1] * axis[1] < 0.0 {
            -1.0
        } else {
            1.0
        }
    };

    let ears: Vec<[f64; 2]> = [slot::RIGHT_EAR, slot::LEFT_EAR]
        .iter()
        .filter(|&&s| kp[s].is_detected())
        .map(|&s| [kp[s].x, kp[s].y])
        .collect();
    let ear_ray = ears.first().map(|_| {
        let n = ears.len() as f64;
        let ear_centroid = [
            ears.iter().map(|e| e[0]).sum::<f64>() / n,
            ears.iter().map(|e| e[1]).sum::<f64>() / n,
        ];
        [eye_centroid[0] - ear_centroid[0], eye_centroid[1] - ear_centroid[1]]
    });

    // Lateral when the ear->eye ray leans off the symmetry axis.
    let lateral = ear_ray.and_then(|v| {
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let a = v[0] * eye_axis[0] + v[1] * eye_axis[1];
        let b = v[0] * symmetry_axis[0] + v[1] * symmetry_axis[1];
        (norm > 1e-12 && a.abs() >= LATERAL_RATIO * norm).then_some((a, b))
    });

    let (facial_normal, pitch) = match lateral {
        Some((a, b)) => {
            let sign = nose_sign(eye_axis);
            let normal = [sign * eye_axis[0], sign * eye_axis[1]];
            (normal, (sign * b).atan2(sign * a))
        }
        None => {
            let sign = nose_sign(symmetry_axis);
            ([sign * symmetry_axis[0], sign * symmetry_axis[1]], 0.0)
        }
    };

    let (sin, cos) = pitch.sin_cos();
    let gaze = [
        facial_normal[0] * cos - facial_normal[1] * sin,
        facial_normal[0] * sin + facial_normal[1] * cos,
    ];
    Ok(GeomEstimate { gaze, symmetry_axis, facial_normal, pitch })
}
