//! Synthetic labeled-dataset generator.
//!
//! A canonical five-point 3D head is posed by yaw/pitch/roll, orthographically
//! projected, and passed through a simple detector model that decides
//! visibility from surface orientation, perturbs coordinates, and assigns
//! confidences that increase with how directly a landmark faces the camera.
//! The projected forward axis supplies an exact gaze label, making generated
//! datasets a ground-truth oracle for the rest of the pipeline.
//!
//! Conventions (fixed by the tests below):
//! - model coordinates are camera-aligned with x rightward, y downward and
//!   z toward the camera; projection drops z;
//! - yaw +90 degrees turns the gaze toward image right, label `(1, 0)`;
//! - pitch +90 degrees looks straight up, label `(0, -1)`;
//! - roll spins in-plane and never changes the label;
//! - looking along the camera axis projects the forward vector to zero, so
//!   such poses carry no 2D label and are rejected and resampled.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetRecord, LabelAnnotation};
use crate::features::NUM_KEYPOINTS;
use crate::rng::{normal, SeedRng, SeedRngExt};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("forward axis projects below 1e-9; no 2D label")]
    DegenerateLabel,
    #[error("invalid generator config: {0}")]
    InvalidParams(String),
}

/// The five model points of the canonical head, in head radii.
///
/// Left/right symmetric about x = 0; the nose is the most forward point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadModel3D {
    /// Points in slot order [nose, right eye, left eye, right ear, left ear].
    pub points: [[f64; 3]; NUM_KEYPOINTS],
}

impl HeadModel3D {
    pub fn canonical() -> Self {
        Self {
            points: [
                [0.0, 0.15, 0.95],
                [-0.35, -0.25, 0.80],
                [0.35, -0.25, 0.80],
                [-0.95, 0.0, 0.0],
                [0.95, 0.0, 0.0],
            ],
        }
    }

    /// Outward surface direction of each landmark (radial on the head).
    pub fn normals(&self) -> [[f64; 3]; NUM_KEYPOINTS] {
        let mut out = [[0.0; 3]; NUM_KEYPOINTS];
        for (n, p) in out.iter_mut().zip(&self.points) {
            let len = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            *n = [p[0] / len, p[1] / len, p[2] / len];
        }
        out
    }
}

/// Head orientation, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl HeadPose {
    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw: yaw.to_radians(), pitch: pitch.to_radians(), roll: roll.to_radians() }
    }

    /// Rotation matrix: roll after pitch after yaw.
    fn matrix(&self) -> [[f64; 3]; 3] {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        // Yaw about y (x' = x cy + z sy), pitch about x (y' = y cp - z sp),
        // roll about z, composed right to left.
        let yaw = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let pitch = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let roll = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(&roll, &mat_mul(&pitch, &yaw))
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rotate(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// A posed head projected to the image plane, before the detector model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedHead {
    /// Noise-free keypoint positions, pixels, slot order.
    pub points: [[f64; 2]; NUM_KEYPOINTS],
    /// Camera-facing component of each landmark's outward direction.
    pub facings: [f64; NUM_KEYPOINTS],
    /// Unit 2D gaze label (projected forward axis).
    pub label: [f64; 2],
}

/// Rotates and projects the head model. Errors when the forward axis
/// projects to (near) zero, i.e. the subject looks along the camera axis.
pub fn project_head(
    model: &HeadModel3D,
    pose: &HeadPose,
    scale: f64,
    center: [f64; 2],
) -> Result<ProjectedHead, SynthError> {
    assert!(scale > 0.0, "scale must be positive");
    let m = pose.matrix();
    let forward = rotate(&m, [0.0, 0.0, 1.0]);
    let norm = (forward[0] * forward[0] + forward[1] * forward[1]).sqrt();
    if norm < 1e-9 {
        return Err(SynthError::DegenerateLabel);
    }
    let label = [forward[0] / norm, forward[1] / norm];

    let mut points = [[0.0; 2]; NUM_KEYPOINTS];
    let mut facings = [0.0; NUM_KEYPOINTS];
    let normals = model.normals();
    for i in 0..NUM_KEYPOINTS {
        let p = rotate(&m, model.points[i]);
        points[i] = [center[0] + scale * p[0], center[1] + scale * p[1]];
        facings[i] = rotate(&m, normals[i])[2];
    }
    Ok(ProjectedHead { points, facings, label })
}

/// Generator parameters. Angle ranges are degrees, distances pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_samples: usize,
    pub yaw_range_deg: [f64; 2],
    pub pitch_range_deg: [f64; 2],
    pub roll_range_deg: [f64; 2],
    /// Pixels per head radius.
    pub scale_range_px: [f64; 2],
    pub image_size_px: [f64; 2],
    /// Isotropic Gaussian noise added to visible keypoint coordinates.
    pub coord_noise_px: f64,
    /// How much localization noise grows as a landmark turns away from the
    /// camera: the per-landmark noise std is
    /// `coord_noise_px * (1 + boost * (1 - facing) / 2)`. Grazing landmarks
    /// are localized less precisely, which is exactly what their lower
    /// confidence signals.
    pub coord_noise_facing_boost: f64,
    /// A landmark is visible when its outward direction has camera-facing
    /// component above this threshold. Slightly negative by default so both
    /// ears survive near-frontal views.
    pub visibility_threshold: f64,
    /// Confidence model: clamp(base + slope * facing + noise, 0.001, 1).
    pub conf_base: f64,
    pub conf_slope: f64,
    pub conf_noise: f64,
    /// Radial distortion coefficient; zero disables it. Positive values bow
    /// keypoints outward with distance from the image center, emulating a
    /// wide-angle camera. Labels are left undistorted.
    pub distortion_coeff: f64,
    /// Vertical scale applied to keypoint offsets from the image center
    /// (anamorphic squash; 1.0 disables it). Unlike the radial term it warps
    /// every head identically, giving a domain shift a model can adapt to.
    /// Labels are left undistorted.
    pub aspect_scale_y: f64,
    pub camera: String,
    /// Consecutive frames per synthetic sequence id (for stratified splits).
    pub sequence_len: usize,
    pub seed: u64,
    /// Override for the canonical head model points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_points: Option<[[f64; 3]; NUM_KEYPOINTS]>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            yaw_range_deg: [-180.0, 180.0],
            pitch_range_deg: [-45.0, 45.0],
            roll_range_deg: [-20.0, 20.0],
            scale_range_px: [40.0, 120.0],
            image_size_px: [640.0, 480.0],
            coord_noise_px: 1.5,
            coord_noise_facing_boost: 2.5,
            visibility_threshold: -0.10,
            conf_base: 0.55,
            conf_slope: 0.40,
            conf_noise: 0.08,
            distortion_coeff: 0.0,
            aspect_scale_y: 1.0,
            camera: "cam0".to_string(),
            sequence_len: 10,
            seed: 0,
            head_points: None,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_samples == 0 {
            return Err(SynthError::InvalidParams("n_samples must be at least 1".into()));
        }
        for (name, [lo, hi]) in [
            ("yaw_range_deg", self.yaw_range_deg),
            ("pitch_range_deg", self.pitch_range_deg),
            ("roll_range_deg", self.roll_range_deg),
            ("scale_range_px", self.scale_range_px),
        ] {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(SynthError::InvalidParams(format!(
                    "{name}: min {lo} exceeds max {hi}"
                )));
            }
        }
        if self.scale_range_px[0] <= 0.0 {
            return Err(SynthError::InvalidParams("scale_range_px must be positive".into()));
        }
        if self.image_size_px[0] <= 0.0 || self.image_size_px[1] <= 0.0 {
            return Err(SynthError::InvalidParams("image_size_px must be positive".into()));
        }
        if self.coord_noise_px < 0.0 || self.conf_noise < 0.0 || self.coord_noise_facing_boost < 0.0 {
            return Err(SynthError::InvalidParams("noise levels must be non-negative".into()));
        }
        if self.sequence_len == 0 {
            return Err(SynthError::InvalidParams("sequence_len must be at least 1".into()));
        }
        if self.aspect_scale_y <= 0.0 {
            return Err(SynthError::InvalidParams("aspect_scale_y must be positive".into()));
        }
        Ok(())
    }

    pub fn head_model(&self) -> HeadModel3D {
        self.head_points.map(|points| HeadModel3D { points }).unwrap_or_else(HeadModel3D::canonical)
    }
}

/// Keypoints of one sample after the detector model.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedSample {
    /// `[x, y, c]` per slot; invisible landmarks are all-zero.
    pub keypoints: [[f64; 3]; NUM_KEYPOINTS],
    pub num_detected: usize,
}

/// Applies visibility, coordinate noise, distortion, and the confidence
/// model to a projected head. Samples with fewer than two visible landmarks
/// are rejected by the generator loop, not here.
pub fn apply_detector_model(
    projected: &ProjectedHead,
    params: &SynthParams,
    rng: &mut SeedRng,
) -> DetectedSample {
    let mut keypoints = [[0.0; 3]; NUM_KEYPOINTS];
    let mut num_detected = 0;
    let img_center = [params.image_size_px[0] / 2.0, params.image_size_px[1] / 2.0];
    let r0 = (img_center[0] * img_center[0] + img_center[1] * img_center[1]).sqrt();
    for i in 0..NUM_KEYPOINTS {
        if projected.facings[i] <= params.visibility_threshold {
            continue;
        }
        let mut p = projected.points[i];
        if params.distortion_coeff != 0.0 {
            let d = [p[0] - img_center[0], p[1] - img_center[1]];
            let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let factor = 1.0 + params.distortion_coeff * (r / r0).powi(2);
            p = [img_center[0] + d[0] * factor, img_center[1] + d[1] * factor];
        }
        if params.aspect_scale_y != 1.0 {
            p[1] = img_center[1] + (p[1] - img_center[1]) * params.aspect_scale_y;
        }
        let noise_std = params.coord_noise_px
            * (1.0 + params.coord_noise_facing_boost * (1.0 - projected.facings[i]) / 2.0);
        let x = p[0] + noise_std * normal(rng);
        let y = p[1] + noise_std * normal(rng);
        let raw_conf =
            params.conf_base + params.conf_slope * projected.facings[i] + params.conf_noise * normal(rng);
        let c = raw_conf.clamp(1e-3, 1.0);
        keypoints[i] = [x, y, c];
        num_detected += 1;
    }
    DetectedSample { keypoints, num_detected }
}

/// Generation summary written next to every synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub params: SynthParams,
    pub n_samples: usize,
    /// Poses rejected because the forward axis projected to zero.
    pub rejected_degenerate_label: u64,
    /// Samples rejected for having fewer than two visible keypoints.
    pub rejected_too_few_keypoints: u64,
    /// Label-angle counts by quadrant of `atan2(-g_y, g_x)`, in order
    /// `[0,90)`, `[90,180]`, `[-90,0)`, `[-180,-90)` degrees.
    pub quadrant_histogram: [usize; 4],
    /// Sample counts by number of detected keypoints.
    pub per_k: BTreeMap<usize, usize>,
}

fn quadrant_of(label: [f64; 2]) -> usize {
    let a = (-label[1]).atan2(label[0]).to_degrees();
    if a >= 90.0 {
        1
    } else if a >= 0.0 {
        0
    } else if a >= -90.0 {
        2
    } else {
        3
    }
}

/// Generates `params.n_samples` labeled records. Each sample draws from its
/// own seeded stream `(seed, index)`, so output is deterministic and
/// independent of batching. Rejected poses are resampled within the stream.
pub fn generate_dataset(params: &SynthParams) -> Result<(Vec<DatasetRecord>, GenManifest), SynthError> {
    params.validate()?;
    let model = params.head_model();
    let mut records = Vec::with_capacity(params.n_samples);
    let mut rejected_label = 0u64;
    let mut rejected_k = 0u64;
    let mut quadrants = [0usize; 4];
    let mut per_k: BTreeMap<usize, usize> = BTreeMap::new();

    let uniform = |rng: &mut SeedRng, [lo, hi]: [f64; 2]| -> f64 {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };

    for i in 0..params.n_samples {
        let mut rng = SeedRng::for_stream(params.seed, i as u64);
        let (detected, label) = loop {
            let pose = HeadPose::from_degrees(
                uniform(&mut rng, params.yaw_range_deg),
                uniform(&mut rng, params.pitch_range_deg),
                uniform(&mut rng, params.roll_range_deg),
            );
            let scale = uniform(&mut rng, params.scale_range_px);
            let center = [
                uniform(&mut rng, [0.15 * params.image_size_px[0], 0.85 * params.image_size_px[0]]),
                uniform(&mut rng, [0.15 * params.image_size_px[1], 0.85 * params.image_size_px[1]]),
            ];
            let projected = match project_head(&model, &pose, scale, center) {
                Ok(p) => p,
                Err(SynthError::DegenerateLabel) => {
                    rejected_label += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let detected = apply_detector_model(&projected, params, &mut rng);
            if detected.num_detected < 2 {
                rejected_k += 1;
                continue;
            }
            break (detected, projected.label);
        };

        quadrants[quadrant_of(label)] += 1;
        *per_k.entry(detected.num_detected).or_insert(0) += 1;
        records.push(DatasetRecord {
            frame: format!("f{i:06}"),
            camera: params.camera.clone(),
            person: "p0".to_string(),
            sequence: Some(format!("s{:05}", i / params.sequence_len)),
            keypoints: detected.keypoints,
            label: Some(LabelAnnotation::Gaze { vectors: vec![label] }),
        });
    }

    let manifest = GenManifest {
        params: params.clone(),
        n_samples: params.n_samples,
        rejected_degenerate_label: rejected_label,
        rejected_too_few_keypoints: rejected_k,
        quadrant_histogram: quadrants,
        per_k,
    };
    Ok((records, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_labeled;
    use crate::features::{build_feature_vector, slot, KeypointDetection, PersonDetections};

    fn noise_free() -> SynthParams {
        SynthParams {
            coord_noise_px: 0.0,
            conf_noise: 0.0,
            ..SynthParams::default()
        }
    }

    fn label_of(yaw: f64, pitch: f64, roll: f64) -> [f64; 2] {
        project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(yaw, pitch, roll),
            100.0,
            [320.0, 240.0],
        )
        .unwrap()
        .label
    }

    #[test]
    fn label_conventions() {
        // Pure side view: looking toward image right.
        let l = label_of(90.0, 0.0, 0.0);
        assert!((l[0] - 1.0).abs() < 1e-12 && l[1].abs() < 1e-12, "{l:?}");
        // Looking straight up maps to negative image y.
        let l = label_of(0.0, 90.0, 0.0);
        assert!(l[0].abs() < 1e-12 && (l[1] + 1.0).abs() < 1e-12, "{l:?}");
        // Looking down-left.
        let l = label_of(-90.0, -30.0, 0.0);
        assert!(l[0] < 0.0 && l[1] > 0.0, "{l:?}");
    }

    #[test]
    fn identity_pose_has_no_label() {
        let r = project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(0.0, 0.0, 0.0),
            100.0,
            [320.0, 240.0],
        );
        assert_eq!(r.unwrap_err(), SynthError::DegenerateLabel);
        // Roll alone cannot resolve it: the forward axis is the roll axis.
        let r = project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(0.0, 0.0, 15.0),
            100.0,
            [320.0, 240.0],
        );
        assert_eq!(r.unwrap_err(), SynthError::DegenerateLabel);
    }

    #[test]
    fn frontal_anatomy_in_image() {
        // Small downward pitch so the label exists; the face should be
        // upright in the image: eyes above nose, ears at mid height.
        let p = project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(0.0, -5.0, 0.0),
            100.0,
            [320.0, 240.0],
        )
        .unwrap();
        assert!(p.points[slot::RIGHT_EYE][1] < p.points[slot::NOSE][1], "eyes above nose");
        assert!(p.points[slot::RIGHT_EYE][0] < p.points[slot::LEFT_EYE][0], "subject right on image left");
        assert!(p.label[1] > 0.9, "looking down: {:?}", p.label);
    }

    #[test]
    fn back_view_hides_nose_and_eyes() {
        // Slight pitch so the back view has a well-defined label (yaw 180
        // with pitch 0 looks exactly away from the camera and is rejected).
        let params = noise_free();
        let p = project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(180.0, -10.0, 0.0),
            100.0,
            [320.0, 240.0],
        )
        .unwrap();
        let mut rng = SeedRng::seed(0);
        let d = apply_detector_model(&p, &params, &mut rng);
        assert_eq!(d.keypoints[slot::NOSE], [0.0; 3]);
        assert_eq!(d.keypoints[slot::RIGHT_EYE], [0.0; 3]);
        assert_eq!(d.keypoints[slot::LEFT_EYE], [0.0; 3]);
        assert!(d.keypoints[slot::RIGHT_EAR][2] > 0.0);
        assert!(d.keypoints[slot::LEFT_EAR][2] > 0.0);
        assert_eq!(d.num_detected, 2);
    }

    #[test]
    fn near_frontal_shows_all_five() {
        let params = noise_free();
        let p = project_head(
            &HeadModel3D::canonical(),
            &HeadPose::from_degrees(2.0, -8.0, 0.0),
            100.0,
            [320.0, 240.0],
        )
        .unwrap();
        let mut rng = SeedRng::seed(0);
        let d = apply_detector_model(&p, &params, &mut rng);
        assert_eq!(d.num_detected, 5);
    }

    #[test]
    fn features_depend_only_on_pose_without_noise() {
        let model = HeadModel3D::canonical();
        let pose = HeadPose::from_degrees(40.0, -12.0, 7.0);
        let params = noise_free();
        let mut features = Vec::new();
        for (scale, center) in [(50.0, [100.0, 100.0]), (170.0, [500.0, 333.0])] {
            let projected = project_head(&model, &pose, scale, center).unwrap();
            let mut rng = SeedRng::seed(9);
            let d = apply_detector_model(&projected, &params, &mut rng);
            let mut kps = [KeypointDetection::absent(); NUM_KEYPOINTS];
            for (i, [x, y, c]) in d.keypoints.iter().enumerate() {
                kps[i] = KeypointDetection::new(*x, *y, *c).unwrap();
            }
            features.push(build_feature_vector(&PersonDetections::new(kps, "p")).unwrap());
        }
        for i in 0..crate::features::FEATURE_LEN {
            assert!(
                (features[0].values[i] - features[1].values[i]).abs() < 1e-9,
                "feature {i} differs across scale/center"
            );
        }
    }

    #[test]
    fn mirrored_pose_mirrors_projection() {
        let model = HeadModel3D::canonical();
        let params = noise_free();
        let mut rng_seed = 0;
        for (yaw, pitch, roll) in [(35.0, -10.0, 12.0), (120.0, 20.0, -5.0), (-70.0, 5.0, 0.0)] {
            rng_seed += 1;
            let center = [320.0, 240.0];
            let a = project_head(&model, &HeadPose::from_degrees(yaw, pitch, roll), 100.0, center).unwrap();
            let b = project_head(&model, &HeadPose::from_degrees(-yaw, pitch, -roll), 100.0, center).unwrap();
            // Label mirrors in x.
            assert!((a.label[0] + b.label[0]).abs() < 1e-12, "seed {rng_seed}");
            assert!((a.label[1] - b.label[1]).abs() < 1e-12);
            // Keypoints mirror with anatomical sides swapped.
            let pairs = [
                (slot::NOSE, slot::NOSE),
                (slot::RIGHT_EYE, slot::LEFT_EYE),
                (slot::RIGHT_EAR, slot::LEFT_EAR),
            ];
            for (r, l) in pairs {
                assert!(((a.points[r][0] - center[0]) + (b.points[l][0] - center[0])).abs() < 1e-9);
                assert!((a.points[r][1] - b.points[l][1]).abs() < 1e-9);
                assert!((a.facings[r] - b.facings[l]).abs() < 1e-12);
            }
            let _ = params;
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let params = SynthParams { n_samples: 64, seed: 5, ..SynthParams::default() };
        let (a, ma) = generate_dataset(&params).unwrap();
        let (b, mb) = generate_dataset(&params).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = generate_dataset(&SynthParams { seed: 6, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_quadrants_sum_to_n() {
        let params = SynthParams { n_samples: 500, seed: 2, ..SynthParams::default() };
        let (records, manifest) = generate_dataset(&params).unwrap();
        assert_eq!(records.len(), 500);
        assert_eq!(manifest.quadrant_histogram.iter().sum::<usize>(), 500);
        assert_eq!(manifest.per_k.values().sum::<usize>(), 500);
        // Every record admits feature extraction (k >= 2 enforced).
        let (samples, skipped) = load_labeled(&records);
        assert_eq!(samples.len(), 500);
        assert!(skipped.is_empty());
    }

    #[test]
    fn label_angles_mirror_symmetric_under_full_yaw() {
        let params = SynthParams { n_samples: 4000, seed: 3, ..SynthParams::default() };
        let (records, _) = generate_dataset(&params).unwrap();
        let (samples, _) = load_labeled(&records);
        let right = samples.iter().filter(|s| s.label.g[0] > 0.0).count();
        let n = samples.len() as f64;
        // Under x-mirror symmetry, right-pointing labels are Binomial(n, 1/2).
        let sigma = (n * 0.25).sqrt();
        assert!(
            (right as f64 - n / 2.0).abs() <= 3.0 * sigma,
            "asymmetric labels: {right} of {n}"
        );
    }

    #[test]
    fn back_views_never_show_nose() {
        let params = SynthParams {
            n_samples: 300,
            yaw_range_deg: [160.0, 180.0],
            seed: 4,
            ..SynthParams::default()
        };
        let (records, _) = generate_dataset(&params).unwrap();
        for r in &records {
            assert_eq!(r.keypoints[slot::NOSE][2], 0.0, "nose visible in back view");
        }
    }

    #[test]
    fn default_params_keypoint_census_is_frozen() {
        // Self-audit of the generator at default parameters; the k = 5
        // (fully visible) count is pinned so distribution drift is caught.
        let params = SynthParams { n_samples: 10_000, ..SynthParams::default() };
        let (_, manifest) = generate_dataset(&params).unwrap();
        assert_eq!(manifest.per_k.get(&5), Some(&481), "per_k: {:?}", manifest.per_k);
        assert_eq!(manifest.per_k.values().sum::<usize>(), 10_000);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let params = SynthParams { yaw_range_deg: [10.0, -10.0], ..SynthParams::default() };
        assert!(matches!(generate_dataset(&params), Err(SynthError::InvalidParams(_))));
    }

    #[test]
    fn occlusion_heavy_config_has_mostly_partial_views() {
        let params = SynthParams {
            n_samples: 1000,
            yaw_range_deg: [60.0, 180.0],
            seed: 11,
            ..SynthParams::default()
        };
        let (_, manifest) = generate_dataset(&params).unwrap();
        let low_k: usize =
            manifest.per_k.iter().filter(|(k, _)| **k <= 3).map(|(_, c)| c).sum();
        assert!(
            low_k as f64 >= 0.4 * manifest.n_samples as f64,
            "only {low_k} of {} samples have k <= 3",
            manifest.n_samples
        );
    }
}
