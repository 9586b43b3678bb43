//! File formats and dataset handling.
//!
//! Datasets are newline-delimited JSON, one record per person per frame.
//! Each record carries the frame/camera/person keys, an optional sequence id
//! (used for stratified splitting), the five keypoint triples in slot order
//! `[nose, right_eye, left_eye, right_ear, left_ear]`, and optionally a label:
//! either one or more unit gaze vectors or an (eye, fixation) point pair.
//! Coordinates are pixels (x rightward, y downward); confidences must lie in
//! `[0, 1]` and a zero confidence marks an absent keypoint (its coordinates
//! are canonicalized to zero on ingest).
//!
//! Prediction files use the same envelope keys plus the estimated direction,
//! the uncertainty (absent for the geometric baseline), the detected keypoint
//! count `k`, and a skip reason when no estimate was possible.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    average_annotation, build_feature_vector, derive_gaze_from_annotation, FeatureError,
    FeatureVector, GazeLabel, KeypointDetection, LabelSource, PersonDetections, NUM_KEYPOINTS,
};
use crate::rng::{SeedRng, SeedRngExt};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: confidence {value} outside [0, 1]")]
    InvalidConfidence { line: usize, value: f64 },
    #[error("line {line}: expected {NUM_KEYPOINTS} keypoint triples, found {found}")]
    WrongKeypointCount { line: usize, found: usize },
}

/// Label annotation attached to a dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelAnnotation {
    /// One or more unit gaze direction vectors. Multiple vectors come from
    /// multiple annotators and are averaged at evaluation time.
    Gaze { vectors: Vec<[f64; 2]> },
    /// An annotated eye position and fixation point; the label is the unit
    /// vector from eye to fixation.
    EyeFixation { eye: [f64; 2], fixation: [f64; 2] },
}

/// One dataset record: one person in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub frame: String,
    pub camera: String,
    pub person: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    /// Five `[x, y, c]` triples in slot order.
    pub keypoints: [[f64; 3]; NUM_KEYPOINTS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelAnnotation>,
}

impl DatasetRecord {
    /// Join key shared by dataset and prediction files.
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.camera, self.frame, self.person)
    }

    pub fn detections(&self) -> Result<PersonDetections, FeatureError> {
        let mut kps = [KeypointDetection::absent(); NUM_KEYPOINTS];
        for (i, [x, y, c]) in self.keypoints.iter().enumerate() {
            kps[i] = KeypointDetection::new(*x, *y, *c)?;
        }
        Ok(PersonDetections::new(kps, self.person.clone()))
    }

    /// Resolves the record's annotation into a unit gaze label, averaging
    /// multiple annotation vectors when present.
    pub fn resolve_label(&self) -> Result<Option<GazeLabel>, FeatureError> {
        match &self.label {
            None => Ok(None),
            Some(LabelAnnotation::Gaze { vectors }) if vectors.is_empty() => Ok(None),
            Some(LabelAnnotation::Gaze { vectors }) if vectors.len() == 1 => {
                Ok(Some(GazeLabel::from_vector(vectors[0], LabelSource::Direction)?))
            }
            Some(LabelAnnotation::Gaze { vectors }) => Ok(Some(average_annotation(vectors)?)),
            Some(LabelAnnotation::EyeFixation { eye, fixation }) => {
                Ok(Some(derive_gaze_from_annotation(*eye, *fixation)?))
            }
        }
    }
}

/// Provenance of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub frame: String,
    pub camera: String,
    pub person: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
}

impl SampleMeta {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.camera, self.frame, self.person)
    }
}

/// An admitted training/evaluation sample: features plus unit gaze label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub meta: SampleMeta,
    pub features: FeatureVector,
    pub label: GazeLabel,
}

/// Why a record produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewKeypoints,
    DegenerateGeometry,
    InvalidConfidence,
    MissingLabel,
    DegenerateAnnotation,
    MissingNose,
    MissingEyes,
    DegeneratePrediction,
}

impl SkipReason {
    pub fn from_feature_error(e: &FeatureError) -> Self {
        match e {
            FeatureError::TooFewKeypoints { .. } => SkipReason::TooFewKeypoints,
            FeatureError::DegenerateGeometry => SkipReason::DegenerateGeometry,
            FeatureError::InvalidConfidence(_) => SkipReason::InvalidConfidence,
            FeatureError::ZeroLengthGaze | FeatureError::DegenerateMean => {
                SkipReason::DegenerateAnnotation
            }
        }
    }
}

/// A record that failed admission, with the reason kept for coverage reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub key: String,
    pub reason: SkipReason,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame: String,
    pub camera: String,
    pub person: String,
    /// Number of detected keypoints for the sample.
    pub k: usize,
    /// Unit gaze direction, absent when skipped or degenerate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<[f64; 2]>,
    /// Raw (unnormalized) regression output of the network path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_raw: Option<[f64; 2]>,
    /// Predicted uncertainty; absent for the geometric baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<SkipReason>,
}

impl PredictionRecord {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.camera, self.frame, self.person)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
        for [_, _, c] in &record.keypoints {
            if !(0.0..=1.0).contains(c) || !c.is_finite() {
                return Err(DatasetError::InvalidConfidence { line: i + 1, value: *c });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| DatasetError::Parse { line: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DatasetError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| DatasetError::Parse { line: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Converts records into admitted labeled samples, keeping a skip entry
/// (with reason) for every record that cannot be used.
pub fn load_labeled(records: &[DatasetRecord]) -> (Vec<LabeledSample>, Vec<SkippedRecord>) {
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in records {
        let key = r.key();
        let label = match r.resolve_label() {
            Ok(Some(l)) => l,
            Ok(None) => {
                skipped.push(SkippedRecord { key, reason: SkipReason::MissingLabel });
                continue;
            }
            Err(e) => {
                skipped.push(SkippedRecord { key, reason: SkipReason::from_feature_error(&e) });
                continue;
            }
        };
        let features = match r.detections().and_then(|d| build_feature_vector(&d)) {
            Ok(f) => f,
            Err(e) => {
                skipped.push(SkippedRecord { key, reason: SkipReason::from_feature_error(&e) });
                continue;
            }
        };
        samples.push(LabeledSample {
            meta: SampleMeta {
                frame: r.frame.clone(),
                camera: r.camera.clone(),
                person: r.person.clone(),
                sequence: r.sequence.clone(),
            },
            features,
            label,
        });
    }
    (samples, skipped)
}

/// Stratified train/val/test split.
///
/// Records sharing a sequence id always land in the same subset; records
/// without one split by their own key. Group order is shuffled with the seed,
/// then each group goes to the subset with the largest remaining deficit
/// relative to the target proportions.
pub fn split_records(
    records: &[DatasetRecord],
    proportions: [f64; 3],
    seed: u64,
) -> (Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>) {
    use rand::seq::SliceRandom;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = r.sequence.clone().unwrap_or_else(|| r.key());
        groups.entry(key).or_default().push(i);
    }
    let mut keys: Vec<&String> = groups.keys().collect();
    let mut rng = SeedRng::for_stream(seed, 0x5147);
    keys.shuffle(&mut rng);

    let total = records.len() as f64;
    let targets = [proportions[0] * total, proportions[1] * total, proportions[2] * total];
    let mut assigned = [0usize; 3];
    let mut bucket_of = vec![0usize; records.len()];
    for key in keys {
        let members = &groups[key];
        let deficit = |b: usize| targets[b] - assigned[b] as f64;
        let best = (0..3).max_by(|&a, &b| deficit(a).partial_cmp(&deficit(b)).unwrap()).unwrap();
        for &i in members {
            bucket_of[i] = best;
        }
        assigned[best] += members.len();
    }

    let mut out: [Vec<DatasetRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        out[bucket_of[i]].push(r.clone());
    }
    let [train, val, test] = out;
    (train, val, test)
}

/// Mappings from common whole-body pose model keypoint indices to the five
/// head slots, in slot order `[nose, right_eye, left_eye, right_ear, left_ear]`.
pub mod adapter {
    use super::*;

    /// BODY_25 layout (25 keypoints): nose 0, eyes 15/16, ears 17/18.
    pub const BODY25_HEAD_SLOTS: [usize; 5] = [0, 15, 16, 17, 18];
    /// COCO-18 layout: nose 0, eyes 14/15, ears 16/17.
    pub const COCO18_HEAD_SLOTS: [usize; 5] = [0, 14, 15, 16, 17];

    /// Extracts the five head keypoints from a flat `[x, y, c]` keypoint list
    /// using one of the slot maps above.
    pub fn detections_from_pose(
        person_id: &str,
        keypoints: &[[f64; 3]],
        slot_map: &[usize; 5],
    ) -> Result<PersonDetections, FeatureError> {
        let mut kps = [KeypointDetection::absent(); NUM_KEYPOINTS];
        for (slot, &idx) in slot_map.iter().enumerate() {
            if let Some([x, y, c]) = keypoints.get(idx) {
                kps[slot] = KeypointDetection::new(*x, *y, *c)?;
            }
        }
        Ok(PersonDetections::new(kps, person_id))
    }
}
