//! Apparent 2D gaze estimation from five facial keypoints.
//!
//! Given the head keypoints (nose, eyes, ears) emitted by a whole-body pose
//! estimator, this crate predicts the person's apparent gaze direction in the
//! image plane together with a per-prediction uncertainty. Keypoints are
//! centered on the head centroid and scaled by the head size, then fed to a
//! small regressor whose input layer gates each coordinate on its detection
//! confidence, so absent keypoints (confidence zero) are suppressed rather
//! than mistaken for real positions at the origin.
//!
//! The crate also ships a non-learned geometric baseline, a synthetic
//! 3D-head data generator that serves as a ground-truth oracle, the training
//! loop (uncertainty-weighted cosine loss, Adam, early stopping, quadrant
//! balancing), an evaluation suite (angular error, coverage, uncertainty
//! correlation, per-keypoint-count breakdowns), and a CLI wiring it all
//! together. See the `cli` module or the README for command usage.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod geom;
pub mod manifest;
pub mod network;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use dataset::{DatasetRecord, LabelAnnotation, LabeledSample, PredictionRecord, SampleMeta};
pub use evaluation::{angular_error, evaluate, pearson_correlation, EvalReport, Predictor};
pub use features::{
    build_feature_vector, mirror_sample, FeatureVector, GazeLabel, HeadGeometry,
    KeypointDetection, PersonDetections,
};
pub use geom::{estimate_gaze_geom, GeomEstimate};
pub use network::{init_weights, GazePrediction, InputVariant, ModelWeights};
pub use synthetic::{generate_dataset, SynthParams};
pub use training::{fine_tune, train, TrainConfig, TrainReport};
