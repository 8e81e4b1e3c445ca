//! Ransomware telemetry to token sentences, a small trainable transformer
//! classifier, and local explanations of its predictions.
//!
//! The pipeline is:
//!
//! 1. [`ingest`]: CSV loading, label unification, median/mode imputation,
//!    stratified splitting.
//! 2. [`transforms`]: skewness, Box-Cox / Yeo-Johnson, Min-Max scaling.
//! 3. [`nttp`]: quantile binning of numeric columns into `{column}_bin_{k}`
//!    tokens, sentence assembly, vocabulary and fixed-length encoding.
//! 4. [`model`]: transformer encoder with absolute or disentangled
//!    (content/relative-position) attention, manual backpropagation, AdamW.
//! 5. [`explain`]: LIME surrogates and single-token occlusion.
//! 6. [`eval`]: confusion matrix, precision/recall/F1, ROC and AUC.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the concrete instantiations used by the command-line tool.

pub mod eval;
pub mod explain;
pub mod ingest;
pub mod model;
pub mod nttp;
pub mod scalar;
pub mod stats;
pub mod transforms;

pub use scalar::Scalar;

/// Class index for benign samples.
pub const BENIGN: u8 = 0;
/// Class index for ransomware samples (the positive class).
pub const RANSOMWARE: u8 = 1;
/// Human-readable class names in class-index order.
pub const CLASS_NAMES: [&str; 2] = ["Benign", "Ransomware"];

pub type Classifier = model::TransformerClassifier<f64>;
pub type Classifier32 = model::TransformerClassifier<f32>;
pub type Gradients = model::Params<f64>;
pub type PowerTransform = transforms::PowerTransform<f64>;
pub type PowerTransform32 = transforms::PowerTransform<f32>;
pub type MinMaxScaler = transforms::MinMaxScaler<f64>;
pub type RocCurve = eval::RocCurve<f64>;
pub type RocCurve32 = eval::RocCurve<f32>;
pub type EmbeddingStats = model::EmbeddingStats<f64>;
