//! Transformer encoder classifier over bin-token sentences.
//!
//! Two attention variants share one code path: `Absolute` adds a learned
//! position table to the token embeddings (BERT style), `Disentangled` keeps
//! content and position apart and scores each pair with content-to-content,
//! content-to-position and position-to-content terms over clipped relative
//! distances (DeBERTa style). Backpropagation is written out by hand.

pub mod checkpoint;
pub mod embedding;
pub mod encoder;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use embedding::{embedding_stats, matrix_stats, EmbeddingStats};
pub use encoder::{write_attention_csv, AttentionMaps, ForwardOutput, TransformerClassifier};
pub use optim::{adamw_step, adamw_update, lr_at, AdamHyper, AdamState};
pub use params::{LayerParams, Params};
pub use tensor::Matrix;
pub use train::{train, EpochMetrics, TrainConfig, TrainHistory, FINE_TUNE_LEARNING_RATE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("attention mask must be a prefix of ones followed by zeros")]
    MaskNotPrefix,
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("example has no real tokens")]
    EmptyExample,
    #[error("empty batch")]
    EmptyBatch,
    #[error("example {0} has no label")]
    MissingLabel(usize),
    #[error("label {0} is not a class index")]
    BadLabel(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("total_steps must be positive")]
    ZeroTotalSteps,
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    #[default]
    Absolute,
    Disentangled,
}

impl std::str::FromStr for AttentionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "absolute" | "bert" => Ok(AttentionMode::Absolute),
            "disentangled" | "deberta" => Ok(AttentionMode::Disentangled),
            other => Err(ModelError::InvalidConfig(format!("unknown attention mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionMode::Absolute => "absolute",
            AttentionMode::Disentangled => "disentangled",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub attention_mode: AttentionMode,
    pub relative_window: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 64,
            max_len: crate::nttp::DEFAULT_MAX_LEN,
            attention_mode: AttentionMode::Absolute,
            relative_window: 8,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ffn", self.d_ffn),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.attention_mode == AttentionMode::Disentangled && self.relative_window == 0 {
            return bad("relative_window must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
