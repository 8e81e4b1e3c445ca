use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rxai_core::explain::{LimeConfig, Method, DEFAULT_KERNEL_WIDTH, DEFAULT_N_SAMPLES};
use rxai_core::ingest::SplitFractions;
use rxai_core::model::{AdamHyper, AttentionMode, ModelConfig, TrainConfig};
use rxai_core::nttp::{DEFAULT_MAX_LEN, DEFAULT_N_BINS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainMethods {
    Lime,
    Occlusion,
    #[default]
    Both,
}

impl ExplainMethods {
    pub fn methods(self) -> Vec<Method> {
        match self {
            ExplainMethods::Lime => vec![Method::Lime],
            ExplainMethods::Occlusion => vec![Method::Occlusion],
            ExplainMethods::Both => vec![Method::Lime, Method::Occlusion],
        }
    }
}

impl FromStr for ExplainMethods {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lime" => Ok(Self::Lime),
            "occlusion" => Ok(Self::Occlusion),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown explain method `{other}` (lime, occlusion, both)")),
        }
    }
}

impl fmt::Display for ExplainMethods {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExplainMethods::Lime => "lime",
            ExplainMethods::Occlusion => "occlusion",
            ExplainMethods::Both => "both",
        })
    }
}

/// One CSV input, written `path` or `path:source_tag` in config files and
/// on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub path: PathBuf,
    pub source: Option<String>,
}

impl FromStr for InputSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Err("empty input path".into());
        }
        match s.rsplit_once(':') {
            Some((p, tag)) if !p.is_empty() && !tag.is_empty() && !tag.contains(['/', '\\']) => Ok(Self {
                path: PathBuf::from(p),
                source: Some(tag.to_string()),
            }),
            _ => Ok(Self {
                path: PathBuf::from(s),
                source: None,
            }),
        }
    }
}

impl fmt::Display for InputSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            Some(t) => write!(f, "{}:{t}", self.path.display()),
            None => write!(f, "{}", self.path.display()),
        }
    }
}

/// Flat run configuration. Every key is optional in the file; command-line
/// flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `path` or `path:source` entries.
    pub inputs: Vec<String>,
    pub sample_n: Option<usize>,
    /// Drives the split, model init, batch order, dropout, and LIME.
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,

    pub n_bins: usize,
    pub include_categoricals: bool,
    pub pre_binning: bool,

    pub attention_mode: AttentionMode,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub relative_window: usize,
    pub dropout: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,

    pub explain_method: ExplainMethods,
    pub lime_samples: usize,
    pub kernel_width: f64,
    /// Test rows explained, split evenly between the classes.
    pub explain_n: usize,
    /// Test rows whose attention maps are exported.
    pub attention_samples: usize,

    pub threads: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let f = SplitFractions::default();
        Self {
            inputs: Vec::new(),
            sample_n: None,
            seed: 0,
            train_fraction: f.train,
            validation_fraction: f.validation,
            test_fraction: f.test,
            n_bins: DEFAULT_N_BINS,
            include_categoricals: false,
            pre_binning: false,
            attention_mode: m.attention_mode,
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_layers: m.n_layers,
            d_ffn: m.d_ffn,
            max_len: DEFAULT_MAX_LEN,
            relative_window: m.relative_window,
            dropout: m.dropout_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.adam.weight_decay,
            explain_method: ExplainMethods::default(),
            lime_samples: DEFAULT_N_SAMPLES,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            explain_n: 20,
            attention_samples: 2,
            threads: 1,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn input_specs(&self) -> Result<Vec<InputSpec>> {
        self.inputs
            .iter()
            .map(|s| s.parse().map_err(CliError::Config))
            .collect()
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            validation: self.validation_fraction,
            test: self.test_fraction,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ffn: self.d_ffn,
            max_len: self.max_len,
            attention_mode: self.attention_mode,
            relative_window: self.relative_window,
            dropout_rate: self.dropout,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            adam: AdamHyper {
                weight_decay: self.weight_decay,
                ..AdamHyper::default()
            },
            seed: self.seed,
        }
    }

    pub fn lime_config(&self) -> LimeConfig {
        LimeConfig {
            n_samples: self.lime_samples,
            kernel_width: self.kernel_width,
            seed: self.seed,
        }
    }

    /// Checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.fractions()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.n_bins < 2 {
            return bad(format!("n_bins must be at least 2, got {}", self.n_bins));
        }
        if self.sample_n == Some(0) {
            return bad("sample_n must be positive".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.explain_n == 0 {
            return bad("explain_n must be positive".into());
        }
        self.input_specs()?;
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.lime_samples < 2 {
            return bad(format!("lime_samples must be at least 2, got {}", self.lime_samples));
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return bad(format!("kernel_width must be positive, got {}", self.kernel_width));
        }
        Ok(())
    }

    /// Input files must exist when a run starts.
    pub fn check_inputs_exist(&self) -> Result<()> {
        let specs = self.input_specs()?;
        if specs.is_empty() {
            return Err(CliError::Config("no inputs given".into()));
        }
        for s in specs {
            if !s.path.is_file() {
                return Err(CliError::Data(format!("input {} does not exist", s.path.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::from_toml("sed = 3").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let c = RunConfig::from_toml("attention_mode = \"disentangled\"\nsample_n = 50").unwrap();
        assert_eq!(c.attention_mode, AttentionMode::Disentangled);
        assert_eq!(c.sample_n, Some(50));
    }

    #[test]
    fn input_spec_parsing() {
        let s: InputSpec = "data/pm.csv:process_memory".parse().unwrap();
        assert_eq!(s.path, PathBuf::from("data/pm.csv"));
        assert_eq!(s.source.as_deref(), Some("process_memory"));
        let s: InputSpec = "data/pm.csv".parse().unwrap();
        assert_eq!(s.source, None);
        assert_eq!(s.to_string(), "data/pm.csv");
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let c = RunConfig {
            test_fraction: 0.3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
