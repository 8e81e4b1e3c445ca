//! Numerical-to-text tokenization.
//!
//! Each numeric feature is cut into quantile bins, every cell becomes a
//! `{column}_bin_{k}` token, and a row becomes the space-separated sentence
//! of its tokens in fitted column order. [`TokenVocab`] maps those tokens to
//! ids for the encoder, with `[CLS]` prepended and `[PAD]` filling to
//! `max_len`.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{ColumnKind, ColumnValues, Dataset};
use crate::{stats, CLASS_NAMES};

pub const DEFAULT_N_BINS: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 128;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

#[derive(Debug, Error)]
pub enum NttpError {
    #[error("column `{0}` is empty")]
    EmptyColumn(String),
    #[error("column `{0}` still has missing values; impute before binning")]
    NotImputed(String),
    #[error("column `{0}` is not in the binning model")]
    UnknownColumn(String),
    #[error("row has no value for column `{0}`")]
    MissingValue(String),
    #[error("n_bins must be at least 1")]
    NoBins,
    #[error("max_len must be at least 1")]
    ZeroLength,
    #[error("label `{0}` is neither Benign nor Ransomware")]
    BadLabel(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, NttpError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnBins {
    pub column: String,
    /// Strictly increasing interior edges.
    pub edges: Vec<f64>,
}

impl ColumnBins {
    pub fn n_bins_effective(&self) -> usize {
        self.edges.len() + 1
    }

    /// Number of edges strictly below `x`: `x <= e0` is bin 0 and anything
    /// above the last edge is the last bin.
    pub fn bin(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| x > e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningModel {
    pub n_bins_requested: usize,
    pub columns: Vec<ColumnBins>,
    /// Categorical feature columns encoded as `{column}_{value}` tokens after
    /// the numeric ones. Empty unless opted in.
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

/// Quantile edges at `k / n_bins` for `k = 1..n_bins`, equal edges collapsed.
/// An edge at the column maximum would open an empty top bin and is dropped,
/// so a constant column has no edges.
pub fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let s = stats::sorted(values);
    let Some(&max) = s.last() else {
        return Vec::new();
    };
    let mut edges: Vec<f64> = (1..n_bins)
        .filter_map(|k| stats::quantile_sorted(&s, k as f64 / n_bins as f64))
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

/// Fits quantile bins on every numeric feature column.
pub fn fit_binner(dataset: &Dataset, n_bins: usize) -> Result<BinningModel> {
    if n_bins == 0 {
        return Err(NttpError::NoBins);
    }
    let mut columns = Vec::new();
    for (name, values) in dataset.numeric_features() {
        if values.is_empty() {
            return Err(NttpError::EmptyColumn(name.to_string()));
        }
        let x: Vec<f64> = values
            .iter()
            .map(|v| v.ok_or_else(|| NttpError::NotImputed(name.to_string())))
            .collect::<Result<_>>()?;
        columns.push(ColumnBins {
            column: name.to_string(),
            edges: quantile_edges(&x, n_bins),
        });
    }
    Ok(BinningModel {
        n_bins_requested: n_bins,
        columns,
        categorical_columns: Vec::new(),
    })
}

pub fn bin_token(column: &str, bin: usize) -> String {
    format!("{column}_bin_{bin}")
}

fn categorical_token(column: &str, value: &str) -> String {
    let value: String = value
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect();
    format!("{column}_{value}")
}

impl BinningModel {
    /// Adds every categorical feature column of `dataset` to the sentence.
    pub fn with_categoricals(mut self, dataset: &Dataset) -> Self {
        self.categorical_columns = dataset
            .feature_columns()
            .filter(|c| c.spec.kind == ColumnKind::Categorical)
            .map(|c| c.spec.name.clone())
            .collect();
        self
    }

    pub fn column(&self, name: &str) -> Result<&ColumnBins> {
        self.columns
            .iter()
            .find(|c| c.column == name)
            .ok_or_else(|| NttpError::UnknownColumn(name.to_string()))
    }

    pub fn column_order(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.column.as_str())
    }

    pub fn bin_value(&self, column: &str, x: f64) -> Result<usize> {
        Ok(self.column(column)?.bin(x))
    }

    /// Sentence for one row given as column -> value.
    pub fn encode_row(&self, row: &HashMap<String, f64>) -> Result<String> {
        let tokens: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                row.get(&c.column)
                    .map(|&x| bin_token(&c.column, c.bin(x)))
                    .ok_or_else(|| NttpError::MissingValue(c.column.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(tokens.join(" "))
    }

    /// Sentences for every row of an imputed dataset.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Vec<String>> {
        let mut sentences: Vec<Vec<String>> = vec![Vec::new(); dataset.len()];
        for c in &self.columns {
            let values = dataset
                .numeric(&c.column)
                .ok_or_else(|| NttpError::MissingValue(c.column.clone()))?;
            for (s, v) in sentences.iter_mut().zip(values) {
                let x = v.ok_or_else(|| NttpError::NotImputed(c.column.clone()))?;
                s.push(bin_token(&c.column, c.bin(x)));
            }
        }
        for name in &self.categorical_columns {
            let values = match dataset.column(name).map(|c| &c.values) {
                Some(ColumnValues::Categorical(v)) => v,
                _ => return Err(NttpError::MissingValue(name.clone())),
            };
            for (s, v) in sentences.iter_mut().zip(values) {
                let v = v.as_deref().ok_or_else(|| NttpError::NotImputed(name.clone()))?;
                s.push(categorical_token(name, v));
            }
        }
        Ok(sentences.into_iter().map(|s| s.join(" ")).collect())
    }
}

/// Closed token vocabulary with `[PAD]`, `[UNK]`, `[CLS]` at ids 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for TokenVocab {
    fn from(f: VocabFile) -> Self {
        TokenVocab::from_tokens(f.tokens)
    }
}

impl From<TokenVocab> for VocabFile {
    fn from(v: TokenVocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl TokenVocab {
    /// `tokens` must start with the three special tokens.
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the id-ordered token list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    /// `[CLS]` followed by the text's token ids, truncated to `max_len` and
    /// right-padded with `[PAD]`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<EncodedExample> {
        if max_len == 0 {
            return Err(NttpError::ZeroLength);
        }
        let mut token_ids = Vec::with_capacity(max_len);
        token_ids.push(CLS_ID);
        token_ids.extend(
            text.split_whitespace()
                .take(max_len - 1)
                .map(|t| self.id(t).unwrap_or(UNK_ID)),
        );
        let real = token_ids.len();
        token_ids.resize(max_len, PAD_ID);
        let mut attention_mask = vec![1u8; real];
        attention_mask.resize(max_len, 0);
        Ok(EncodedExample {
            token_ids,
            attention_mask,
            label: None,
        })
    }

    /// Space-joined tokens of the non-special ids (`[UNK]` is kept).
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD_ID && id != CLS_ID)
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK_ID as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ids in first-seen order after the special tokens.
pub fn build_vocab<S: AsRef<str>>(texts: &[S]) -> TokenVocab {
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut seen: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    for text in texts {
        for t in text.as_ref().split_whitespace() {
            if !seen.contains_key(t) {
                seen.insert(t.to_string(), tokens.len() as u32);
                tokens.push(t.to_string());
            }
        }
    }
    TokenVocab { tokens, index: seen }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label: Option<u8>,
}

impl EncodedExample {
    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    /// Count of real (non-PAD) positions, `[CLS]` included.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// One row of the prepared `text,label,source` file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedExample {
    pub text: String,
    pub label: u8,
    pub source: String,
}

#[derive(Serialize, Deserialize)]
struct PreparedRecord {
    text: String,
    label: String,
    source: String,
}

pub fn prepare_examples(model: &BinningModel, dataset: &Dataset) -> Result<Vec<PreparedExample>> {
    let texts = model.encode_dataset(dataset)?;
    Ok(texts
        .into_iter()
        .zip(&dataset.labels)
        .zip(&dataset.source)
        .map(|((text, &label), source)| PreparedExample {
            text,
            label,
            source: source.clone(),
        })
        .collect())
}

/// Writes `text,label,source` with class names as labels.
pub fn write_prepared<W: Write>(rows: &[PreparedExample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(PreparedRecord {
            text: r.text.clone(),
            label: CLASS_NAMES[r.label as usize].to_string(),
            source: r.source.clone(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_prepared<R: Read>(reader: R) -> Result<Vec<PreparedExample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<PreparedRecord>() {
        let rec = rec?;
        let t = rec.label.trim();
        let label = if t.eq_ignore_ascii_case("benign") || t == "0" {
            0
        } else if t.eq_ignore_ascii_case("ransomware") || t == "1" {
            1
        } else {
            return Err(NttpError::BadLabel(rec.label));
        };
        out.push(PreparedExample {
            text: rec.text,
            label,
            source: rec.source,
        });
    }
    Ok(out)
}
