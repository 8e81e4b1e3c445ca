//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `RXAICKPT`, a little-endian `u64` header length,
//! a UTF-8 JSON [`CheckpointHeader`], then every tensor of
//! [`Params::tensors`](super::Params::tensors) in order as row-major
//! little-endian `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::encoder::TransformerClassifier;
use super::params::Params;
use super::{ModelConfig, ModelError, Result};
use crate::{Scalar, CLASS_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RXAICKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub vocab_sha256: String,
    pub class_order: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar, W: Write>(
    model: &TransformerClassifier<T>,
    vocab_sha256: &str,
    metadata: serde_json::Value,
    mut writer: W,
) -> Result<()> {
    let tensors = model.params.tensors();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        vocab_size: model.vocab_size,
        vocab_sha256: vocab_sha256.to_string(),
        class_order: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    writer.write_all(CHECKPOINT_MAGIC)?;
    writer.write_all(&(json.len() as u64).to_le_bytes())?;
    writer.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.params.n_params() * 8);
    for (_, m) in &tensors {
        for x in &m.data {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar, R: Read>(mut reader: R) -> Result<(TransformerClassifier<T>, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(ModelError::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    reader.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.class_order != CLASS_NAMES {
        return Err(ModelError::Format(format!("unexpected class order {:?}", header.class_order)));
    }
    let mut params = Params::<T>::zeros(&header.config, header.vocab_size);
    {
        let mut tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(ModelError::Format("tensor count does not match config".into()));
        }
        let mut word = [0u8; 8];
        for ((name, m), entry) in tensors.iter_mut().zip(&header.tensors) {
            if *name != entry.name || m.shape() != (entry.rows, entry.cols) {
                return Err(ModelError::Format(format!(
                    "tensor {} ({}x{}) does not match expected {name} {:?}",
                    entry.name,
                    entry.rows,
                    entry.cols,
                    m.shape()
                )));
            }
            for x in m.data.iter_mut() {
                reader.read_exact(&mut word)?;
                *x = T::of(f64::from_le_bytes(word));
            }
        }
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(ModelError::Format(format!("{} trailing bytes", rest.len())));
    }
    let model = TransformerClassifier::from_params(header.config.clone(), header.vocab_size, params)?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    fn cfg(mode: AttentionMode) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ffn: 8,
            max_len: 10,
            attention_mode: mode,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        for mode in [AttentionMode::Absolute, AttentionMode::Disentangled] {
            let m = TransformerClassifier::<f64>::new(cfg(mode), 9).unwrap();
            let mut buf = Vec::new();
            save_checkpoint(&m, "abc", serde_json::json!({"lr": 3e-4}), &mut buf).unwrap();
            assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
            let (back, header) = load_checkpoint::<f64, _>(buf.as_slice()).unwrap();
            assert_eq!(header.vocab_sha256, "abc");
            assert_eq!(header.class_order, ["Benign", "Ransomware"]);
            for ((_, a), (_, b)) in m.params.tensors().iter().zip(back.params.tensors()) {
                let ab: Vec<u64> = a.data.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u64> = b.data.iter().map(|x| x.to_bits()).collect();
                assert_eq!(ab, bb);
            }
            assert_eq!(back, m);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = TransformerClassifier::<f32>::new(cfg(AttentionMode::Absolute), 9).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, "", serde_json::Value::Null, &mut buf).unwrap();
        let (back, _) = load_checkpoint::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut truncated = buf.clone();
        truncated.pop();
        assert!(load_checkpoint::<f32, _>(truncated.as_slice()).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(load_checkpoint::<f32, _>(extra.as_slice()).is_err());
        let mut bad = buf;
        bad[0] = b'X';
        assert!(matches!(load_checkpoint::<f32, _>(bad.as_slice()), Err(ModelError::Format(_))));
    }
}
