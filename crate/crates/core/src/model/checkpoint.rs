//! Binary checkpoint container.
//!
//! ```text
//! b"LEXNMTCK" | version: u32 LE | header_len: u64 LE | header JSON | f64 LE data...
//! ```
//!
//! The JSON header carries the model config, both vocabularies, the
//! lexicon epsilon (when the model was trained with a lexicon) and the
//! name and shape of every tensor. Tensor data follows in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::{Error, Result};

use super::{ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"LEXNMTCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    lexicon_epsilon: Option<f64>,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
}

/// A trained model with the vocabularies it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// Set when the model was trained with a lexicon bias.
    pub lexicon_epsilon: Option<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.params.config,
            lexicon_epsilon: self.lexicon_epsilon,
            src_vocab: self.src_vocab.tokens().to_vec(),
            tgt_vocab: self.tgt_vocab.tokens().to_vec(),
            tensors: self
                .params
                .store
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.to_owned(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.store.iter() {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes
            .get(20..20 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;

        let src_vocab = Vocabulary::from_tokens(header.src_vocab)?;
        let tgt_vocab = Vocabulary::from_tokens(header.tgt_vocab)?;
        if src_vocab.len() != header.config.src_vocab_size
            || tgt_vocab.len() != header.config.tgt_vocab_size
        {
            return Err(Error::DimensionMismatch(
                "vocabulary sizes disagree with the model config".into(),
            ));
        }

        let mut data = &bytes[20 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let n = meta.rows * meta.cols;
            if data.len() < 8 * n {
                return Err(Error::Checkpoint(format!(
                    "tensor {}: truncated data",
                    meta.name
                )));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            tensors.push((
                meta.name,
                Tensor {
                    rows: meta.rows,
                    cols: meta.cols,
                    data: values,
                },
            ));
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let params = ModelParams::from_tensors(header.config, tensors)?;
        Ok(Self {
            params,
            src_vocab,
            tgt_vocab,
            lexicon_epsilon: header.lexicon_epsilon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionKind;

    fn sample(attention: AttentionKind) -> Checkpoint {
        let src_vocab = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        let tgt_vocab = Vocabulary::from_tokens(["x", "y"]).unwrap();
        let mut c = ModelConfig::new(src_vocab.len(), tgt_vocab.len());
        c.embed_dim = 3;
        c.hidden_dim = 2;
        c.attention_dim = 2;
        c.attention = attention;
        Checkpoint {
            params: ModelParams::random(c, 0.3, 11).unwrap(),
            src_vocab,
            tgt_vocab,
            lexicon_epsilon: Some(1e-6),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [AttentionKind::Dot, AttentionKind::Mlp] {
            let ck = sample(kind);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_shape_mismatch_by_name() {
        let ck = sample(AttentionKind::Dot);
        let bytes = ck.to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[20..20 + len].to_vec()).unwrap();
        // shrink eta.b by one row, and drop one value to keep the data length consistent
        let patched = json.replace(
            r#"{"name":"eta.b","rows":4,"cols":1}"#,
            r#"{"name":"eta.b","rows":3,"cols":1}"#,
        );
        assert_ne!(patched, json);
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[20 + len..bytes.len() - 8]);
        let err = Checkpoint::from_bytes(&out).unwrap_err().to_string();
        assert!(err.contains("eta.b"), "{err}");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = sample(AttentionKind::Dot).to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes.truncate(bytes.len() - 9);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
