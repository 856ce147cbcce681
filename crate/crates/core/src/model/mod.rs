//! Attentional encoder-decoder with an optional lexicon-biased softmax.
//!
//! Shapes, with `H` the per-direction encoder width and `D = 2H` the
//! decoder width:
//!
//! | tensor        | shape                 |
//! |---------------|-----------------------|
//! | `src_embed`   | `|V_f| x d_emb`       |
//! | `enc_fwd.*`   | `3H x (d_emb + H)`    |
//! | `enc_bwd.*`   | `3H x (d_emb + H)`    |
//! | `dec.*`       | `3D x (d_emb + 2D)`   |
//! | `attn.w1`     | `d_att x 2D` (MLP)    |
//! | `attn.w2`     | `1 x d_att` (MLP)     |
//! | `eta.*`       | `D x 2D`              |
//! | `softmax.*`   | `|V_e| x D`           |
//!
//! LSTM weight rows are stacked `[input gate; output gate; candidate]`;
//! the forget gate is `1 - input gate`.

mod checkpoint;
mod lexicon;
mod network;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

pub use checkpoint::Checkpoint;
pub use lexicon::{build_lexicon_matrix, LexiconBias, LexiconMatrix};
pub use network::{
    attend, decoder_step, encode, lstm_step, sentence_logprob, DecoderState, DecoderVars,
    EncodedVars, EncoderOutput, LstmParams, Model, PreparedSource,
};

/// Default `epsilon` added to lexicon probabilities before the log.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `h . r_j`
    Dot,
    /// `w2 . tanh(W1 [h; r_j])`
    Mlp,
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention kind {other:?} (expected dot or mlp)"
            ))),
        }
    }
}

/// Hyperparameters that fix every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embed_dim: usize,
    /// Per-direction encoder width; the decoder is twice as wide.
    pub hidden_dim: usize,
    pub attention: AttentionKind,
    /// Hidden layer width of the MLP attention.
    pub attention_dim: usize,
}

impl ModelConfig {
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            src_vocab_size,
            tgt_vocab_size,
            embed_dim: 64,
            hidden_dim: 64,
            attention: AttentionKind::Dot,
            attention_dim: 64,
        }
    }

    pub fn decoder_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        // the reserved <s> and <unk> symbols
        if self.src_vocab_size < 2 || self.tgt_vocab_size < 2 {
            return Err(Error::InvalidArgument(
                "vocabularies need at least 2 entries".into(),
            ));
        }
        Ok(())
    }

    /// Expected `(name, rows, cols)` for every tensor, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, usize, usize)> {
        let h = self.hidden_dim;
        let d = self.decoder_dim();
        let e = self.embed_dim;
        let mut out = vec![
            ("src_embed", self.src_vocab_size, e),
            ("tgt_embed", self.tgt_vocab_size, e),
            ("enc_fwd.w", 3 * h, e + h),
            ("enc_fwd.b", 3 * h, 1),
            ("enc_bwd.w", 3 * h, e + h),
            ("enc_bwd.b", 3 * h, 1),
            ("dec.w", 3 * d, e + 2 * d),
            ("dec.b", 3 * d, 1),
        ];
        if self.attention == AttentionKind::Mlp {
            out.push(("attn.w1", self.attention_dim, 2 * d));
            out.push(("attn.w2", 1, self.attention_dim));
        }
        out.extend([
            ("eta.w", d, 2 * d),
            ("eta.b", d, 1),
            ("softmax.w", self.tgt_vocab_size, d),
            ("softmax.b", self.tgt_vocab_size, 1),
        ]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpAttentionIds {
    pub w1: ParamId,
    pub w2: ParamId,
}

/// Handles for every named tensor of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamIds {
    pub src_embed: ParamId,
    pub tgt_embed: ParamId,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub dec: LstmParams,
    pub attention: Option<MlpAttentionIds>,
    pub eta_w: ParamId,
    pub eta_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl ParamIds {
    fn for_config(config: &ModelConfig) -> Self {
        let mut next = 0..;
        let mut id = || ParamId(next.next().unwrap());
        let h = config.hidden_dim;
        let d = config.decoder_dim();
        let src_embed = id();
        let tgt_embed = id();
        let enc_fwd = LstmParams::new(id(), id(), h);
        let enc_bwd = LstmParams::new(id(), id(), h);
        let dec = LstmParams::new(id(), id(), d);
        let attention = (config.attention == AttentionKind::Mlp)
            .then(|| MlpAttentionIds { w1: id(), w2: id() });
        Self {
            src_embed,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            dec,
            attention,
            eta_w: id(),
            eta_b: id(),
            out_w: id(),
            out_b: id(),
        }
    }
}

/// All tensors of one encoder-decoder plus its shape hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub ids: ParamIds,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, rows, cols) in config.layout() {
            store.add(name, Tensor::zeros(rows, cols));
        }
        Ok(Self {
            ids: ParamIds::for_config(&config),
            config,
            store,
        })
    }

    /// Weight matrices and embeddings drawn uniformly from `[-scale, scale]`;
    /// biases start at zero.
    pub fn random(config: ModelConfig, scale: f64, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let is_bias: Vec<bool> = params
            .store
            .iter()
            .map(|(n, _)| n.ends_with(".b"))
            .collect();
        for (t, bias) in params.store.tensors_mut().iter_mut().zip(is_bias) {
            if !bias {
                for x in t.data.iter_mut() {
                    *x = rng.gen_range(-scale..=scale);
                }
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from stored tensors, checking names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut store = ParamStore::new();
        for ((name, rows, cols), (found, t)) in layout.into_iter().zip(tensors) {
            if name != found {
                return Err(Error::DimensionMismatch(format!(
                    "expected tensor {name}, found {found}"
                )));
            }
            if t.rows != rows || t.cols != cols || t.data.len() != rows * cols {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {name}: expected {rows}x{cols}, found {}x{} ({} values)",
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has non-finite values"
                )));
            }
            store.add(name, t);
        }
        Ok(Self {
            ids: ParamIds::for_config(&config),
            config,
            store,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.store.iter().all(|(_, t)| t.is_finite())
    }
}
