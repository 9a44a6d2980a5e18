//! Transformer encoder inference and word-level hidden-state extraction.
//!
//! The encoder runs at subword-piece level and pools each original word's
//! pieces (arithmetic mean) into one vector per layer. Only inference is
//! provided; weights are immutable once loaded.

mod context;
mod model;
mod tokenizer;
mod weights;

use serde::{Deserialize, Serialize};

pub use context::{build_context, build_context_from_parts, ContextMode};
pub use model::{attention, attention_weights, encode, encode_traced, ffnn, multi_head, AttentionTrace};
pub use tokenizer::{TokenizedInput, Tokenizer, Vocab, CLS, SEP, UNK};
pub use weights::{EncoderWeights, LayerWeights};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scaling applied to query-key products inside encoder self-attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `1 / sqrt(d_v)`.
    #[default]
    InvSqrtDv,
    /// `1 / sqrt(d_k)`, the scaling most pretrained checkpoints were trained with.
    InvSqrtDk,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub attention_scale: AttentionScale,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::ConfigMismatch(format!("encoder {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> f32 {
        let width = match self.attention_scale {
            AttentionScale::InvSqrtDv => self.d_v,
            AttentionScale::InvSqrtDk => self.d_k,
        };
        1.0 / (width as f32).sqrt()
    }
}

/// Per-word hidden states for every encoder layer.
///
/// `layers` has shape `[L, n_words, d_model]` holding `h^1..h^L`;
/// `embeddings` has shape `[n_words, d_model]` holding the pooled input
/// embedding row `h^0`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStack {
    layers: Tensor,
    embeddings: Tensor,
}

impl HiddenStack {
    pub fn new(layers: Tensor, embeddings: Tensor) -> Result<Self> {
        if layers.rank() != 3 || embeddings.rank() != 2 {
            return Err(Error::shape("hidden stack needs [L, n, d] layers and [n, d] embeddings"));
        }
        if layers.shape()[0] == 0 {
            return Err(Error::Empty("hidden stack without layers".into()));
        }
        if layers.shape()[1..] != *embeddings.shape() {
            return Err(Error::shape(format!(
                "hidden stack layers {:?} vs embeddings {:?}",
                layers.shape(),
                embeddings.shape()
            )));
        }
        layers.check_finite("hidden stack")?;
        embeddings.check_finite("hidden stack embeddings")?;
        Ok(Self { layers, embeddings })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.shape()[0]
    }

    pub fn num_words(&self) -> usize {
        self.layers.shape()[1]
    }

    pub fn d_model(&self) -> usize {
        self.layers.shape()[2]
    }

    /// `h^layer_word`; layer 0 is the input embedding, layers 1..=L the
    /// encoder outputs.
    pub fn word(&self, layer: usize, word: usize) -> &[f32] {
        let (n, d) = (self.num_words(), self.d_model());
        if layer == 0 {
            &self.embeddings.data()[word * d..(word + 1) * d]
        } else {
            let start = ((layer - 1) * n + word) * d;
            &self.layers.data()[start..start + d]
        }
    }

    /// Layers `1..=L` at one word position, as an `[L, d_model]` tensor.
    pub fn position(&self, word: usize) -> Result<Tensor> {
        if word >= self.num_words() {
            return Err(Error::invalid(format!(
                "word position {word} outside a {}-word stack",
                self.num_words()
            )));
        }
        let mut data = Vec::with_capacity(self.num_layers() * self.d_model());
        for l in 1..=self.num_layers() {
            data.extend_from_slice(self.word(l, word));
        }
        Tensor::new(vec![self.num_layers(), self.d_model()], data)
    }

    pub fn layers(&self) -> &Tensor {
        &self.layers
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }
}
