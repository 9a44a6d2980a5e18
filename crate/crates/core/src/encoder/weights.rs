//! Encoder parameters and their tensor-store naming schema.
//!
//! | name                            | shape               |
//! |---------------------------------|---------------------|
//! | `embeddings.token`              | `vocab × d_model`   |
//! | `embeddings.position`           | `max_pos × d_model` |
//! | `embeddings.segment`            | `2 × d_model`       |
//! | `embeddings.norm.{gain,bias}`   | `d_model`           |
//! | `layer.{l}.attn.wq.{h}`         | `d_k × d_model`     |
//! | `layer.{l}.attn.wk.{h}`         | `d_k × d_model`     |
//! | `layer.{l}.attn.wv.{h}`         | `d_v × d_model`     |
//! | `layer.{l}.attn.wmh`            | `d_model × H·d_v`   |
//! | `layer.{l}.attn.norm.{gain,bias}` | `d_model`         |
//! | `layer.{l}.ffn.w1` / `b1`       | `d_ff × d_model` / `d_ff` |
//! | `layer.{l}.ffn.w2` / `b2`       | `d_model × d_ff` / `d_model` |
//! | `layer.{l}.ffn.norm.{gain,bias}` | `d_model`          |
//!
//! Layers `l` and heads `h` are zero-based. Optional bias tensors
//! `layer.{l}.attn.{bq,bk,bv}.{h}` and `layer.{l}.attn.bmh` default to zero
//! when absent, which lets converted pretrained checkpoints carry them.
//! The [`EncoderConfig`] is stored as JSON under metadata key
//! `encoder.config`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::store::NamedTensorStore;
use crate::tensor::Tensor;

pub const CONFIG_KEY: &str = "encoder.config";

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub bq: Vec<Vec<f32>>,
    pub bk: Vec<Vec<f32>>,
    pub bv: Vec<Vec<f32>>,
    pub wmh: Tensor,
    pub bmh: Vec<f32>,
    pub attn_norm_gain: Vec<f32>,
    pub attn_norm_bias: Vec<f32>,
    pub ff1: Tensor,
    pub ff1_bias: Vec<f32>,
    pub ff2: Tensor,
    pub ff2_bias: Vec<f32>,
    pub ffn_norm_gain: Vec<f32>,
    pub ffn_norm_bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub token_embeddings: Tensor,
    pub position_embeddings: Tensor,
    pub segment_embeddings: Tensor,
    pub embed_norm_gain: Vec<f32>,
    pub embed_norm_bias: Vec<f32>,
    pub layers: Vec<LayerWeights>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("finite uniform draws")
}

impl LayerWeights {
    fn random(c: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = c.d_model;
        let s_in = (3.0 / d as f32).sqrt();
        let s_mh = (3.0 / (c.heads * c.d_v) as f32).sqrt();
        let s_ff = (3.0 / c.d_ff as f32).sqrt();
        Self {
            wq: (0..c.heads).map(|_| uniform(rng, vec![c.d_k, d], s_in)).collect(),
            wk: (0..c.heads).map(|_| uniform(rng, vec![c.d_k, d], s_in)).collect(),
            wv: (0..c.heads).map(|_| uniform(rng, vec![c.d_v, d], s_in)).collect(),
            bq: vec![vec![0.0; c.d_k]; c.heads],
            bk: vec![vec![0.0; c.d_k]; c.heads],
            bv: vec![vec![0.0; c.d_v]; c.heads],
            wmh: uniform(rng, vec![d, c.heads * c.d_v], s_mh),
            bmh: vec![0.0; d],
            attn_norm_gain: vec![1.0; d],
            attn_norm_bias: vec![0.0; d],
            ff1: uniform(rng, vec![c.d_ff, d], s_in),
            ff1_bias: vec![0.0; c.d_ff],
            ff2: uniform(rng, vec![d, c.d_ff], s_ff),
            ff2_bias: vec![0.0; d],
            ffn_norm_gain: vec![1.0; d],
            ffn_norm_bias: vec![0.0; d],
        }
    }

    /// Every projection, bias and FFNN parameter set to zero; norms stay at
    /// gain 1, bias 0.
    pub fn zeroed(c: &EncoderConfig) -> Self {
        let d = c.d_model;
        Self {
            wq: vec![Tensor::zeros(vec![c.d_k, d]); c.heads],
            wk: vec![Tensor::zeros(vec![c.d_k, d]); c.heads],
            wv: vec![Tensor::zeros(vec![c.d_v, d]); c.heads],
            bq: vec![vec![0.0; c.d_k]; c.heads],
            bk: vec![vec![0.0; c.d_k]; c.heads],
            bv: vec![vec![0.0; c.d_v]; c.heads],
            wmh: Tensor::zeros(vec![d, c.heads * c.d_v]),
            bmh: vec![0.0; d],
            attn_norm_gain: vec![1.0; d],
            attn_norm_bias: vec![0.0; d],
            ff1: Tensor::zeros(vec![c.d_ff, d]),
            ff1_bias: vec![0.0; c.d_ff],
            ff2: Tensor::zeros(vec![d, c.d_ff]),
            ff2_bias: vec![0.0; d],
            ffn_norm_gain: vec![1.0; d],
            ffn_norm_bias: vec![0.0; d],
        }
    }
}

impl EncoderWeights {
    /// Seeded random weights for toy encoders (uniform, variance-scaled by
    /// fan-in). Embedding tables use unit-scale uniform draws.
    pub fn random(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let token_embeddings = uniform(&mut rng, vec![config.vocab_size, d], 1.0);
        let position_embeddings = uniform(&mut rng, vec![config.max_positions, d], 0.3);
        let segment_embeddings = uniform(&mut rng, vec![2, d], 0.3);
        let layers = (0..config.layers)
            .map(|_| LayerWeights::random(&config, &mut rng))
            .collect();
        Ok(Self {
            token_embeddings,
            position_embeddings,
            segment_embeddings,
            embed_norm_gain: vec![1.0; d],
            embed_norm_bias: vec![0.0; d],
            layers,
            config,
        })
    }

    pub fn to_store(&self) -> Result<NamedTensorStore> {
        let mut s = NamedTensorStore::new();
        s.set_metadata(CONFIG_KEY, serde_json::to_string(&self.config)?);
        s.insert("embeddings.token", self.token_embeddings.clone());
        s.insert("embeddings.position", self.position_embeddings.clone());
        s.insert("embeddings.segment", self.segment_embeddings.clone());
        s.insert("embeddings.norm.gain", Tensor::vector(self.embed_norm_gain.clone())?);
        s.insert("embeddings.norm.bias", Tensor::vector(self.embed_norm_bias.clone())?);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layer.{l}");
            for h in 0..self.config.heads {
                s.insert(format!("{p}.attn.wq.{h}"), layer.wq[h].clone());
                s.insert(format!("{p}.attn.wk.{h}"), layer.wk[h].clone());
                s.insert(format!("{p}.attn.wv.{h}"), layer.wv[h].clone());
            }
            for h in 0..self.config.heads {
                for (kind, b) in [("bq", &layer.bq[h]), ("bk", &layer.bk[h]), ("bv", &layer.bv[h])] {
                    if b.iter().any(|&x| x != 0.0) {
                        s.insert(format!("{p}.attn.{kind}.{h}"), Tensor::vector(b.clone())?);
                    }
                }
            }
            s.insert(format!("{p}.attn.wmh"), layer.wmh.clone());
            if layer.bmh.iter().any(|&x| x != 0.0) {
                s.insert(format!("{p}.attn.bmh"), Tensor::vector(layer.bmh.clone())?);
            }
            s.insert(format!("{p}.attn.norm.gain"), Tensor::vector(layer.attn_norm_gain.clone())?);
            s.insert(format!("{p}.attn.norm.bias"), Tensor::vector(layer.attn_norm_bias.clone())?);
            s.insert(format!("{p}.ffn.w1"), layer.ff1.clone());
            s.insert(format!("{p}.ffn.b1"), Tensor::vector(layer.ff1_bias.clone())?);
            s.insert(format!("{p}.ffn.w2"), layer.ff2.clone());
            s.insert(format!("{p}.ffn.b2"), Tensor::vector(layer.ff2_bias.clone())?);
            s.insert(format!("{p}.ffn.norm.gain"), Tensor::vector(layer.ffn_norm_gain.clone())?);
            s.insert(format!("{p}.ffn.norm.bias"), Tensor::vector(layer.ffn_norm_bias.clone())?);
        }
        Ok(s)
    }

    /// Loads and shape-checks every tensor against the stored config.
    pub fn from_store(store: &NamedTensorStore) -> Result<Self> {
        let raw = store
            .metadata(CONFIG_KEY)
            .ok_or_else(|| Error::ConfigMismatch(format!("weights lack `{CONFIG_KEY}` metadata")))?;
        let config: EncoderConfig = serde_json::from_str(raw)?;
        config.validate()?;
        let c = &config;
        let d = c.d_model;

        let mat = |name: &str, shape: [usize; 2]| -> Result<Tensor> {
            let t = store.get(name).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
            t.expect_shape(&shape, name)?;
            Ok(t.clone())
        };
        let vec = |name: &str, len: usize| -> Result<Vec<f32>> {
            let t = store.get(name).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
            t.expect_shape(&[len], name)?;
            Ok(t.data().to_vec())
        };
        let opt_vec = |name: &str, len: usize| -> Result<Vec<f32>> {
            if store.contains(name) {
                vec(name, len)
            } else {
                Ok(vec![0.0; len])
            }
        };

        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = format!("layer.{l}");
            let heads = 0..c.heads;
            layers.push(LayerWeights {
                wq: heads.clone().map(|h| mat(&format!("{p}.attn.wq.{h}"), [c.d_k, d])).collect::<Result<_>>()?,
                wk: heads.clone().map(|h| mat(&format!("{p}.attn.wk.{h}"), [c.d_k, d])).collect::<Result<_>>()?,
                wv: heads.clone().map(|h| mat(&format!("{p}.attn.wv.{h}"), [c.d_v, d])).collect::<Result<_>>()?,
                bq: heads.clone().map(|h| opt_vec(&format!("{p}.attn.bq.{h}"), c.d_k)).collect::<Result<_>>()?,
                bk: heads.clone().map(|h| opt_vec(&format!("{p}.attn.bk.{h}"), c.d_k)).collect::<Result<_>>()?,
                bv: heads.map(|h| opt_vec(&format!("{p}.attn.bv.{h}"), c.d_v)).collect::<Result<_>>()?,
                wmh: mat(&format!("{p}.attn.wmh"), [d, c.heads * c.d_v])?,
                bmh: opt_vec(&format!("{p}.attn.bmh"), d)?,
                attn_norm_gain: vec(&format!("{p}.attn.norm.gain"), d)?,
                attn_norm_bias: vec(&format!("{p}.attn.norm.bias"), d)?,
                ff1: mat(&format!("{p}.ffn.w1"), [c.d_ff, d])?,
                ff1_bias: vec(&format!("{p}.ffn.b1"), c.d_ff)?,
                ff2: mat(&format!("{p}.ffn.w2"), [d, c.d_ff])?,
                ff2_bias: vec(&format!("{p}.ffn.b2"), d)?,
                ffn_norm_gain: vec(&format!("{p}.ffn.norm.gain"), d)?,
                ffn_norm_bias: vec(&format!("{p}.ffn.norm.bias"), d)?,
            });
        }
        Ok(Self {
            token_embeddings: mat("embeddings.token", [c.vocab_size, d])?,
            position_embeddings: mat("embeddings.position", [c.max_positions, d])?,
            segment_embeddings: mat("embeddings.segment", [2, d])?,
            embed_norm_gain: vec("embeddings.norm.gain", d)?,
            embed_norm_bias: vec("embeddings.norm.bias", d)?,
            layers,
            config,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(&NamedTensorStore::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_store()?.save(path)
    }
}
