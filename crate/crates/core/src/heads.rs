//! Disambiguation heads over per-word hidden stacks.
//!
//! Inputs to every head are the `[L, d_model]` layer vectors of one target
//! word (see [`crate::encoder::HiddenStack::position`]). Variants:
//!
//! * `1nn`: cosine nearest neighbor over training vectors of the last layer.
//! * `simple`: `softmax(W h^L + b)` with per-lexelt `W`, `b`.
//! * `lw`: the projected vector is an attention-pooled sum of all layers,
//!   with query `m` and keys `W^s h^l` (scale 1).
//! * `glu`: the projected vector is `(h + W^h h + b^h) ⊙ σ(W^g h + b^g)`.
//! * `glu-lw`: layer weighting first, then the GLU on the pooled vector.
//!
//! Layer-attention and GLU parameters are shared by all lexelts; only the
//! output projection is per lexelt.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{most_frequent_sense, Lexelt, SenseInventory};
use crate::error::{Error, Result};
use crate::store::NamedTensorStore;
use crate::tensor::{
    self, affine, cosine, matvec, matvec_transposed, outer_accumulate, sigmoid, softmax, softmax_nll_backward,
    Gradient, Tensor,
};

/// Range of the seeded uniform initialization for shared head parameters.
pub const INIT_RANGE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "1nn")]
    Knn,
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "lw")]
    Lw,
    #[serde(rename = "glu")]
    Glu,
    #[serde(rename = "glu-lw")]
    GluLw,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Knn, Variant::Simple, Variant::Lw, Variant::Glu, Variant::GluLw];
    pub const TRAINABLE: [Variant; 4] = [Variant::Simple, Variant::Lw, Variant::Glu, Variant::GluLw];

    pub fn uses_layer_weighting(self) -> bool {
        matches!(self, Variant::Lw | Variant::GluLw)
    }

    pub fn uses_glu(self) -> bool {
        matches!(self, Variant::Glu | Variant::GluLw)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Knn => "1nn",
            Variant::Simple => "simple",
            Variant::Lw => "lw",
            Variant::Glu => "glu",
            Variant::GluLw => "glu-lw",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected 1nn, simple, lw, glu, glu-lw)")))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn last_layer(features: &Tensor) -> Result<&[f32]> {
    if features.rank() != 2 || features.rows() == 0 {
        return Err(Error::Empty("head input needs at least one layer".into()));
    }
    Ok(features.row(features.rows() - 1))
}

// ---------------------------------------------------------------------------
// 1-nn

#[derive(Clone, Debug, PartialEq)]
pub struct KnnEntry {
    pub vector: Vec<f32>,
    pub sense: String,
    pub instance: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnIndex {
    d_model: usize,
    entries: BTreeMap<Lexelt, Vec<KnnEntry>>,
}

impl KnnIndex {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            entries: BTreeMap::new(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn insert(&mut self, lexelt: Lexelt, vector: Vec<f32>, sense: String, instance: String) -> Result<()> {
        if vector.len() != self.d_model {
            return Err(Error::shape(format!(
                "knn vector of length {} in a d_model={} index",
                vector.len(),
                self.d_model
            )));
        }
        tensor::ensure_finite(&vector, "knn vector")?;
        self.entries.entry(lexelt).or_default().push(KnnEntry { vector, sense, instance });
        Ok(())
    }

    pub fn entries(&self, lexelt: &Lexelt) -> Option<&[KnnEntry]> {
        self.entries.get(lexelt).map(Vec::as_slice)
    }

    pub fn lexelts(&self) -> impl Iterator<Item = &Lexelt> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sense of the stored vector with the highest cosine similarity to `h`.
/// Ties go to the earliest inserted entry; a zero vector on either side
/// scores −1.
pub fn knn_predict<'a>(h: &[f32], index: &'a KnnIndex, lexelt: &Lexelt) -> Result<&'a KnnEntry> {
    let entries = index
        .entries(lexelt)
        .filter(|e| !e.is_empty())
        .ok_or_else(|| Error::UnseenLexelt(lexelt.to_string()))?;
    if h.len() != index.d_model {
        return Err(Error::shape("knn query length differs from index d_model"));
    }
    tensor::ensure_finite(h, "knn query")?;
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let sim = cosine(h, &e.vector).unwrap_or(-1.0);
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    Ok(&entries[best])
}

// ---------------------------------------------------------------------------
// parametric heads

#[derive(Clone, Debug, PartialEq)]
pub struct LexeltProjection {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-lexelt affine projections onto sense logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub d_model: usize,
    pub projections: BTreeMap<Lexelt, LexeltProjection>,
}

impl LinearHead {
    /// Zero-initialized projections for every lexelt in the inventory.
    pub fn zeros(inventory: &SenseInventory, d_model: usize) -> Self {
        let projections = inventory
            .iter()
            .filter(|(_, e)| !e.is_empty())
            .map(|(lx, e)| {
                (
                    lx.clone(),
                    LexeltProjection {
                        weight: Tensor::zeros(vec![e.len(), d_model]),
                        bias: Tensor::zeros(vec![e.len()]),
                    },
                )
            })
            .collect();
        Self { d_model, projections }
    }

    pub fn get(&self, lexelt: &Lexelt) -> Result<&LexeltProjection> {
        self.projections
            .get(lexelt)
            .ok_or_else(|| Error::UnseenLexelt(lexelt.to_string()))
    }
}

fn logits(h: &[f32], head: &LinearHead, lexelt: &Lexelt) -> Result<Vec<f32>> {
    let p = head.get(lexelt)?;
    affine(&p.weight, h, p.bias.data())
}

/// Sense distribution `softmax(W h + b)` for the lexelt.
pub fn project(h: &[f32], head: &LinearHead, lexelt: &Lexelt) -> Result<Vec<f32>> {
    softmax(&logits(h, head, lexelt)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    /// Query vector `m`, length `d_model`.
    pub query: Tensor,
    /// Key projection `W^s`, `d_model × d_model`.
    pub key_proj: Tensor,
}

impl LayerAttention {
    pub fn zeros(d: usize) -> Self {
        Self {
            query: Tensor::zeros(vec![d]),
            key_proj: Tensor::zeros(vec![d, d]),
        }
    }
}

struct LayerWeighting {
    keys: Vec<Vec<f32>>,
    alpha: Vec<f32>,
    output: Vec<f32>,
}

fn layer_weighting(layers: &Tensor, att: &LayerAttention) -> Result<LayerWeighting> {
    if layers.rank() != 2 || layers.rows() == 0 {
        return Err(Error::Empty("layer weighting needs at least one layer".into()));
    }
    let d = layers.cols();
    if att.query.len() != d {
        return Err(Error::shape("layer attention query length"));
    }
    let keys: Vec<Vec<f32>> = (0..layers.rows())
        .map(|l| matvec(&att.key_proj, layers.row(l)))
        .collect::<Result<_>>()?;
    let scores: Vec<f32> = keys.iter().map(|k| tensor::dot(k, att.query.data()) as f32).collect();
    let alpha = softmax(&scores)?;
    let mut acc = vec![0.0f64; d];
    for (l, &a) in alpha.iter().enumerate() {
        for (o, &v) in acc.iter_mut().zip(layers.row(l)) {
            *o += a as f64 * v as f64;
        }
    }
    Ok(LayerWeighting {
        keys,
        alpha,
        output: acc.into_iter().map(|x| x as f32).collect(),
    })
}

/// Attention-weighted sum of the `[L, d]` layer vectors.
pub fn layer_weighted(layers: &Tensor, att: &LayerAttention) -> Result<Vec<f32>> {
    Ok(layer_weighting(layers, att)?.output)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluParams {
    pub wh: Tensor,
    pub bh: Tensor,
    pub wg: Tensor,
    pub bg: Tensor,
}

impl GluParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            wh: Tensor::zeros(vec![d, d]),
            bh: Tensor::zeros(vec![d]),
            wg: Tensor::zeros(vec![d, d]),
            bg: Tensor::zeros(vec![d]),
        }
    }
}

struct GluCache {
    input: Vec<f32>,
    transformed: Vec<f32>,
    gate: Vec<f32>,
    output: Vec<f32>,
}

fn glu_cached(h: &[f32], p: &GluParams) -> Result<GluCache> {
    let lin = affine(&p.wh, h, p.bh.data())?;
    if lin.len() != h.len() {
        return Err(Error::shape("GLU projections must be square"));
    }
    let transformed: Vec<f32> = h.iter().zip(&lin).map(|(a, b)| a + b).collect();
    let gate: Vec<f32> = affine(&p.wg, h, p.bg.data())?.into_iter().map(sigmoid).collect();
    if gate.len() != h.len() {
        return Err(Error::shape("GLU projections must be square"));
    }
    let output = transformed.iter().zip(&gate).map(|(a, g)| a * g).collect();
    Ok(GluCache {
        input: h.to_vec(),
        transformed,
        gate,
        output,
    })
}

/// Gated linear unit `(h + W^h h + b^h) ⊙ σ(W^g h + b^g)`.
pub fn glu(h: &[f32], p: &GluParams) -> Result<Vec<f32>> {
    Ok(glu_cached(h, p)?.output)
}

/// A trainable head: shared layer-attention/GLU parameters plus per-lexelt
/// projections.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricHead {
    pub variant: Variant,
    pub linear: LinearHead,
    pub layer_attention: Option<LayerAttention>,
    pub glu: Option<GluParams>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
    Tensor::new(shape, data).expect("finite draws")
}

impl ParametricHead {
    /// Zero per-lexelt projections; `m`, `W^s`, `W^h`, `W^g` drawn from a
    /// seeded uniform(−0.05, 0.05); GLU biases zero.
    pub fn init(variant: Variant, inventory: &SenseInventory, d_model: usize, seed: u64) -> Result<Self> {
        if variant == Variant::Knn {
            return Err(Error::invalid("1nn has no trainable parameters"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_attention = variant.uses_layer_weighting().then(|| LayerAttention {
            query: uniform(&mut rng, vec![d_model]),
            key_proj: uniform(&mut rng, vec![d_model, d_model]),
        });
        let glu = variant.uses_glu().then(|| GluParams {
            wh: uniform(&mut rng, vec![d_model, d_model]),
            bh: Tensor::zeros(vec![d_model]),
            wg: uniform(&mut rng, vec![d_model, d_model]),
            bg: Tensor::zeros(vec![d_model]),
        });
        Ok(Self {
            variant,
            linear: LinearHead::zeros(inventory, d_model),
            layer_attention,
            glu,
        })
    }

    pub fn d_model(&self) -> usize {
        self.linear.d_model
    }

    /// The vector fed to the per-lexelt projection.
    pub fn represent(&self, features: &Tensor) -> Result<Vec<f32>> {
        let pooled = match &self.layer_attention {
            Some(att) => layer_weighted(features, att)?,
            None => last_layer(features)?.to_vec(),
        };
        match &self.glu {
            Some(p) => glu(&pooled, p),
            None => Ok(pooled),
        }
    }

    pub fn distribution(&self, features: &Tensor, lexelt: &Lexelt) -> Result<Vec<f32>> {
        project(&self.represent(features)?, &self.linear, lexelt)
    }

    /// Forward pass that records the intermediates needed by
    /// [`HeadTape::backward`].
    pub fn forward_recorded(&self, features: &Tensor, lexelt: &Lexelt) -> Result<HeadTape> {
        let lw = self
            .layer_attention
            .as_ref()
            .map(|att| layer_weighting(features, att))
            .transpose()?;
        let pooled = match &lw {
            Some(w) => w.output.clone(),
            None => last_layer(features)?.to_vec(),
        };
        let glu = self.glu.as_ref().map(|p| glu_cached(&pooled, p)).transpose()?;
        let rep = glu.as_ref().map_or_else(|| pooled.clone(), |g| g.output.clone());
        let z = logits(&rep, &self.linear, lexelt)?;
        let probs = softmax(&z)?;
        Ok(HeadTape {
            lexelt: lexelt.clone(),
            features: features.clone(),
            lw,
            glu,
            rep,
            logits: z,
            probs,
        })
    }

    /// NLL of `gold` (a sense index) and its gradient for one instance.
    pub fn loss_and_gradient(&self, features: &Tensor, lexelt: &Lexelt, gold: usize) -> Result<(f64, Gradient)> {
        let tape = self.forward_recorded(features, lexelt)?;
        let loss = tape.nll(gold)?;
        let seed = softmax_nll_backward(&tape.probs, gold);
        Ok((loss, tape.backward(self, &seed)?))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    /// All trainable tensors by name.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(att) = &self.layer_attention {
            out.push((PARAM_LW_QUERY.to_string(), &att.query));
            out.push((PARAM_LW_KEYS.to_string(), &att.key_proj));
        }
        if let Some(g) = &self.glu {
            out.push((PARAM_GLU_WH.to_string(), &g.wh));
            out.push((PARAM_GLU_BH.to_string(), &g.bh));
            out.push((PARAM_GLU_WG.to_string(), &g.wg));
            out.push((PARAM_GLU_BG.to_string(), &g.bg));
        }
        for (lx, p) in &self.linear.projections {
            out.push((proj_weight_name(lx), &p.weight));
            out.push((proj_bias_name(lx), &p.bias));
        }
        out
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let missing = || Error::UntrackedParameter(name.to_string());
        match name {
            PARAM_LW_QUERY => self.layer_attention.as_mut().map(|a| &mut a.query).ok_or_else(missing),
            PARAM_LW_KEYS => self.layer_attention.as_mut().map(|a| &mut a.key_proj).ok_or_else(missing),
            PARAM_GLU_WH => self.glu.as_mut().map(|g| &mut g.wh).ok_or_else(missing),
            PARAM_GLU_BH => self.glu.as_mut().map(|g| &mut g.bh).ok_or_else(missing),
            PARAM_GLU_WG => self.glu.as_mut().map(|g| &mut g.wg).ok_or_else(missing),
            PARAM_GLU_BG => self.glu.as_mut().map(|g| &mut g.bg).ok_or_else(missing),
            _ => {
                let (lexelt_name, is_weight) = if let Some(rest) = name.strip_prefix("proj.") {
                    if let Some(lx) = rest.strip_suffix(".weight") {
                        (lx, true)
                    } else if let Some(lx) = rest.strip_suffix(".bias") {
                        (lx, false)
                    } else {
                        return Err(missing());
                    }
                } else {
                    return Err(missing());
                };
                let p = self
                    .linear
                    .projections
                    .iter_mut()
                    .find(|(lx, _)| lx.to_string() == lexelt_name)
                    .map(|(_, p)| p)
                    .ok_or_else(missing)?;
                Ok(if is_weight { &mut p.weight } else { &mut p.bias })
            }
        }
    }
}

pub const PARAM_LW_QUERY: &str = "lw.m";
pub const PARAM_LW_KEYS: &str = "lw.ws";
pub const PARAM_GLU_WH: &str = "glu.wh";
pub const PARAM_GLU_BH: &str = "glu.bh";
pub const PARAM_GLU_WG: &str = "glu.wg";
pub const PARAM_GLU_BG: &str = "glu.bg";

pub fn proj_weight_name(lexelt: &Lexelt) -> String {
    format!("proj.{lexelt}.weight")
}

pub fn proj_bias_name(lexelt: &Lexelt) -> String {
    format!("proj.{lexelt}.bias")
}

/// Recorded forward pass of a parametric head.
pub struct HeadTape {
    lexelt: Lexelt,
    features: Tensor,
    lw: Option<LayerWeighting>,
    glu: Option<GluCache>,
    rep: Vec<f32>,
    logits: Vec<f32>,
    pub probs: Vec<f32>,
}

impl HeadTape {
    /// `-log p(gold)`, computed from the logits in f64.
    pub fn nll(&self, gold: usize) -> Result<f64> {
        if gold >= self.logits.len() {
            return Err(Error::invalid(format!(
                "gold index {gold} outside {} senses",
                self.logits.len()
            )));
        }
        let max = self.logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = self.logits.iter().map(|&z| (z as f64 - max).exp()).sum::<f64>().ln() + max;
        Ok(lse - self.logits[gold] as f64)
    }

    /// Reverse pass from `dL/dlogits` to every parameter touched by the
    /// forward pass. The encoder features receive no gradient.
    pub fn backward(&self, head: &ParametricHead, dlogits: &[f32]) -> Result<Gradient> {
        if dlogits.len() != self.logits.len() {
            return Err(Error::shape("upstream gradient length differs from logits"));
        }
        let mut grad = Gradient::new();
        let proj = head.linear.get(&self.lexelt)?;
        let mut dw = Tensor::zeros(proj.weight.shape().to_vec());
        outer_accumulate(&mut dw, dlogits, &self.rep)?;
        grad.accumulate(&proj_weight_name(&self.lexelt), dw)?;
        grad.accumulate(&proj_bias_name(&self.lexelt), Tensor::vector(dlogits.to_vec())?)?;
        let mut d_rep = matvec_transposed(&proj.weight, dlogits)?;

        if let (Some(cache), Some(p)) = (&self.glu, &head.glu) {
            let d = cache.input.len();
            let d_lin: Vec<f32> = d_rep.iter().zip(&cache.gate).map(|(u, g)| u * g).collect();
            let d_gate_pre: Vec<f32> = d_rep
                .iter()
                .zip(cache.transformed.iter().zip(&cache.gate))
                .map(|(u, (a, g))| u * a * g * (1.0 - g))
                .collect();
            let mut dwh = Tensor::zeros(vec![d, d]);
            outer_accumulate(&mut dwh, &d_lin, &cache.input)?;
            let mut dwg = Tensor::zeros(vec![d, d]);
            outer_accumulate(&mut dwg, &d_gate_pre, &cache.input)?;
            let through_h = matvec_transposed(&p.wh, &d_lin)?;
            let through_g = matvec_transposed(&p.wg, &d_gate_pre)?;
            d_rep = (0..d).map(|j| d_lin[j] + through_h[j] + through_g[j]).collect();
            grad.accumulate(PARAM_GLU_WH, dwh)?;
            grad.accumulate(PARAM_GLU_BH, Tensor::vector(d_lin)?)?;
            grad.accumulate(PARAM_GLU_WG, dwg)?;
            grad.accumulate(PARAM_GLU_BG, Tensor::vector(d_gate_pre)?)?;
        }

        if let (Some(cache), Some(att)) = (&self.lw, &head.layer_attention) {
            let layers = &self.features;
            let d = layers.cols();
            let d_alpha: Vec<f32> = (0..layers.rows())
                .map(|l| tensor::dot(&d_rep, layers.row(l)) as f32)
                .collect();
            let d_scores = tensor::softmax_backward(&cache.alpha, &d_alpha);
            let mut dm = vec![0.0f64; d];
            let mut dws = Tensor::zeros(vec![d, d]);
            for (l, &ds) in d_scores.iter().enumerate() {
                for (acc, &k) in dm.iter_mut().zip(&cache.keys[l]) {
                    *acc += ds as f64 * k as f64;
                }
                let scaled_query: Vec<f32> = att.query.data().iter().map(|&m| ds * m).collect();
                outer_accumulate(&mut dws, &scaled_query, layers.row(l))?;
            }
            grad.accumulate(PARAM_LW_QUERY, Tensor::vector(dm.into_iter().map(|x| x as f32).collect())?)?;
            grad.accumulate(PARAM_LW_KEYS, dws)?;
        }
        grad.check_finite()?;
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// model + prediction

// one per run, so the size gap between variants costs nothing
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum HeadModel {
    Knn(KnnIndex),
    Parametric(ParametricHead),
}

/// Result of running a head on one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Distribution(Vec<f32>),
    Sense(String),
}

impl HeadModel {
    pub fn variant(&self) -> Variant {
        match self {
            HeadModel::Knn(_) => Variant::Knn,
            HeadModel::Parametric(p) => p.variant,
        }
    }

    pub fn d_model(&self) -> usize {
        match self {
            HeadModel::Knn(k) => k.d_model,
            HeadModel::Parametric(p) => p.d_model(),
        }
    }
}

/// Runs the variant's pipeline on the `[L, d_model]` features of one word.
pub fn forward(features: &Tensor, model: &HeadModel, lexelt: &Lexelt) -> Result<HeadOutput> {
    match model {
        HeadModel::Knn(index) => {
            let h = last_layer(features)?;
            Ok(HeadOutput::Sense(knn_predict(h, index, lexelt)?.sense.clone()))
        }
        HeadModel::Parametric(p) => Ok(HeadOutput::Distribution(p.distribution(features, lexelt)?)),
    }
}

/// A system answer for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Sense(String),
    Abstain,
}

impl Answer {
    pub fn sense(&self) -> Option<&str> {
        match self {
            Answer::Sense(s) => Some(s),
            Answer::Abstain => None,
        }
    }
}

/// Predicts with `model`, backing off to the most frequent sense for
/// lexelts the model has never seen and abstaining when that is unknown too.
pub fn predict_with_backoff(
    features: &Tensor,
    model: &HeadModel,
    inventory: &SenseInventory,
    lexelt: &Lexelt,
) -> Result<Answer> {
    match forward(features, model, lexelt) {
        Ok(HeadOutput::Sense(s)) => Ok(Answer::Sense(s)),
        Ok(HeadOutput::Distribution(p)) => {
            let entry = inventory
                .get(lexelt)
                .ok_or_else(|| Error::ConfigMismatch(format!("lexelt {lexelt} missing from inventory")))?;
            let idx = argmax(&p);
            entry
                .senses
                .get(idx)
                .map(|s| Answer::Sense(s.clone()))
                .ok_or_else(|| Error::ConfigMismatch(format!("head and inventory disagree on senses of {lexelt}")))
        }
        Err(Error::UnseenLexelt(_)) => Ok(most_frequent_sense(inventory, lexelt, None)
            .map_or(Answer::Abstain, |s| Answer::Sense(s.to_string()))),
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// checkpoints

pub const MANIFEST_KEY: &str = "head.manifest";

#[derive(Serialize, Deserialize)]
struct HeadManifest {
    variant: Variant,
    d_model: usize,
    inventory_hash: String,
    inventory: SenseInventory,
    /// For 1-nn: per lexelt, the (sense, instance) of each stored row.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    knn_rows: BTreeMap<String, Vec<(String, String)>>,
}

impl HeadModel {
    /// Serializes the model together with the inventory it was trained on.
    pub fn to_store(&self, inventory: &SenseInventory) -> Result<NamedTensorStore> {
        let mut store = NamedTensorStore::new();
        let mut knn_rows = BTreeMap::new();
        match self {
            HeadModel::Knn(index) => {
                for (lx, entries) in &index.entries {
                    let data = entries.iter().flat_map(|e| e.vector.iter().copied()).collect();
                    store.insert(format!("knn.{lx}"), Tensor::new(vec![entries.len(), index.d_model], data)?);
                    knn_rows.insert(
                        lx.to_string(),
                        entries.iter().map(|e| (e.sense.clone(), e.instance.clone())).collect(),
                    );
                }
            }
            HeadModel::Parametric(p) => {
                for (name, t) in p.params() {
                    store.insert(name, t.clone());
                }
            }
        }
        let manifest = HeadManifest {
            variant: self.variant(),
            d_model: self.d_model(),
            inventory_hash: inventory.content_hash(),
            inventory: inventory.clone(),
            knn_rows,
        };
        store.set_metadata(MANIFEST_KEY, serde_json::to_string(&manifest)?);
        Ok(store)
    }

    /// Restores a model and its inventory. When `expected` is given, its
    /// hash must match the one recorded in the checkpoint.
    pub fn from_store(store: &NamedTensorStore, expected: Option<&SenseInventory>) -> Result<(Self, SenseInventory)> {
        let raw = store
            .metadata(MANIFEST_KEY)
            .ok_or_else(|| Error::ConfigMismatch("checkpoint lacks a head manifest".into()))?;
        let manifest: HeadManifest = serde_json::from_str(raw)?;
        if manifest.inventory.content_hash() != manifest.inventory_hash {
            return Err(Error::ConfigMismatch("checkpoint inventory hash is inconsistent".into()));
        }
        if let Some(exp) = expected {
            if exp.content_hash() != manifest.inventory_hash {
                return Err(Error::ConfigMismatch(
                    "checkpoint was trained against a different sense inventory".into(),
                ));
            }
        }
        let d = manifest.d_model;
        let inventory = manifest.inventory;
        let model = match manifest.variant {
            Variant::Knn => {
                let mut index = KnnIndex::new(d);
                let by_name: BTreeMap<String, &Lexelt> = inventory.iter().map(|(lx, _)| (lx.to_string(), lx)).collect();
                for (name, rows) in &manifest.knn_rows {
                    let lexelt = by_name
                        .get(name)
                        .map(|lx| (*lx).clone())
                        .ok_or_else(|| Error::ConfigMismatch(format!("knn lexelt {name} not in inventory")))?;
                    let t = store.get(&format!("knn.{name}"))?;
                    t.expect_shape(&[rows.len(), d], name)?;
                    for (i, (sense, inst)) in rows.iter().enumerate() {
                        index.insert(lexelt.clone(), t.row(i).to_vec(), sense.clone(), inst.clone())?;
                    }
                }
                HeadModel::Knn(index)
            }
            variant => {
                let mut head = ParametricHead::init(variant, &inventory, d, 0)?;
                for name in head.param_names() {
                    let t = store.get(&name).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
                    let slot = head.param_mut(&name)?;
                    t.expect_shape(slot.shape(), &name)?;
                    *slot = t.clone();
                }
                HeadModel::Parametric(head)
            }
        };
        Ok((model, inventory))
    }
}
