use super::{EncoderWeights, HiddenStack, LayerWeights, TokenizedInput};
use crate::error::{Error, Result};
use crate::tensor::{self, affine, layer_norm, relu, softmax, Tensor, LAYER_NORM_EPS};

/// Attention weights `softmax(rho * K q)`; `keys` holds one key per row.
pub fn attention_weights(q: &[f32], keys: &Tensor, rho: f32) -> Result<Vec<f32>> {
    if keys.rank() != 2 || keys.cols() != q.len() {
        return Err(Error::shape(format!(
            "query of length {} against keys {:?}",
            q.len(),
            keys.shape()
        )));
    }
    let logits: Vec<f32> = (0..keys.rows())
        .map(|i| (rho as f64 * tensor::dot(keys.row(i), q)) as f32)
        .collect();
    softmax(&logits)
}

/// Weighted sum of value rows, weighted by [`attention_weights`].
pub fn attention(q: &[f32], keys: &Tensor, values: &Tensor, rho: f32) -> Result<Vec<f32>> {
    if keys.rank() != 2 || values.rank() != 2 || keys.rows() != values.rows() {
        return Err(Error::shape(format!(
            "keys {:?} and values {:?} disagree on count",
            keys.shape(),
            values.shape()
        )));
    }
    let alpha = attention_weights(q, keys, rho)?;
    Ok(weighted_rows(&alpha, values))
}

fn weighted_rows(alpha: &[f32], values: &Tensor) -> Vec<f32> {
    let mut acc = vec![0.0f64; values.cols()];
    for (i, &a) in alpha.iter().enumerate() {
        for (o, &v) in acc.iter_mut().zip(values.row(i)) {
            *o += a as f64 * v as f64;
        }
    }
    acc.into_iter().map(|x| x as f32).collect()
}

/// Projects every row of `x` by `w` and adds `b`.
fn project_rows(x: &Tensor, w: &Tensor, b: &[f32]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.rows() * w.rows());
    for i in 0..x.rows() {
        data.extend(affine(w, x.row(i), b)?);
    }
    Tensor::new(vec![x.rows(), w.rows()], data)
}

struct HeadProjections {
    keys: Vec<Tensor>,
    values: Vec<Tensor>,
}

impl LayerWeights {
    fn project_heads(&self, keys: &Tensor, values: &Tensor) -> Result<HeadProjections> {
        let heads = self.wq.len();
        Ok(HeadProjections {
            keys: (0..heads)
                .map(|h| project_rows(keys, &self.wk[h], &self.bk[h]))
                .collect::<Result<_>>()?,
            values: (0..heads)
                .map(|h| project_rows(values, &self.wv[h], &self.bv[h]))
                .collect::<Result<_>>()?,
        })
    }

    fn attend(
        &self,
        q: &[f32],
        proj: &HeadProjections,
        rho: f32,
        mut observe: impl FnMut(usize, &[f32]),
    ) -> Result<Vec<f32>> {
        let mut concat = Vec::new();
        for h in 0..self.wq.len() {
            let qh = affine(&self.wq[h], q, &self.bq[h])?;
            let alpha = attention_weights(&qh, &proj.keys[h], rho)?;
            observe(h, &alpha);
            concat.extend(weighted_rows(&alpha, &proj.values[h]));
        }
        affine(&self.wmh, &concat, &self.bmh)
    }
}

/// Multi-head attention for one query against `keys`/`values` given as one
/// `d_model` vector per row.
pub fn multi_head(
    q: &[f32],
    keys: &Tensor,
    values: &Tensor,
    rho: f32,
    layer: &LayerWeights,
) -> Result<Vec<f32>> {
    if keys.rows() != values.rows() {
        return Err(Error::shape("keys and values disagree on count"));
    }
    let proj = layer.project_heads(keys, values)?;
    layer.attend(q, &proj, rho, |_, _| {})
}

/// Position-wise feed-forward block `W2 relu(W1 u + b1) + b2`.
pub fn ffnn(u: &[f32], layer: &LayerWeights) -> Result<Vec<f32>> {
    let mut inner = affine(&layer.ff1, u, &layer.ff1_bias)?;
    inner.iter_mut().for_each(|x| *x = relu(*x));
    affine(&layer.ff2, &inner, &layer.ff2_bias)
}

/// Per-layer, per-head, per-position attention distributions observed
/// during a forward pass: `weights[layer][head][position]`.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub weights: Vec<Vec<Vec<Vec<f32>>>>,
}

pub fn encode(input: &TokenizedInput, weights: &EncoderWeights) -> Result<HiddenStack> {
    encode_inner(input, weights, None)
}

/// Like [`encode`], also returning every attention distribution.
pub fn encode_traced(
    input: &TokenizedInput,
    weights: &EncoderWeights,
) -> Result<(HiddenStack, AttentionTrace)> {
    let mut trace = AttentionTrace::default();
    let stack = encode_inner(input, weights, Some(&mut trace))?;
    Ok((stack, trace))
}

fn encode_inner(
    input: &TokenizedInput,
    weights: &EncoderWeights,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<HiddenStack> {
    let c = &weights.config;
    input.validate()?;
    let n = input.len();
    if n > c.max_positions {
        return Err(Error::Overlong {
            pieces: n,
            max: c.max_positions,
            excess: n - c.max_positions,
        });
    }
    if let Some(&bad) = input.pieces.iter().find(|&&p| p as usize >= c.vocab_size) {
        return Err(Error::ConfigMismatch(format!(
            "piece id {bad} outside encoder vocabulary of {}",
            c.vocab_size
        )));
    }
    let d = c.d_model;
    let rho = c.rho();

    let mut rows = Vec::with_capacity(n * d);
    for (pos, (&piece, &seg)) in input.pieces.iter().zip(&input.segments).enumerate() {
        let tok = weights.token_embeddings.row(piece as usize);
        let p = weights.position_embeddings.row(pos);
        let s = weights.segment_embeddings.row(seg as usize);
        let sum: Vec<f32> = (0..d).map(|j| tok[j] + p[j] + s[j]).collect();
        rows.extend(layer_norm(&sum, &weights.embed_norm_gain, &weights.embed_norm_bias, LAYER_NORM_EPS)?);
    }
    let mut hidden = Tensor::new(vec![n, d], rows)?;
    let mut pooled_layers = Vec::with_capacity(c.layers * input.focus.len() * d);
    let embeddings = pool(&hidden, input)?;

    for layer in &weights.layers {
        let proj = layer.project_heads(&hidden, &hidden)?;
        let mut layer_trace = vec![Vec::with_capacity(n); c.heads];
        let mut next = Vec::with_capacity(n * d);
        for pos in 0..n {
            let h_prev = hidden.row(pos);
            let chi = layer.attend(h_prev, &proj, rho, |head, alpha| {
                if trace.is_some() {
                    layer_trace[head].push(alpha.to_vec());
                }
            })?;
            let resid: Vec<f32> = chi.iter().zip(h_prev).map(|(a, b)| a + b).collect();
            let f = layer_norm(&resid, &layer.attn_norm_gain, &layer.attn_norm_bias, LAYER_NORM_EPS)?;
            let ff = ffnn(&f, layer)?;
            let resid: Vec<f32> = ff.iter().zip(&f).map(|(a, b)| a + b).collect();
            next.extend(layer_norm(&resid, &layer.ffn_norm_gain, &layer.ffn_norm_bias, LAYER_NORM_EPS)?);
        }
        hidden = Tensor::new(vec![n, d], next)?;
        pooled_layers.extend_from_slice(pool(&hidden, input)?.data());
        if let Some(t) = trace.as_deref_mut() {
            t.weights.push(layer_trace);
        }
    }

    let layers = Tensor::new(vec![c.layers, input.focus.len(), d], pooled_layers)?;
    HiddenStack::new(layers, embeddings)
}

/// Mean of piece vectors for each focus word.
fn pool(hidden: &Tensor, input: &TokenizedInput) -> Result<Tensor> {
    let d = hidden.cols();
    let mut out = Vec::with_capacity(input.focus.len() * d);
    for span in &input.word_spans[input.focus.clone()] {
        let mut acc = vec![0.0f64; d];
        for p in span.clone() {
            for (a, &v) in acc.iter_mut().zip(hidden.row(p)) {
                *a += v as f64;
            }
        }
        let k = span.len() as f64;
        out.extend(acc.into_iter().map(|a| (a / k) as f32));
    }
    Tensor::new(vec![input.focus.len(), d], out)
}
