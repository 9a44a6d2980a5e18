//! Dense f32 numerics used by the encoder and the disambiguation heads.
//!
//! Storage is f32, row-major. Reductions (dot products, softmax sums,
//! layer-norm moments) accumulate in f64 with a fixed loop order, so every
//! op here is bit-reproducible for identical inputs. Non-finite values are
//! reported as [`Error::NonFinite`] rather than propagated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the encoder.
pub const LAYER_NORM_EPS: f32 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        ensure_finite(&data, "tensor construction")?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Columns of a rank-2 tensor (product of trailing dims for higher ranks).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "{what}: expected {:?}, found {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.data, what)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `A^T` of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape("transpose needs a matrix"));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }
}

pub fn ensure_finite(values: &[f32], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

/// Numerically stable softmax with max subtraction.
pub fn softmax(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax of an empty vector".into()));
    }
    ensure_finite(v, "softmax input")?;
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = v.iter().map(|&x| (x as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| (e / sum) as f32).collect())
}

/// Softmax returning f64 probabilities; used where losses need full precision.
pub fn softmax_f64(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / sum).collect())
}

pub fn layer_norm(v: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Result<Vec<f32>> {
    if v.len() != gain.len() || v.len() != bias.len() {
        return Err(Error::shape(format!(
            "layer_norm lengths {} / {} / {}",
            v.len(),
            gain.len(),
            bias.len()
        )));
    }
    if v.is_empty() {
        return Err(Error::Empty("layer_norm of an empty vector".into()));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    ensure_finite(v, "layer_norm input")?;
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps as f64).sqrt();
    let out: Vec<f32> = v
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&x, (&g, &b))| ((x as f64 - mean) * inv * g as f64 + b as f64) as f32)
        .collect();
    ensure_finite(&out, "layer_norm output")?;
    Ok(out)
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

pub fn sigmoid(x: f32) -> f32 {
    let x = x as f64;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s as f32
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape("matmul operands must be matrices"));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions {k} vs {k2}"
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a.data[i * k + p] as f64 * b.data[p * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    ensure_finite(&out, "matmul output")?;
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `W x` for a rank-2 `W`.
pub fn matvec(w: &Tensor, x: &[f32]) -> Result<Vec<f32>> {
    if w.rank() != 2 || w.shape[1] != x.len() {
        return Err(Error::shape(format!(
            "matvec {:?} by vector of length {}",
            w.shape,
            x.len()
        )));
    }
    let out: Vec<f32> = (0..w.shape[0]).map(|i| dot(w.row(i), x) as f32).collect();
    ensure_finite(&out, "matvec output")?;
    Ok(out)
}

/// `W^T y` for a rank-2 `W`.
pub fn matvec_transposed(w: &Tensor, y: &[f32]) -> Result<Vec<f32>> {
    if w.rank() != 2 || w.shape[0] != y.len() {
        return Err(Error::shape(format!(
            "transposed matvec {:?} by vector of length {}",
            w.shape,
            y.len()
        )));
    }
    let cols = w.shape[1];
    let mut acc = vec![0.0f64; cols];
    for (i, &yi) in y.iter().enumerate() {
        for (a, &wij) in acc.iter_mut().zip(w.row(i)) {
            *a += wij as f64 * yi as f64;
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// `W x + b`.
pub fn affine(w: &Tensor, x: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    let mut out = matvec(w, x)?;
    if b.len() != out.len() {
        return Err(Error::shape("affine bias length"));
    }
    out.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
    Ok(out)
}

/// Accumulates `dy x^T` into `dw`.
pub fn outer_accumulate(dw: &mut Tensor, dy: &[f32], x: &[f32]) -> Result<()> {
    if dw.shape() != [dy.len(), x.len()] {
        return Err(Error::shape("outer product accumulator"));
    }
    for (i, &d) in dy.iter().enumerate() {
        for (g, &xj) in dw.row_mut(i).iter_mut().zip(x) {
            *g += d * xj;
        }
    }
    Ok(())
}

/// Backward of `y = W x`: accumulates `dL/dW` into `dw` and returns `dL/dx`.
pub fn matvec_backward(w: &Tensor, x: &[f32], dy: &[f32], dw: &mut Tensor) -> Result<Vec<f32>> {
    outer_accumulate(dw, dy, x)?;
    matvec_transposed(w, dy)
}

/// Backward through `p = softmax(z)`: returns `dL/dz` given `dL/dp`.
pub fn softmax_backward(p: &[f32], dp: &[f32]) -> Vec<f32> {
    let inner = dot(p, dp);
    p.iter()
        .zip(dp)
        .map(|(&pi, &dpi)| (pi as f64 * (dpi as f64 - inner)) as f32)
        .collect()
}

/// Gradient of `-log softmax(z)[gold]` with respect to `z`: `p - onehot(gold)`.
pub fn softmax_nll_backward(p: &[f32], gold: usize) -> Vec<f32> {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| if i == gold { pi - 1.0 } else { pi })
        .collect()
}

/// Named gradients, one tensor per trainable parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    entries: BTreeMap<String, Tensor>,
}

impl Gradient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` into the entry for `name`, creating it when absent.
    pub fn accumulate(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(existing) => existing.add_assign(&value),
            None => {
                self.entries.insert(name.to_string(), value);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UntrackedParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: Gradient) -> Result<()> {
        for (k, v) in other.entries {
            self.accumulate(&k, v)?;
        }
        Ok(())
    }

    pub fn is_all_zero(&self) -> bool {
        self.entries.values().all(|t| t.data().iter().all(|&x| x == 0.0))
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in &self.entries {
            v.check_finite(&format!("gradient of {k}"))?;
        }
        Ok(())
    }
}
