//! Independent reference implementations used as test oracles, plus
//! fixture builders shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ctxwsd::corpus::{Instance, Lexelt, SenseEntry, SenseInventory};
use ctxwsd::encoder::ContextMode;
use ctxwsd::features::{featurize, FeatureMap};
use ctxwsd::heads::{KnnEntry, ParametricHead, Variant};
use ctxwsd::synth::{self, SynthConfig, SynthCorpus};
use ctxwsd::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// oracles

/// Head parameters widened to f64, keyed like [`ParametricHead::params`].
pub type Params64 = BTreeMap<String, Vec<f64>>;

pub fn widen(head: &ParametricHead) -> Params64 {
    head.params()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|&x| x as f64).collect()))
        .collect()
}

fn matvec64(w: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks(x.len()).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// NLL of `gold` under the head, recomputed from scratch in f64. Written
/// directly from the model equations without sharing any library code.
pub fn reference_loss(variant: Variant, p: &Params64, layers: &[Vec<f64>], lexelt: &Lexelt, gold: usize) -> f64 {
    let d = layers[0].len();
    let pooled: Vec<f64> = if variant.uses_layer_weighting() {
        let m = &p["lw.m"];
        let ws = &p["lw.ws"];
        let scores: Vec<f64> = layers
            .iter()
            .map(|h| matvec64(ws, h).iter().zip(m).map(|(k, q)| k * q).sum())
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        (0..d)
            .map(|j| layers.iter().zip(&e).map(|(h, a)| a / z * h[j]).sum())
            .collect()
    } else {
        layers.last().unwrap().clone()
    };
    let rep: Vec<f64> = if variant.uses_glu() {
        let lin = matvec64(&p["glu.wh"], &pooled);
        let gate = matvec64(&p["glu.wg"], &pooled);
        (0..d)
            .map(|j| (pooled[j] + lin[j] + p["glu.bh"][j]) * sigmoid64(gate[j] + p["glu.bg"][j]))
            .collect()
    } else {
        pooled
    };
    let w = &p[&format!("proj.{lexelt}.weight")];
    let b = &p[&format!("proj.{lexelt}.bias")];
    let logits: Vec<f64> = matvec64(w, &rep).iter().zip(b).map(|(z, b)| z + b).collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

/// Exhaustive cosine scan: zero vectors score −1, the first maximum wins.
pub fn brute_force_nn<'a>(query: &[f32], entries: &'a [KnnEntry]) -> &'a KnnEntry {
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nq = norm(query);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, e) in entries.iter().enumerate() {
        let ne = norm(&e.vector);
        let s = if nq == 0.0 || ne == 0.0 {
            -1.0
        } else {
            e.vector.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / (nq * ne)
        };
        if s > best.0 {
            best = (s, i);
        }
    }
    &entries[best.1]
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Exact one-sided bootstrap p-value for a paired comparison on `n` fully
/// answered instances where the better system alone is right on `plus`,
/// the other alone on `minus`, and the rest are ties. A resample of size n
/// draws each category with probability count/n; enumerating the
/// trinomial gives P(plus draws ≤ minus draws).
pub fn exact_bootstrap_p(n: usize, plus: usize, minus: usize) -> f64 {
    let (pp, pm) = (plus as f64 / n as f64, minus as f64 / n as f64);
    let pt = 1.0 - pp - pm;
    let mut p = 0.0;
    for a in 0..=n {
        for b in a..=n - a {
            let c = n - a - b;
            let ln = ln_factorial(n) - ln_factorial(a) - ln_factorial(b) - ln_factorial(c);
            let term = ln + a as f64 * pp.ln() + b as f64 * pm.ln() + c as f64 * pt.ln();
            p += term.exp();
        }
    }
    p
}

// ---------------------------------------------------------------------------
// fixtures

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// An inventory with one lexelt `w.n` of `senses` senses.
pub fn single_lexelt_inventory(senses: usize) -> (Lexelt, SenseInventory) {
    let lx = Lexelt::new("w", Some("n"));
    let mut inv = SenseInventory::default();
    inv.insert(
        lx.clone(),
        SenseEntry {
            senses: (0..senses).map(|s| format!("w%{s}")).collect(),
            counts: vec![1; senses],
        },
    );
    (lx, inv)
}

/// Sentence-level instance with one gold sense.
pub fn instance(id: &str, words: &[&str], target: usize, lexelt: &Lexelt, sense: &str) -> Instance {
    Instance {
        id: id.into(),
        words: words.iter().map(|w| w.to_string()).collect(),
        target_index: target,
        lexelt: lexelt.clone(),
        gold_senses: vec![sense.into()],
        left: None,
        right: None,
        genre: None,
        sentence: None,
    }
}

pub struct Synthetic {
    pub config: SynthConfig,
    pub corpus: SynthCorpus,
    pub features: FeatureMap,
}

/// Synthetic corpus with features from the toy encoder.
pub fn synthetic(config: SynthConfig, encoder_seed: u64, mode: ContextMode) -> Synthetic {
    let corpus = synth::generate(&config).unwrap();
    let tok = synth::tokenizer(&config).unwrap();
    let weights = synth::toy_encoder(&config, encoder_seed).unwrap();
    let features = featurize(&corpus.all(), &tok, &weights, mode).unwrap();
    Synthetic { config, corpus, features }
}

pub fn small_synthetic() -> Synthetic {
    synthetic(
        SynthConfig {
            types: 6,
            instances_per_type: 30,
            ..SynthConfig::default()
        },
        1,
        ContextMode::OneSent,
    )
}
