//! Target-word feature extraction and the hidden-stack cache.
//!
//! A feature tensor is the `[L, d_model]` stack of one target word's layer
//! vectors. Since the encoder is frozen these can be computed once; the
//! cache directory keeps one NTS1 file per instance with the full
//! `[L, n_words, d_model]` stack of its sentence, plus `manifest.json`
//! recording the encoder hash, vocabulary hash and context mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Instance;
use crate::encoder::{build_context, encode, ContextMode, EncoderWeights, HiddenStack, Tokenizer};
use crate::error::{Error, Result};
use crate::store::NamedTensorStore;
use crate::tensor::Tensor;

/// Instance id → `[L, d_model]` target features.
pub type FeatureMap = BTreeMap<String, Tensor>;

pub const MANIFEST_FILE: &str = "manifest.json";
const TARGET_KEY: &str = "target_index";

/// Full hidden stack of an instance's current sentence.
pub fn encode_instance(
    instance: &Instance,
    tokenizer: &Tokenizer,
    weights: &EncoderWeights,
    mode: ContextMode,
) -> Result<HiddenStack> {
    let input = build_context(instance, mode, tokenizer, weights.config.max_positions)?;
    encode(&input, weights).map_err(|e| match e {
        Error::Overlong { .. } | Error::ConfigMismatch(_) => e,
        other => Error::invalid(format!("instance {}: {other}", instance.id)),
    })
}

pub fn instance_features(
    instance: &Instance,
    tokenizer: &Tokenizer,
    weights: &EncoderWeights,
    mode: ContextMode,
) -> Result<Tensor> {
    encode_instance(instance, tokenizer, weights, mode)?.position(instance.target_index)
}

/// Encodes every instance. Work is spread over threads; the result does
/// not depend on the schedule.
pub fn featurize(
    instances: &[Instance],
    tokenizer: &Tokenizer,
    weights: &EncoderWeights,
    mode: ContextMode,
) -> Result<FeatureMap> {
    let rows: Vec<(String, Tensor)> = instances
        .par_iter()
        .map(|inst| Ok((inst.id.clone(), instance_features(inst, tokenizer, weights, mode)?)))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

/// Identifies the encoder, vocabulary and context a cache was built with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub encoder_sha256: String,
    pub vocab_sha256: String,
    pub context: ContextMode,
    pub layers: usize,
    pub d_model: usize,
    pub instances: Vec<String>,
}

impl CacheManifest {
    fn same_source(&self, other: &CacheManifest) -> bool {
        self.encoder_sha256 == other.encoder_sha256
            && self.vocab_sha256 == other.vocab_sha256
            && self.context == other.context
            && self.layers == other.layers
            && self.d_model == other.d_model
    }
}

pub fn encoder_hash(weights: &EncoderWeights) -> Result<String> {
    Ok(hex::encode(Sha256::digest(weights.to_store()?.to_bytes()?)))
}

pub fn vocab_hash(tokenizer: &Tokenizer) -> String {
    let mut h = Sha256::new();
    h.update([tokenizer.lowercase() as u8]);
    for p in tokenizer.vocab().pieces() {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// File name for an instance id; bytes outside `[A-Za-z0-9._-]` are
/// percent-escaped so distinct ids never collide.
pub fn cache_file_name(id: &str) -> String {
    let mut out = String::with_capacity(id.len() + 4);
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".nts");
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStatus {
    pub written: usize,
    pub reused: usize,
    /// Entries removed because the manifest no longer matched.
    pub invalidated: usize,
}

fn read_manifest(dir: &Path) -> Result<Option<CacheManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn entry_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(cache_file_name(id))
}

/// Writes hidden stacks for `instances` into `dir`. Entries that already
/// exist under a matching manifest are kept; a manifest built from other
/// weights, vocabulary or context mode invalidates the whole cache.
pub fn encode_to_cache(
    instances: &[Instance],
    tokenizer: &Tokenizer,
    weights: &EncoderWeights,
    mode: ContextMode,
    dir: &Path,
) -> Result<CacheStatus> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = CacheManifest {
        encoder_sha256: encoder_hash(weights)?,
        vocab_sha256: vocab_hash(tokenizer),
        context: mode,
        layers: weights.config.layers,
        d_model: weights.config.d_model,
        instances: Vec::new(),
    };
    let mut status = CacheStatus::default();
    let mut known: Vec<String> = Vec::new();
    if let Some(old) = read_manifest(dir)? {
        if old.same_source(&manifest) {
            known = old.instances;
        } else {
            for id in &old.instances {
                let p = entry_path(dir, id);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
                    status.invalidated += 1;
                }
            }
        }
    }
    let known_set: std::collections::BTreeSet<&str> = known.iter().map(String::as_str).collect();
    let todo: Vec<&Instance> = instances
        .iter()
        .filter(|inst| !(known_set.contains(inst.id.as_str()) && entry_path(dir, &inst.id).exists()))
        .collect();
    status.reused = instances.len() - todo.len();
    todo.par_iter()
        .map(|inst| {
            let stack = encode_instance(inst, tokenizer, weights, mode)?;
            let mut store = NamedTensorStore::new();
            store.insert("layers", stack.layers().clone());
            store.insert("embeddings", stack.embeddings().clone());
            store.set_metadata("id", inst.id.clone());
            store.set_metadata(TARGET_KEY, inst.target_index.to_string());
            store.save(entry_path(dir, &inst.id))
        })
        .collect::<Result<Vec<()>>>()?;
    status.written = todo.len();

    let mut ids: Vec<String> = known;
    ids.extend(instances.iter().map(|i| i.id.clone()));
    ids.sort();
    ids.dedup();
    manifest.instances = ids;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(status)
}

/// Loads the cached stack of one instance.
pub fn load_cached_stack(dir: &Path, id: &str) -> Result<(HiddenStack, usize)> {
    let store = NamedTensorStore::load(entry_path(dir, id))?;
    let stack = HiddenStack::new(store.get("layers")?.clone(), store.get("embeddings")?.clone())?;
    let target = store
        .metadata(TARGET_KEY)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::invalid(format!("cache entry for {id} lacks a target index")))?;
    Ok((stack, target))
}

/// Target features for `instances` from a cache. When `expect` is given
/// the cache must have been built from the same source.
pub fn load_cached_features(dir: &Path, instances: &[Instance], expect: Option<&CacheManifest>) -> Result<FeatureMap> {
    let manifest = read_manifest(dir)?
        .ok_or_else(|| Error::invalid(format!("{} has no {MANIFEST_FILE}", dir.display())))?;
    if let Some(e) = expect {
        if !manifest.same_source(e) {
            return Err(Error::ConfigMismatch("hidden-stack cache was built from a different source".into()));
        }
    }
    let rows: Vec<(String, Tensor)> = instances
        .par_iter()
        .map(|inst| {
            let (stack, target) = load_cached_stack(dir, &inst.id)?;
            if target != inst.target_index {
                return Err(Error::ConfigMismatch(format!("cache entry for {} has a different target", inst.id)));
            }
            Ok((inst.id.clone(), stack.position(target)?))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

pub fn cache_manifest(dir: &Path) -> Result<Option<CacheManifest>> {
    read_manifest(dir)
}
