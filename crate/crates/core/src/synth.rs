//! Synthetic lexical-sample corpus with a known answer, plus a matching
//! toy vocabulary and randomly initialized encoder.
//!
//! Every instance is a short sentence of filler words in which the target
//! word is immediately preceded by a cue word. Cue words come in one group
//! per sense index, so the gold sense is a deterministic function of the
//! cue. Senses are balanced within each word type and within each of the
//! train/dev/test partitions, so the MFS baseline sits at the chance rate
//! `1 / senses`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Lexelt};
use crate::encoder::{EncoderConfig, EncoderWeights, Tokenizer, Vocab, CLS, SEP, UNK};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub types: usize,
    pub instances_per_type: usize,
    pub senses: usize,
    pub cues_per_sense: usize,
    pub fillers: usize,
    /// Words per sentence including cue and target.
    pub sentence_len: usize,
    /// Fraction of train and dev instances whose label is replaced by a
    /// different sense. Test labels are always clean.
    pub label_noise: f64,
    /// Share of each (type, sense) group held out for test, then share of
    /// the rest for dev.
    pub test_ratio: f64,
    pub dev_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            types: 40,
            instances_per_type: 100,
            senses: 2,
            cues_per_sense: 1,
            fillers: 8,
            sentence_len: 3,
            label_noise: 0.0,
            test_ratio: 0.2,
            dev_ratio: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.types == 0 || self.senses < 2 || self.cues_per_sense == 0 || self.fillers == 0 {
            return Err(Error::ConfigMismatch("synthetic corpus needs types, >= 2 senses, cues and fillers".into()));
        }
        if self.instances_per_type < 3 * self.senses {
            return Err(Error::ConfigMismatch("too few instances per type for a three-way split".into()));
        }
        if self.sentence_len < 2 {
            return Err(Error::ConfigMismatch("sentences need room for cue and target".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::ConfigMismatch("label_noise must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn type_word(t: usize) -> String {
    format!("word{t:02}")
}

pub fn cue_word(sense: usize, k: usize) -> String {
    format!("cue{sense}x{k}")
}

pub fn filler_word(f: usize) -> String {
    format!("fill{f:02}")
}

pub fn sense_id(t: usize, sense: usize) -> String {
    format!("{}%{sense}", type_word(t))
}

/// Vocabulary covering every synthetic word as a single piece.
pub fn vocab(config: &SynthConfig) -> Result<Vocab> {
    let mut pieces: Vec<String> = vec![UNK.into(), CLS.into(), SEP.into()];
    pieces.extend((0..config.types).map(type_word));
    for s in 0..config.senses {
        pieces.extend((0..config.cues_per_sense).map(|k| cue_word(s, k)));
    }
    pieces.extend((0..config.fillers).map(filler_word));
    Vocab::from_pieces(pieces)
}

pub fn tokenizer(config: &SynthConfig) -> Result<Tokenizer> {
    Ok(Tokenizer::new(vocab(config)?, false))
}

/// Toy encoder dimensions: 2 layers, 2 heads, `d_model = 32`.
pub fn toy_encoder_config(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 32,
        d_k: 16,
        d_v: 16,
        d_ff: 64,
        max_positions: 64,
        vocab_size,
        attention_scale: Default::default(),
    }
}

pub fn toy_encoder(config: &SynthConfig, seed: u64) -> Result<EncoderWeights> {
    EncoderWeights::random(toy_encoder_config(vocab(config)?.len()), seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    /// Instance ids whose train/dev label was replaced.
    pub noisy: Vec<String>,
}

impl SynthCorpus {
    pub fn all(&self) -> Vec<Instance> {
        let mut v = self.train.clone();
        v.extend(self.dev.iter().cloned());
        v.extend(self.test.iter().cloned());
        v
    }
}

fn filler_sentence(rng: &mut ChaCha8Rng, config: &SynthConfig, len: usize) -> Vec<String> {
    (0..len).map(|_| filler_word(rng.gen_range(0..config.fillers))).collect()
}

fn sense_of(inst: &Instance) -> usize {
    inst.gold_senses[0]
        .rsplit('%')
        .next()
        .and_then(|s| s.parse().ok())
        .expect("synthetic sense id")
}

/// `ratio` of `n`, rounded, leaving at least one item on each side.
fn share(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut all = Vec::with_capacity(config.types * config.instances_per_type);
    for t in 0..config.types {
        let mut senses: Vec<usize> = (0..config.instances_per_type).map(|i| i % config.senses).collect();
        senses.shuffle(&mut rng);
        for (i, sense) in senses.into_iter().enumerate() {
            let mut words = filler_sentence(&mut rng, config, config.sentence_len);
            let target_index = rng.gen_range(1..config.sentence_len);
            words[target_index - 1] = cue_word(sense, rng.gen_range(0..config.cues_per_sense));
            words[target_index] = type_word(t);
            let id = format!("{}.{i:03}", type_word(t));
            all.push(Instance {
                id: id.clone(),
                words,
                target_index,
                lexelt: Lexelt::new(type_word(t), Some("n")),
                gold_senses: vec![sense_id(t, sense)],
                left: Some(filler_sentence(&mut rng, config, 4)),
                right: Some(filler_sentence(&mut rng, config, 4)),
                genre: None,
                sentence: Some(id),
            });
        }
    }

    // split every (type, sense) group in the same proportions so each
    // partition stays sense-balanced
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for group in all.chunks(config.instances_per_type) {
        let mut taken = vec![(0usize, 0usize); config.senses];
        let per_sense = config.instances_per_type / config.senses;
        let n_test = share(per_sense, config.test_ratio);
        let n_dev = share(per_sense - n_test, config.dev_ratio);
        for inst in group {
            let s = sense_of(inst);
            let (t, d) = &mut taken[s];
            if *t < n_test {
                *t += 1;
                test.push(inst.clone());
            } else if *d < n_dev {
                *d += 1;
                dev.push(inst.clone());
            } else {
                train.push(inst.clone());
            }
        }
    }

    let mut noisy = Vec::new();
    if config.label_noise > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0015e);
        for inst in train.iter_mut().chain(dev.iter_mut()) {
            if noise_rng.gen_bool(config.label_noise) {
                let t = inst.lexelt.lemma.trim_start_matches("word").parse::<usize>().expect("synthetic lemma");
                let current = sense_of(inst);
                let shift = noise_rng.gen_range(1..config.senses);
                inst.gold_senses = vec![sense_id(t, (current + shift) % config.senses)];
                noisy.push(inst.id.clone());
            }
        }
    }
    Ok(SynthCorpus { train, dev, test, noisy })
}
