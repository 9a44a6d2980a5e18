//! Adam training of head parameters with dev-set checkpoint selection.
//!
//! The encoder is frozen: training consumes precomputed target features
//! ([`FeatureMap`]) and only head parameters receive gradients. A batch is
//! `batch_size` whole sentences; the losses of every target instance in
//! those sentences are summed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_lexical_sample_split, Instance, Partition, SenseInventory, SplitPlan};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::heads::{predict_with_backoff, Answer, HeadModel, KnnIndex, ParametricHead, Variant};
use crate::store::NamedTensorStore;
use crate::tensor::{Gradient, Tensor};

/// When to score the dev set during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCadence {
    #[default]
    EndOfEpoch,
    /// Every `n` updates (and never in between).
    Updates(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Sentences per update.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval: EvalCadence,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 50,
            eval: EvalCadence::EndOfEpoch,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is allowed so that a no-op run can be compared against the
    /// untrained model.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigMismatch("learning_rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigMismatch("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::ConfigMismatch("max_epochs must be >= 1".into()));
        }
        if matches!(self.eval, EvalCadence::Updates(0)) {
            return Err(Error::ConfigMismatch("eval cadence must be >= 1 update".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::ConfigMismatch("adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// loss + optimizer

/// `-ln p(g)` for the first listed gold sense index.
pub fn nll_loss(distribution: &[f32], gold: &[usize]) -> Result<f64> {
    let &g = gold.first().ok_or_else(|| Error::Empty("gold sense set".into()))?;
    crate::tensor::ensure_finite(distribution, "distribution")?;
    let total: f64 = distribution.iter().map(|&p| p as f64).sum();
    if distribution.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-4 {
        return Err(Error::invalid("distribution is not a probability simplex"));
    }
    let p = *distribution
        .get(g)
        .ok_or_else(|| Error::invalid(format!("gold index {g} outside a {}-sense distribution", distribution.len())))?;
    Ok(-(p as f64).ln())
}

/// Anything whose tensors can be addressed by name.
pub trait Parameters {
    fn param_mut(&mut self, name: &str) -> Result<&mut Tensor>;
}

impl Parameters for ParametricHead {
    fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        ParametricHead::param_mut(self, name)
    }
}

impl Parameters for BTreeMap<String, Tensor> {
    fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.get_mut(name).ok_or_else(|| Error::UntrackedParameter(name.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
    /// Updates applied to this parameter so far.
    pub step: u64,
}

/// Adam moments per parameter. Each parameter keeps its own step count, so
/// a per-lexelt projection that sits out a batch is not decayed and its
/// bias correction stays exact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub moments: BTreeMap<String, Moments>,
    /// Total calls to [`adam_step`].
    pub updates: u64,
}

/// One bias-corrected Adam update for every parameter present in `grads`.
pub fn adam_step<P: Parameters + ?Sized>(
    params: &mut P,
    grads: &Gradient,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if let Some(bad) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` at coordinate {bad}")));
        }
    }
    state.updates += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    for (name, g) in grads.iter() {
        let p = params.param_mut(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            first: Tensor::zeros(p.shape().to_vec()),
            second: Tensor::zeros(p.shape().to_vec()),
            step: 0,
        });
        m.step += 1;
        let c1 = 1.0 - b1.powi(m.step as i32);
        let c2 = 1.0 - b2.powi(m.step as i32);
        let (first, second) = (m.first.data_mut(), m.second.data_mut());
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi as f64;
            let mi = b1 * first[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * second[i] as f64 + (1.0 - b2) * gi * gi;
            first[i] = mi as f32;
            second[i] = vi as f32;
            let update = config.learning_rate * (mi / c1) / ((vi / c2).sqrt() + config.epsilon);
            *w = (*w as f64 - update) as f32;
        }
        p.check_finite(name)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// checkpoints

/// A selected model plus the dev score and position it was selected at.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HeadModel,
    pub inventory: SenseInventory,
    /// Dev accuracy in [0, 1]; `None` when training ran without a dev set.
    pub dev_score: Option<f64>,
    /// Updates applied before this snapshot.
    pub update: usize,
    /// Completed epochs at this snapshot (rounded up when taken mid-epoch).
    pub epoch: usize,
}

const CKPT_DEV: &str = "checkpoint.dev_score";
const CKPT_UPDATE: &str = "checkpoint.update";
const CKPT_EPOCH: &str = "checkpoint.epoch";

impl Checkpoint {
    pub fn to_store(&self) -> Result<NamedTensorStore> {
        let mut store = self.model.to_store(&self.inventory)?;
        if let Some(d) = self.dev_score {
            // 17 significant digits round-trip an f64 exactly
            store.set_metadata(CKPT_DEV, format!("{d:.17e}"));
        }
        store.set_metadata(CKPT_UPDATE, self.update.to_string());
        store.set_metadata(CKPT_EPOCH, self.epoch.to_string());
        Ok(store)
    }

    pub fn from_store(store: &NamedTensorStore, expected: Option<&SenseInventory>) -> Result<Self> {
        let (model, inventory) = HeadModel::from_store(store, expected)?;
        let num = |key: &str| -> Result<usize> {
            store
                .metadata(key)
                .unwrap_or("0")
                .parse()
                .map_err(|_| Error::invalid(format!("checkpoint metadata `{key}` is not an integer")))
        };
        let dev_score = store
            .metadata(CKPT_DEV)
            .map(|s| s.parse::<f64>().map_err(|_| Error::invalid("checkpoint dev score is not a number")))
            .transpose()?;
        Ok(Self {
            model,
            inventory,
            dev_score,
            update: num(CKPT_UPDATE)?,
            epoch: num(CKPT_EPOCH)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_store()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&SenseInventory>) -> Result<Self> {
        Self::from_store(&NamedTensorStore::load(path)?, expected)
    }
}

// ---------------------------------------------------------------------------
// training loop

/// One dev evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevPoint {
    pub epoch: usize,
    pub update: usize,
    pub dev_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs_run: usize,
    pub updates: usize,
    /// Mean per-instance training loss of each epoch, measured while
    /// training (before each batch's update).
    pub epoch_losses: Vec<f64>,
    pub evaluations: Vec<DevPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    /// The model after the last update, whether or not it was selected.
    pub last: HeadModel,
    pub trace: TrainTrace,
}

fn features_of<'a>(features: &'a FeatureMap, inst: &Instance) -> Result<&'a Tensor> {
    features
        .get(&inst.id)
        .ok_or_else(|| Error::invalid(format!("no features for instance {}", inst.id)))
}

/// Accuracy in [0, 1] with MFS backoff; abstentions count as wrong.
pub fn accuracy(model: &HeadModel, inventory: &SenseInventory, instances: &[&Instance], features: &FeatureMap) -> Result<f64> {
    let scored: Vec<&&Instance> = instances.iter().filter(|i| !i.gold_senses.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::Empty("no sense-tagged instances to score".into()));
    }
    let correct: Vec<bool> = scored
        .par_iter()
        .map(|inst| {
            let f = features_of(features, inst)?;
            Ok(match predict_with_backoff(f, model, inventory, &inst.lexelt)? {
                Answer::Sense(s) => inst.is_correct(&s),
                Answer::Abstain => false,
            })
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
}

fn gold_index(inventory: &SenseInventory, inst: &Instance) -> Result<usize> {
    let entry = inventory
        .get(&inst.lexelt)
        .ok_or_else(|| Error::invalid(format!("instance {}: lexelt {} not in inventory", inst.id, inst.lexelt)))?;
    entry
        .index_of(&inst.gold_senses[0])
        .ok_or_else(|| Error::invalid(format!("instance {}: gold sense outside inventory", inst.id)))
}

/// Mean NLL of the first gold sense over `instances`.
pub fn mean_loss(head: &ParametricHead, inventory: &SenseInventory, instances: &[&Instance], features: &FeatureMap) -> Result<f64> {
    let losses: Vec<f64> = instances
        .par_iter()
        .filter(|i| !i.gold_senses.is_empty())
        .map(|inst| {
            let tape = head.forward_recorded(features_of(features, inst)?, &inst.lexelt)?;
            tape.nll(gold_index(inventory, inst)?)
        })
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(Error::Empty("no sense-tagged instances".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Summed loss and gradient over a batch. Per-instance work runs in
/// parallel; results are merged in instance order.
pub fn batch_gradient(
    head: &ParametricHead,
    inventory: &SenseInventory,
    batch: &[&Instance],
    features: &FeatureMap,
) -> Result<(f64, Gradient)> {
    let parts: Vec<(f64, Gradient)> = batch
        .par_iter()
        .map(|inst| {
            let f = features_of(features, inst)?;
            head.loss_and_gradient(f, &inst.lexelt, gold_index(inventory, inst)?)
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = Gradient::new();
    for (l, g) in parts {
        loss += l;
        grad.merge(g)?;
    }
    Ok((loss, grad))
}

/// Instances grouped by sentence, in first-appearance order.
fn sentences<'a>(instances: &[&'a Instance]) -> Vec<Vec<&'a Instance>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&'a Instance>> = BTreeMap::new();
    for &inst in instances {
        if inst.gold_senses.is_empty() {
            continue;
        }
        let key = inst.sentence_key();
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(inst);
    }
    order.into_iter().map(|k| groups.remove(k).expect("key recorded")).collect()
}

/// 1-nn "training": stores the last-layer vector of every tagged training
/// instance, in corpus order.
pub fn build_knn_index(train: &[&Instance], features: &FeatureMap) -> Result<KnnIndex> {
    let first = train
        .iter()
        .find(|i| !i.gold_senses.is_empty())
        .ok_or_else(|| Error::Empty("training set has no tagged instances".into()))?;
    let d = features_of(features, first)?.cols();
    let mut index = KnnIndex::new(d);
    for inst in train.iter().filter(|i| !i.gold_senses.is_empty()) {
        let f = features_of(features, inst)?;
        index.insert(
            inst.lexelt.clone(),
            f.row(f.rows() - 1).to_vec(),
            inst.gold_senses[0].clone(),
            inst.id.clone(),
        )?;
    }
    Ok(index)
}

fn d_model_of(train: &[&Instance], features: &FeatureMap) -> Result<usize> {
    let first = train
        .iter()
        .find(|i| !i.gold_senses.is_empty())
        .ok_or_else(|| Error::Empty("training set has no tagged instances".into()))?;
    Ok(features_of(features, first)?.cols())
}

enum Selection<'a> {
    Dev(&'a [&'a Instance]),
    FixedEpochs(usize),
}

/// Trains `variant` on `train`, scoring `dev` per `config.eval` and
/// returning the best-scoring snapshot (ties keep the earlier one). The
/// untrained model is not a candidate.
pub fn train(
    train: &[&Instance],
    dev: &[&Instance],
    features: &FeatureMap,
    inventory: &SenseInventory,
    variant: Variant,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dev.iter().all(|i| i.gold_senses.is_empty()) {
        return Err(Error::Empty("dev set is empty; use fixed-epoch training".into()));
    }
    run(train, Selection::Dev(dev), features, inventory, variant, config)
}

/// Trains for exactly `epochs` epochs with no dev set and returns the final
/// model.
pub fn train_fixed_epochs(
    train: &[&Instance],
    features: &FeatureMap,
    inventory: &SenseInventory,
    variant: Variant,
    config: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    if epochs == 0 {
        return Err(Error::ConfigMismatch("fixed-epoch training needs at least one epoch".into()));
    }
    run(train, Selection::FixedEpochs(epochs), features, inventory, variant, config)
}

fn run(
    train: &[&Instance],
    selection: Selection<'_>,
    features: &FeatureMap,
    inventory: &SenseInventory,
    variant: Variant,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let d_model = d_model_of(train, features)?;
    let dev = match selection {
        Selection::Dev(d) => Some(d),
        Selection::FixedEpochs(_) => None,
    };

    if variant == Variant::Knn {
        let model = HeadModel::Knn(build_knn_index(train, features)?);
        let dev_score = dev.map(|d| accuracy(&model, inventory, d, features)).transpose()?;
        let mut trace = TrainTrace::default();
        if let Some(s) = dev_score {
            trace.evaluations.push(DevPoint {
                epoch: 0,
                update: 0,
                dev_score: s,
            });
        }
        return Ok(TrainOutcome {
            best: Checkpoint {
                model: model.clone(),
                inventory: inventory.clone(),
                dev_score,
                update: 0,
                epoch: 0,
            },
            last: model,
            trace,
        });
    }

    let mut head = ParametricHead::init(variant, inventory, d_model, config.seed)?;
    let mut state = AdamState::default();
    let mut trace = TrainTrace::default();
    let mut best: Option<Checkpoint> = None;
    let epochs = match selection {
        Selection::Dev(_) => config.max_epochs,
        Selection::FixedEpochs(e) => e,
    };
    let mut groups = sentences(train);
    if groups.is_empty() {
        return Err(Error::Empty("training set has no tagged instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let batches_per_epoch = groups.len().div_ceil(config.batch_size);

    let mut evaluate = |head: &ParametricHead, epoch: usize, update: usize, trace: &mut TrainTrace| -> Result<()> {
        let Some(dev) = dev else { return Ok(()) };
        let model = HeadModel::Parametric(head.clone());
        let score = accuracy(&model, inventory, dev, features)?;
        trace.evaluations.push(DevPoint {
            epoch,
            update,
            dev_score: score,
        });
        if best.as_ref().is_none_or(|b| score > b.dev_score.unwrap_or(f64::NEG_INFINITY)) {
            best = Some(Checkpoint {
                model,
                inventory: inventory.clone(),
                dev_score: Some(score),
                update,
                epoch,
            });
        }
        Ok(())
    };

    for epoch in 1..=epochs {
        groups.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for (b, chunk) in groups.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().flatten().copied().collect();
            let (loss, grad) = batch_gradient(&head, inventory, &batch, features)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss;
            epoch_count += batch.len();
            adam_step(&mut head, &grad, &mut state, config)?;
            trace.updates += 1;
            if let EvalCadence::Updates(n) = config.eval {
                let last_in_epoch = b + 1 == batches_per_epoch;
                if trace.updates % n == 0 && !last_in_epoch {
                    evaluate(&head, epoch, trace.updates, &mut trace)?;
                }
            }
        }
        trace.epoch_losses.push(epoch_loss / epoch_count as f64);
        trace.epochs_run = epoch;
        let at_epoch_end = match config.eval {
            EvalCadence::EndOfEpoch => true,
            EvalCadence::Updates(n) => trace.updates % n == 0,
        };
        if at_epoch_end {
            evaluate(&head, epoch, trace.updates, &mut trace)?;
        }
    }

    let last = HeadModel::Parametric(head);
    let best = match (best, dev) {
        (Some(b), _) => b,
        (None, Some(dev)) => {
            // cadence never fired; fall back to the final model
            let score = accuracy(&last, inventory, dev, features)?;
            trace.evaluations.push(DevPoint {
                epoch: trace.epochs_run,
                update: trace.updates,
                dev_score: score,
            });
            Checkpoint {
                model: last.clone(),
                inventory: inventory.clone(),
                dev_score: Some(score),
                update: trace.updates,
                epoch: trace.epochs_run,
            }
        }
        (None, None) => Checkpoint {
            model: last.clone(),
            inventory: inventory.clone(),
            dev_score: None,
            update: trace.updates,
            epoch: trace.epochs_run,
        },
    };
    Ok(TrainOutcome { best, last, trace })
}

/// Both phases of the epoch-transfer protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutcome {
    pub split: SplitPlan,
    pub phase1: TrainOutcome,
    /// Epoch count of the best phase-1 checkpoint.
    pub best_epochs: usize,
    pub phase2: TrainOutcome,
}

impl TransferOutcome {
    pub fn checkpoint(&self) -> &Checkpoint {
        &self.phase2.best
    }
}

/// Splits `full_train` per lexelt (`ratio` to dev), trains with dev
/// selection to find the best epoch count `E*`, then retrains from scratch
/// on all of `full_train` for exactly `E*` epochs.
///
/// Phase 1 uses an inventory built from its own training part, so dev
/// lexelts with no phase-1 training data go through MFS backoff.
pub fn train_with_epoch_transfer(
    full_train: &[Instance],
    ratio: f64,
    features: &FeatureMap,
    variant: Variant,
    config: &TrainConfig,
) -> Result<TransferOutcome> {
    let split = make_lexical_sample_split(full_train, ratio, config.seed)?;
    let part1 = split.select(full_train, Partition::Train);
    let dev = split.select(full_train, Partition::Dev);
    let inv1 = SenseInventory::from_instances(part1.iter().copied());
    let phase1 = train(&part1, &dev, features, &inv1, variant, config)?;
    let best_epochs = phase1.best.epoch.max(1);
    let all: Vec<&Instance> = full_train.iter().collect();
    let inv2 = SenseInventory::from_instances(full_train);
    let phase2 = train_fixed_epochs(&all, features, &inv2, variant, config, best_epochs)?;
    Ok(TransferOutcome {
        split,
        phase1,
        best_epochs,
        phase2,
    })
}
