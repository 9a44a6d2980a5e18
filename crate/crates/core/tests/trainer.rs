//! Trainer properties: optimizer descent, batch gradients against the f64
//! oracle, checkpoint selection and epoch transfer.

mod common;

use common::{random_tensor, reference_loss, rng, small_synthetic, widen, Params64};
use ctxwsd::corpus::{Instance, SenseInventory};
use ctxwsd::error::Error;
use ctxwsd::features::{encoder_hash, featurize, FeatureMap};
use ctxwsd::heads::{predict_with_backoff, HeadModel, ParametricHead, Variant};
use ctxwsd::synth;
use ctxwsd::trainer::{
    accuracy, adam_step, batch_gradient, mean_loss, train, train_fixed_epochs, train_with_epoch_transfer,
    AdamState, Checkpoint, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn config(lr: f64, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn refs(v: &[Instance]) -> Vec<&Instance> {
    v.iter().collect()
}

fn layers64(features: &FeatureMap, inst: &Instance) -> Vec<Vec<f64>> {
    let f = &features[&inst.id];
    (0..f.rows()).map(|r| f.row(r).iter().map(|&x| x as f64).collect()).collect()
}

fn oracle_batch_loss(variant: Variant, p: &Params64, inv: &SenseInventory, batch: &[&Instance], features: &FeatureMap) -> f64 {
    batch
        .iter()
        .map(|inst| {
            let gold = inv.get(&inst.lexelt).unwrap().index_of(&inst.gold_senses[0]).unwrap();
            reference_loss(variant, p, &layers64(features, inst), &inst.lexelt, gold)
        })
        .sum()
}

/// Every parameter redrawn from uniform(−scale, scale), projections included.
fn randomized(variant: Variant, inv: &SenseInventory, d: usize, seed: u64, scale: f32) -> ParametricHead {
    let mut head = ParametricHead::init(variant, inv, d, seed).unwrap();
    let mut r = rng(seed);
    for name in head.param_names() {
        let shape = head.param_mut(&name).unwrap().shape().to_vec();
        *head.param_mut(&name).unwrap() = random_tensor(&mut r, shape, scale);
    }
    head
}

#[test]
fn adam_descends_on_a_fixed_batch() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let batch: Vec<&Instance> = data.corpus.train.iter().take(16).collect();
    let cfg = config(1e-3, 1, 0);
    for seed in 0..20 {
        let mut head = randomized(Variant::Simple, &inv, 32, seed, 0.1);
        let mut state = AdamState::default();
        let mut prev = batch_gradient(&head, &inv, &batch, &data.features).unwrap().0;
        for step in 0..5 {
            let grad = batch_gradient(&head, &inv, &batch, &data.features).unwrap().1;
            adam_step(&mut head, &grad, &mut state, &cfg).unwrap();
            let loss = batch_gradient(&head, &inv, &batch, &data.features).unwrap().0;
            assert!(loss <= prev, "seed {seed} step {step}: {prev} -> {loss}");
            prev = loss;
        }
    }
}

#[test]
fn batch_gradient_matches_the_oracle_on_random_batches() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let step = 1e-3;
    for variant in Variant::TRAINABLE {
        for seed in 0..10u64 {
            let head = randomized(variant, &inv, 32, 100 + seed, 0.1);
            let mut r = rng(seed);
            let mut pool = refs(&data.corpus.train);
            pool.shuffle(&mut r);
            let batch = &pool[..r.gen_range(1..=12)];
            let (loss, grad) = batch_gradient(&head, &inv, batch, &data.features).unwrap();
            let p = widen(&head);
            let oracle = oracle_batch_loss(variant, &p, &inv, batch, &data.features);
            assert!((loss - oracle).abs() <= 1e-4 * oracle.abs().max(1.0), "{variant:?}: {loss} vs {oracle}");

            // directional derivative along a random direction; absent
            // gradients are projections of lexelts not in the batch
            let dir: Params64 = p.iter().map(|(k, v)| (k.clone(), v.iter().map(|_| r.gen_range(-1.0..1.0)).collect())).collect();
            let shifted = |sign: f64| -> Params64 {
                p.iter()
                    .map(|(k, v)| (k.clone(), v.iter().zip(&dir[k]).map(|(x, u)| x + sign * step * u).collect()))
                    .collect()
            };
            let fd = (oracle_batch_loss(variant, &shifted(1.0), &inv, batch, &data.features)
                - oracle_batch_loss(variant, &shifted(-1.0), &inv, batch, &data.features))
                / (2.0 * step);
            let analytic: f64 = dir
                .iter()
                .filter_map(|(k, u)| grad.get(k).ok().map(|g| g.data().iter().zip(u).map(|(&a, b)| a as f64 * b).sum::<f64>()))
                .sum();
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4);
            assert!(rel <= 1e-3, "{variant:?} seed {seed}: fd {fd} analytic {analytic}");
        }
    }
}

#[test]
fn zero_learning_rate_keeps_the_untrained_model() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let (tr, dev) = (refs(&data.corpus.train), refs(&data.corpus.dev));
    for variant in Variant::TRAINABLE {
        let out = train(&tr, &dev, &data.features, &inv, variant, &config(0.0, 3, 5)).unwrap();
        let untrained = HeadModel::Parametric(ParametricHead::init(variant, &inv, 32, 5).unwrap());
        assert_eq!(out.best.model, untrained);
        assert_eq!(out.best.dev_score.unwrap(), accuracy(&untrained, &inv, &dev, &data.features).unwrap());
        // all three evaluations tie; the first is kept
        assert_eq!(out.trace.evaluations.len(), 3);
        assert_eq!(out.best.epoch, 1);
    }
}

#[test]
fn same_seed_same_bytes() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let (tr, dev) = (refs(&data.corpus.train), refs(&data.corpus.dev));
    let bytes = |seed| {
        let out = train(&tr, &dev, &data.features, &inv, Variant::GluLw, &config(1e-3, 3, seed)).unwrap();
        out.best.to_store().unwrap().to_bytes().unwrap()
    };
    assert_eq!(bytes(4), bytes(4));
    assert_ne!(bytes(4), bytes(5));
}

#[test]
fn training_leaves_the_encoder_and_features_alone() {
    let data = small_synthetic();
    let weights = synth::toy_encoder(&data.config, 1).unwrap();
    let tok = synth::tokenizer(&data.config).unwrap();
    let before = encoder_hash(&weights).unwrap();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    train(&refs(&data.corpus.train), &refs(&data.corpus.dev), &data.features, &inv, Variant::Glu, &config(1e-2, 2, 0)).unwrap();
    assert_eq!(encoder_hash(&weights).unwrap(), before);
    let again = featurize(&data.corpus.all(), &tok, &weights, ctxwsd::encoder::ContextMode::OneSent).unwrap();
    assert_eq!(again, data.features);
}

#[test]
fn one_epoch_budget_transfers_one_epoch() {
    let data = small_synthetic();
    for variant in Variant::TRAINABLE {
        let out = train_with_epoch_transfer(&data.corpus.train, 0.2, &data.features, variant, &config(1e-3, 1, 0)).unwrap();
        assert_eq!(out.phase1.best.epoch, 1);
        assert_eq!(out.best_epochs, 1);
        assert_eq!(out.phase2.trace.epochs_run, 1);
    }
}

#[test]
fn phase_two_fits_the_shared_part_at_least_as_well() {
    let data = small_synthetic();
    for variant in Variant::TRAINABLE {
        let out = train_with_epoch_transfer(&data.corpus.train, 0.2, &data.features, variant, &config(1e-3, 10, 0)).unwrap();
        let shared = out.split.select(&data.corpus.train, ctxwsd::corpus::Partition::Train);
        let loss = |c: &Checkpoint| match &c.model {
            HeadModel::Parametric(h) => mean_loss(h, &c.inventory, &shared, &data.features).unwrap(),
            HeadModel::Knn(_) => unreachable!(),
        };
        let (l1, l2) = (loss(&out.phase1.best), loss(out.checkpoint()));
        assert!(l2 <= l1, "{variant:?}: phase 1 {l1} phase 2 {l2} at E* = {}", out.best_epochs);
    }
}

#[test]
fn saved_checkpoints_predict_identically() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let out = train(&refs(&data.corpus.train), &refs(&data.corpus.dev), &data.features, &inv, variant, &config(1e-3, 2, 0)).unwrap();
        let path = dir.path().join(format!("{variant:?}.nts"));
        out.best.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some(&inv)).unwrap();
        assert_eq!(back, out.best);
        for inst in &data.corpus.test {
            let f = &data.features[&inst.id];
            assert_eq!(
                predict_with_backoff(f, &back.model, &back.inventory, &inst.lexelt).unwrap(),
                predict_with_backoff(f, &out.best.model, &out.best.inventory, &inst.lexelt).unwrap()
            );
        }
    }
}

#[test]
fn dev_lexelts_missing_from_train_back_off() {
    let data = small_synthetic();
    let held = data.corpus.train[0].lexelt.clone();
    let train_part: Vec<&Instance> = data.corpus.train.iter().filter(|i| i.lexelt != held).collect();
    let dev = refs(&data.corpus.dev);
    let inv = SenseInventory::from_instances(train_part.iter().copied());
    assert!(!inv.contains(&held));
    let out = train(&train_part, &dev, &data.features, &inv, Variant::Simple, &config(1e-2, 3, 0)).unwrap();
    let unseen = dev.iter().filter(|i| i.lexelt == held).count();
    assert!(unseen > 0);
    let ceiling = (dev.len() - unseen) as f64 / dev.len() as f64;
    assert!(out.best.dev_score.unwrap() <= ceiling);
}

#[test]
fn empty_dev_is_rejected() {
    let data = small_synthetic();
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let err = train(&refs(&data.corpus.train), &[], &data.features, &inv, Variant::Simple, &config(1e-3, 1, 0)).unwrap_err();
    assert!(matches!(err, Error::Empty(_)), "{err}");
    // fixed-epoch training is the supported path without a dev set
    let out = train_fixed_epochs(&refs(&data.corpus.train), &data.features, &inv, Variant::Simple, &config(1e-3, 1, 0), 2).unwrap();
    assert_eq!(out.trace.epochs_run, 2);
    assert_eq!(out.best.dev_score, None);
}
