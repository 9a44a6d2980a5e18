//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs without the libtest harness so the
//! lines reach the terminal uncaptured.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ctxwsd::corpus::{Instance, Lexelt, SenseInventory};
use ctxwsd::encoder::{attention, build_context_from_parts, encode_traced, ContextMode, EncoderConfig, EncoderWeights, Tokenizer, Vocab};
use ctxwsd::eval::{bootstrap_significance, mfs_answers, predict_all, run_experiment, score, AnswerSet, ExperimentData, DEFAULT_RESAMPLES};
use ctxwsd::features::featurize;
use ctxwsd::heads::{glu, knn_predict, layer_weighted, Answer, GluParams, HeadModel, KnnIndex, LayerAttention, ParametricHead, Variant};
use ctxwsd::synth::{self, SynthConfig};
use ctxwsd::tensor::{layer_norm, Tensor, LAYER_NORM_EPS};
use ctxwsd::trainer::{accuracy, build_knn_index, train, train_with_epoch_transfer, EvalCadence, TrainConfig};
use rand::Rng;

use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_correctness),
        ("1-nn oracle equivalence", knn_oracle),
        ("attention/normalization invariants", invariants),
        ("trivial-case identities", identities),
        ("synthetic end-to-end learning", synthetic_learning),
        ("protocol fidelity", protocol_fidelity),
        ("determinism", determinism),
        ("significance machinery", significance),
        ("ordering under 20% label noise", noise_ordering),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {} {name}: {status} ({}; {:.1}s)", i + 1, v.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {}/9 passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// 1

const FD_STEP: f64 = 1e-3;
/// Coordinates whose analytic and numeric values are both below this are
/// compared on an absolute scale; f32 rounding dominates there.
const REL_FLOOR: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

struct GradStats {
    worst_coord: f64,
    worst_dir: f64,
    worst_forward: f64,
    missing: usize,
}

fn gradient_draw(variant: Variant, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let layers = r.gen_range(1..=4);
    let d = r.gen_range(2..=6);
    let senses = r.gen_range(2..=4);
    let (lx, inv) = single_lexelt_inventory(senses);
    let mut head = ParametricHead::init(variant, &inv, d, seed).unwrap();
    for name in head.param_names() {
        let p = head.param_mut(&name).unwrap();
        let shape = p.shape().to_vec();
        *p = random_tensor(&mut r, shape, 0.5);
    }
    let features = random_tensor(&mut r, vec![layers, d], 1.0);
    let gold = r.gen_range(0..senses);

    let (loss, grad) = head.loss_and_gradient(&features, &lx, gold).unwrap();
    let stack: Vec<Vec<f64>> = (0..layers).map(|l| features.row(l).iter().map(|&x| x as f64).collect()).collect();
    let base = widen(&head);
    let f = |p: &Params64| reference_loss(variant, p, &stack, &lx, gold);
    let reference = f(&base);

    let mut stats = GradStats {
        worst_coord: 0.0,
        worst_dir: 0.0,
        worst_forward: (reference - loss).abs() / reference.abs().max(1.0),
        missing: 0,
    };
    let (mut analytic_dir, mut plus, mut minus) = (0.0, base.clone(), base.clone());
    for (name, values) in &base {
        let Ok(g) = grad.get(name) else {
            stats.missing += 1;
            continue;
        };
        for i in 0..values.len() {
            let mut p = base.clone();
            p.get_mut(name).unwrap()[i] += FD_STEP;
            let up = f(&p);
            p.get_mut(name).unwrap()[i] -= 2.0 * FD_STEP;
            let down = f(&p);
            let numeric = (up - down) / (2.0 * FD_STEP);
            stats.worst_coord = stats.worst_coord.max(rel_err(g.data()[i] as f64, numeric));

            let u: f64 = r.gen_range(-1.0..1.0);
            analytic_dir += g.data()[i] as f64 * u;
            plus.get_mut(name).unwrap()[i] += FD_STEP * u;
            minus.get_mut(name).unwrap()[i] -= FD_STEP * u;
        }
    }
    let numeric_dir = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    stats.worst_dir = rel_err(analytic_dir, numeric_dir);
    stats
}

fn gradient_correctness() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (vi, &variant) in Variant::TRAINABLE.iter().enumerate() {
        let draws: Vec<GradStats> = (0..100).map(|k| gradient_draw(variant, 1000 * vi as u64 + k)).collect();
        let coord = draws.iter().map(|s| s.worst_coord).fold(0.0, f64::max);
        let dir = draws.iter().map(|s| s.worst_dir).fold(0.0, f64::max);
        let fwd = draws.iter().map(|s| s.worst_forward).fold(0.0, f64::max);
        let missing: usize = draws.iter().map(|s| s.missing).sum();
        pass &= coord <= 1e-2 && dir <= 1e-3 && fwd <= 1e-5 && missing == 0;
        parts.push(format!("{variant} coord {coord:.1e} dir {dir:.1e}"));
    }
    pass &= t.elapsed().as_secs() < 60;
    verdict(pass, format!("100 draws each, worst rel err: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 2

fn knn_oracle() -> Verdict {
    let mut r = rng(2);
    let lx = Lexelt::new("w", Some("n"));
    let (mut agree, mut total) = (0, 0);
    for q in 0..1000 {
        let size = r.gen_range(1..=200);
        let d = r.gen_range(1..=16);
        let mut index = KnnIndex::new(d);
        for i in 0..size {
            // some zero vectors and exact duplicates to exercise tie-breaking
            let v: Vec<f32> = match r.gen_range(0..20) {
                0 => vec![0.0; d],
                1 if i > 0 => index.entries(&lx).unwrap()[r.gen_range(0..i)].vector.clone(),
                _ => (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
            };
            index.insert(lx.clone(), v, format!("w%{}", i % 3), format!("q{q}.{i}")).unwrap();
        }
        let query: Vec<f32> = if q % 50 == 0 {
            vec![0.0; d]
        } else {
            (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()
        };
        let expected = brute_force_nn(&query, index.entries(&lx).unwrap());
        let got = knn_predict(&query, &index, &lx).unwrap();
        agree += usize::from(got.instance == expected.instance);
        total += 1;
    }
    verdict(agree == total, format!("{agree}/{total} queries agree"))
}

// ---------------------------------------------------------------------------
// 3

fn random_encoder(r: &mut rand_chacha::ChaCha8Rng, seed: u64) -> (EncoderWeights, Tokenizer) {
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let mut pieces = vec!["[UNK]".to_string(), "[CLS]".into(), "[SEP]".into()];
    pieces.extend(words.iter().cloned());
    let vocab = Vocab::from_pieces(pieces).unwrap();
    let heads = r.gen_range(1..=4);
    let config = EncoderConfig {
        layers: r.gen_range(1..=4),
        heads,
        d_model: r.gen_range(2..=32),
        d_k: r.gen_range(1..=16),
        d_v: r.gen_range(1..=16),
        d_ff: r.gen_range(1..=64),
        max_positions: 64,
        vocab_size: vocab.len(),
        attention_scale: Default::default(),
    };
    (EncoderWeights::random(config, seed).unwrap(), Tokenizer::new(vocab, false))
}

fn invariants() -> Verdict {
    let mut r = rng(3);
    // attention weights and encoder layer-norm outputs
    let (mut worst_alpha, mut distributions) = (0.0f64, 0usize);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for e in 0..60 {
        let (weights, tok) = random_encoder(&mut r, e);
        let n = r.gen_range(1..=12);
        let words: Vec<String> = (0..n).map(|_| format!("w{}", r.gen_range(0..20))).collect();
        let left: Vec<String> = (0..r.gen_range(0..6)).map(|_| format!("w{}", r.gen_range(0..20))).collect();
        let input = build_context_from_parts(&words, 0, Some(&left[..]), None, ContextMode::OneSentOneSur, &tok, 64).unwrap();
        let (stack, trace) = encode_traced(&input, &weights).unwrap();
        for per_layer in &trace.weights {
            for per_head in per_layer {
                for alpha in per_head {
                    let s: f64 = alpha.iter().map(|&a| a as f64).sum();
                    worst_alpha = worst_alpha.max((s - 1.0).abs());
                    distributions += 1;
                }
            }
        }
        if weights.config.d_model >= 2 {
            for l in 0..stack.num_layers() {
                for w in 0..stack.num_words() {
                    let (m, v) = moments(stack.word(l, w));
                    if v > 0.5 {
                        worst_mean = worst_mean.max(m.abs());
                        worst_var = worst_var.max((v - 1.0).abs());
                    }
                }
            }
        }
    }
    // standalone layer norm over varied scales
    for _ in 0..1000 {
        let d = r.gen_range(2..=64);
        let scale = 10f32.powf(r.gen_range(-2.0..2.0));
        let offset = r.gen_range(-5.0..5.0);
        let v: Vec<f32> = (0..d).map(|_| offset + scale * r.gen_range(-1.0..1.0)).collect();
        let out = layer_norm(&v, &vec![1.0; d], &vec![0.0; d], LAYER_NORM_EPS).unwrap();
        let (m, var) = moments(&out);
        worst_mean = worst_mean.max(m.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    // layer-weighted output stays in the per-coordinate hull
    let mut outside = 0;
    for _ in 0..1000 {
        let l = r.gen_range(1..=6);
        let d = r.gen_range(1..=16);
        let stack = random_tensor(&mut r, vec![l, d], 2.0);
        let att = LayerAttention {
            query: random_tensor(&mut r, vec![d], 3.0),
            key_proj: random_tensor(&mut r, vec![d, d], 3.0),
        };
        let out = layer_weighted(&stack, &att).unwrap();
        for (j, &o) in out.iter().enumerate() {
            let col = (0..l).map(|i| stack.row(i)[j]);
            let lo = col.clone().fold(f32::INFINITY, f32::min);
            let hi = col.fold(f32::NEG_INFINITY, f32::max);
            outside += usize::from(o < lo || o > hi);
        }
    }
    let pass = worst_alpha <= 1e-6 && worst_mean < 1e-5 && worst_var <= 1e-4 && outside == 0;
    verdict(
        pass,
        format!(
            "{distributions} attention rows, max |sum-1| {worst_alpha:.1e}; layer norm max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}; {outside} hull violations in 1000 stacks"
        ),
    )
}

fn moments(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    (m, v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n)
}

// ---------------------------------------------------------------------------
// 4

fn identities() -> Verdict {
    let mut r = rng(4);
    let mut failures = Vec::new();
    for _ in 0..200 {
        let d = r.gen_range(1..=32);
        let h = random_tensor(&mut r, vec![d], 3.0);
        let out = glu(h.data(), &GluParams::zeros(d)).unwrap();
        if out.iter().zip(h.data()).any(|(o, x)| *o != 0.5 * x) {
            failures.push("glu");
        }

        for l in [1usize, 2, 4, 8] {
            let stack = random_tensor(&mut r, vec![l, d], 3.0);
            let att = LayerAttention {
                query: Tensor::zeros(vec![d]),
                key_proj: random_tensor(&mut r, vec![d, d], 1.0),
            };
            let out = layer_weighted(&stack, &att).unwrap();
            let mean: Vec<f32> = (0..d)
                .map(|j| ((0..l).map(|i| stack.row(i)[j] as f64).sum::<f64>() / l as f64) as f32)
                .collect();
            if out != mean {
                failures.push("lw mean");
            }
        }

        let dk = r.gen_range(1..=8);
        let q = random_tensor(&mut r, vec![dk], 5.0);
        let k = random_tensor(&mut r, vec![1, dk], 5.0);
        let dv = r.gen_range(1..=8);
        let v = random_tensor(&mut r, vec![1, dv], 5.0);
        if attention(q.data(), &k, &v, r.gen_range(0.01..4.0)).unwrap() != v.data() {
            failures.push("single key");
        }

        let senses = r.gen_range(1..=6);
        let (lx, inv) = single_lexelt_inventory(senses);
        let head = ParametricHead::init(Variant::Simple, &inv, d, 0).unwrap();
        let l = r.gen_range(1..=3);
        let feats = random_tensor(&mut r, vec![l, d], 3.0);
        let uniform = vec![(1.0 / senses as f64) as f32; senses];
        if head.distribution(&feats, &lx).unwrap() != uniform {
            failures.push("simple uniform");
        }
    }
    failures.dedup();
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "GLU(0)=h/2, LW(m=0)=mean for L in {1,2,4,8}, single-key attention=v, zero Simple=uniform; 200 draws, exact".to_string()
        } else {
            format!("mismatches: {failures:?}")
        },
    )
}

// ---------------------------------------------------------------------------
// 5, 9

fn test_accuracy(model: &HeadModel, inv: &SenseInventory, data: &Synthetic) -> f64 {
    let answers = predict_all(model, inv, &data.corpus.test, &data.features).unwrap();
    score(&answers, &data.corpus.test).unwrap().overall.accuracy
}

/// Test accuracy (percent) of every variant, in `Variant::ALL` order.
fn all_variants(data: &Synthetic) -> Vec<(Variant, f64)> {
    let train_refs: Vec<&Instance> = data.corpus.train.iter().collect();
    let dev_refs: Vec<&Instance> = data.corpus.dev.iter().collect();
    let inv = SenseInventory::from_instances(train_refs.iter().copied());
    Variant::ALL
        .iter()
        .map(|&v| {
            let out = train(&train_refs, &dev_refs, &data.features, &inv, v, &TrainConfig::default()).unwrap();
            (v, test_accuracy(&out.best.model, &inv, data))
        })
        .collect()
}

fn synthetic_learning() -> Verdict {
    let t = Instant::now();
    let data = synthetic(SynthConfig::default(), 0, ContextMode::OneSent);
    let inv = SenseInventory::from_instances(&data.corpus.train);
    let mfs = score(&mfs_answers(&inv, &data.corpus.test), &data.corpus.test).unwrap().overall.accuracy;
    let results = all_variants(&data);
    let mut pass = (mfs - 50.0).abs() <= 5.0;
    let mut parts = vec![format!("mfs {mfs:.1}")];
    for (v, acc) in &results {
        pass &= if *v == Variant::Knn { *acc >= 85.0 } else { *acc >= 95.0 };
        parts.push(format!("{v} {acc:.1}"));
    }
    pass &= t.elapsed().as_secs() < 300;
    verdict(pass, format!("1sent context, test accuracy %: {}", parts.join(", ")))
}

fn noise_ordering() -> Verdict {
    let data = synthetic(
        SynthConfig {
            label_noise: 0.2,
            ..SynthConfig::default()
        },
        0,
        ContextMode::OneSent,
    );
    let results = all_variants(&data);
    let knn = results.iter().find(|(v, _)| *v == Variant::Knn).unwrap().1;
    let margins: Vec<(Variant, f64)> = results.iter().filter(|(v, _)| *v != Variant::Knn).map(|&(v, a)| (v, a - knn)).collect();
    let pass = margins.iter().all(|(_, m)| *m >= 0.0);
    let parts: Vec<String> = margins.iter().map(|(v, m)| format!("{v} {m:+.1}")).collect();
    verdict(pass, format!("1nn {knn:.1}%; trained minus 1nn: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 6

fn protocol_fidelity() -> Verdict {
    let data = small_synthetic();
    let mut notes = Vec::new();
    let mut pass = true;

    // epoch transfer: phase 2 runs exactly E* epochs
    let mut full: Vec<Instance> = data.corpus.train.clone();
    full.extend(data.corpus.dev.iter().cloned());
    let cfg = TrainConfig {
        max_epochs: 12,
        ..TrainConfig::default()
    };
    let batches_per_epoch = full.len().div_ceil(cfg.batch_size);
    let tr = train_with_epoch_transfer(&full, 0.2, &data.features, Variant::Glu, &cfg).unwrap();
    let e = tr.best_epochs;
    let ok = e == tr.phase1.best.epoch.max(1)
        && tr.phase2.trace.epochs_run == e
        && tr.phase2.trace.epoch_losses.len() == e
        && tr.phase2.trace.updates == e * batches_per_epoch
        && tr.phase2.best.epoch == e
        && tr.phase1.trace.epochs_run == cfg.max_epochs;
    pass &= ok;
    notes.push(format!("transfer E*={e}, phase 2 ran {} epochs", tr.phase2.trace.epochs_run));

    // selection: the checkpoint is the first update with the maximal dev score
    let train_refs: Vec<&Instance> = data.corpus.train.iter().collect();
    let dev_refs: Vec<&Instance> = data.corpus.dev.iter().collect();
    let inv = SenseInventory::from_instances(train_refs.iter().copied());
    let sel_cfg = TrainConfig {
        max_epochs: 8,
        eval: EvalCadence::Updates(2),
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let out = train(&train_refs, &dev_refs, &data.features, &inv, Variant::Simple, &sel_cfg).unwrap();
    let max = out.trace.evaluations.iter().map(|p| p.dev_score).fold(f64::NEG_INFINITY, f64::max);
    let first = out.trace.evaluations.iter().find(|p| p.dev_score == max).unwrap();
    let rescored = accuracy(&out.best.model, &inv, &dev_refs, &data.features).unwrap();
    let ok = out.best.dev_score == Some(max) && out.best.update == first.update && rescored == max;
    pass &= ok;
    notes.push(format!(
        "selected update {} of {} evaluations (dev {:.3})",
        out.best.update,
        out.trace.evaluations.len(),
        max
    ));

    // three-seed mean against a hand count of correct answers
    let exp_cfg = TrainConfig {
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let ed = ExperimentData {
        train: &data.corpus.train,
        dev: &data.corpus.dev,
        test: &data.corpus.test,
        features: &data.features,
    };
    let report = run_experiment(&ed, Variant::Simple, &exp_cfg, &[0, 1, 2]).unwrap();
    let mut hand = 0.0;
    for seed in 0..3u64 {
        let c = TrainConfig { seed, ..exp_cfg.clone() };
        let best = train(&train_refs, &dev_refs, &data.features, &inv, Variant::Simple, &c).unwrap().best;
        let answers = predict_all(&best.model, &inv, &data.corpus.test, &data.features).unwrap();
        let correct = data.corpus.test.iter().filter(|i| answers.get(&i.id).is_some_and(|s| i.is_correct(s))).count();
        hand += 100.0 * correct as f64 / data.corpus.test.len() as f64;
    }
    hand /= 3.0;
    let ok = (report.mean_f1 - hand).abs() < 1e-9 && (report.mean_accuracy - hand).abs() < 1e-9;
    pass &= ok;
    notes.push(format!("3-seed mean F1 {:.4} vs hand {:.4}", report.mean_f1, hand));

    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 7

struct RunArtifacts {
    checkpoint: Vec<u8>,
    predictions: String,
    report: String,
    significance: String,
}

fn full_run() -> RunArtifacts {
    let cfg = SynthConfig {
        types: 8,
        instances_per_type: 40,
        ..SynthConfig::default()
    };
    let corpus = synth::generate(&cfg).unwrap();
    let tok = synth::tokenizer(&cfg).unwrap();
    let weights = synth::toy_encoder(&cfg, 7).unwrap();
    let features = featurize(&corpus.all(), &tok, &weights, ContextMode::OneSentOneSur).unwrap();
    let train_refs: Vec<&Instance> = corpus.train.iter().collect();
    let dev_refs: Vec<&Instance> = corpus.dev.iter().collect();
    let inv = SenseInventory::from_instances(train_refs.iter().copied());
    let tcfg = TrainConfig {
        max_epochs: 6,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&train_refs, &dev_refs, &features, &inv, Variant::GluLw, &tcfg).unwrap();
    let answers = predict_all(&out.best.model, &inv, &corpus.test, &features).unwrap();
    let knn = HeadModel::Knn(build_knn_index(&train_refs, &features).unwrap());
    let knn_answers = predict_all(&knn, &inv, &corpus.test, &features).unwrap();
    let sig = bootstrap_significance(&answers, &knn_answers, &corpus.test, 2000, 5).unwrap();
    RunArtifacts {
        checkpoint: out.best.to_store().unwrap().to_bytes().unwrap(),
        predictions: answers.to_text(),
        report: score(&answers, &corpus.test).unwrap().to_json().unwrap(),
        significance: serde_json::to_string(&sig).unwrap(),
    }
}

fn determinism() -> Verdict {
    let a = full_run();
    // second run on a single thread: results must not depend on scheduling
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(full_run);
    let same = [
        ("checkpoint", a.checkpoint == b.checkpoint),
        ("predictions", a.predictions == b.predictions),
        ("report", a.report == b.report),
        ("significance", a.significance == b.significance),
    ];
    let differing: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(n, _)| *n).collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("two runs (parallel vs 1 thread) bit-identical: {} checkpoint bytes", a.checkpoint.len())
        } else {
            format!("differs: {differing:?}")
        },
    )
}

// ---------------------------------------------------------------------------
// 8

fn gold_set(n: usize) -> Vec<Instance> {
    let lx = Lexelt::new("w", Some("n"));
    (0..n).map(|i| instance(&format!("d{i:03}"), &["w"], 0, &lx, "w%0")).collect()
}

fn answers_from(gold: &[Instance], pattern: impl Fn(usize) -> Option<bool>) -> AnswerSet {
    let mut set = AnswerSet::new();
    for (i, inst) in gold.iter().enumerate() {
        if let Some(right) = pattern(i) {
            set.insert(inst.id.clone(), Answer::Sense(if right { "w%0" } else { "w%1" }.into()));
        }
    }
    set
}

fn significance() -> Verdict {
    let mut r = rng(8);
    let mut pass = true;

    // (A, A) is never significant
    let mut min_p: f64 = 1.0;
    for k in 0..20 {
        let n = r.gen_range(5..=200);
        let gold = gold_set(n);
        let pattern: Vec<Option<bool>> = (0..n).map(|_| if r.gen_bool(0.1) { None } else { Some(r.gen_bool(0.7)) }).collect();
        let a = answers_from(&gold, |i| pattern[i]);
        let res = bootstrap_significance(&a, &a, &gold, 2000, k).unwrap();
        min_p = min_p.min(res.p_value);
    }
    pass &= min_p >= 0.05;

    // B right on every instance, A on none
    let gold = gold_set(100);
    let a = answers_from(&gold, |_| Some(false));
    let b = answers_from(&gold, |_| Some(true));
    let dominance = bootstrap_significance(&a, &b, &gold, DEFAULT_RESAMPLES, 0).unwrap().p_value;
    pass &= dominance == 0.0;

    // 20 instances: B alone right on 3, A alone right on 2, 15 ties
    let gold = gold_set(20);
    let a = answers_from(&gold, |i| Some((3..=14).contains(&i)));
    let b = answers_from(&gold, |i| Some(matches!(i, 0..=2 | 5..=14)));
    let oracle = exact_bootstrap_p(20, 3, 2);
    let p4 = bootstrap_significance(&a, &b, &gold, DEFAULT_RESAMPLES, 0).unwrap();
    let p6 = bootstrap_significance(&a, &b, &gold, 1_000_000, 0).unwrap();
    pass &= p4.better == "B" && (p4.p_value - oracle).abs() <= 0.02 && (p6.p_value - oracle).abs() <= 0.02;

    verdict(
        pass,
        format!(
            "(A,A) min p {min_p:.3}; dominance p {dominance}; crafted p {:.4} (1e4) / {:.4} (1e6) vs exact {oracle:.4}",
            p4.p_value, p6.p_value
        ),
    )
}
