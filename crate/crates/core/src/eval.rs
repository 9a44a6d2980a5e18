//! Scoring, the MFS baseline, bootstrap significance and multi-seed runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{most_frequent_sense, Instance, SenseInventory};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::heads::{predict_with_backoff, Answer, HeadModel, Variant};
use crate::trainer::{train, Checkpoint, TrainConfig};

/// Significance threshold used when flagging a comparison.
pub const ALPHA: f64 = 0.05;
pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Predicted sense per instance id. Ids without an entry are abstentions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    answers: BTreeMap<String, Answer>,
}

impl AnswerSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, answer: Answer) {
        self.answers.insert(id.into(), answer);
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.answers.get(id).and_then(Answer::sense)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.answers.keys().map(String::as_str)
    }

    /// One `id<TAB>sense` line per answered instance, sorted by id.
    /// Abstentions are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, a) in &self.answers {
            if let Some(s) = a.sense() {
                let _ = writeln!(out, "{id}\t{s}");
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut set = AnswerSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (id, sense) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `instance-id<TAB>sense-id`".into()))?;
            if id.is_empty() || sense.is_empty() || sense.contains('\t') {
                return Err(parse_err("expected exactly two non-empty tab-separated fields".into()));
            }
            if set.answers.contains_key(id) {
                return Err(parse_err(format!("duplicate answer for `{id}`")));
            }
            set.insert(id, Answer::Sense(sense.to_string()));
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Micro-averaged counts and scores (percentages).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub total: usize,
    pub attempted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Scores {
    fn from_counts(total: usize, attempted: usize, correct: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = pct(correct, attempted);
        let recall = pct(correct, total);
        // 2PR/(P+R) simplifies to 2c/(a+t), which equals the accuracy
        // bit for bit when every instance is attempted
        let f1 = pct(2 * correct, attempted + total);
        Self {
            total,
            attempted,
            correct,
            precision,
            recall,
            f1,
            accuracy: recall,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Tally {
    total: usize,
    attempted: usize,
    correct: usize,
}

impl Tally {
    fn add(&mut self, attempted: bool, correct: bool) {
        self.total += 1;
        self.attempted += attempted as usize;
        self.correct += correct as usize;
    }

    fn scores(self) -> Scores {
        Scores::from_counts(self.total, self.attempted, self.correct)
    }
}

/// Name of the aggregate row in the genre table.
pub const ALL_GENRES: &str = "All";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_lexelt: BTreeMap<String, Scores>,
    /// Present only when the gold instances carry genres; includes an
    /// `All` row over every instance.
    pub per_genre: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table: overall, then genres, then lexelts.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>9} {:>7} {:>7} {:>7} {:>7}",
            "scope", "total", "attempted", "correct", "P", "R", "F1"
        );
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<24} {:>7} {:>9} {:>7} {:>7.2} {:>7.2} {:>7.2}",
                name, s.total, s.attempted, s.correct, s.precision, s.recall, s.f1
            );
        };
        row("overall", &self.overall);
        for (g, s) in &self.per_genre {
            row(&format!("genre:{g}"), s);
        }
        for (lx, s) in &self.per_lexelt {
            row(lx, s);
        }
        out
    }
}

/// Scores `answers` against the sense-tagged instances of `gold`. A
/// prediction is correct when it is any of the gold senses.
pub fn score(answers: &AnswerSet, gold: &[Instance]) -> Result<EvalReport> {
    let tagged: Vec<&Instance> = gold.iter().filter(|i| !i.gold_senses.is_empty()).collect();
    if tagged.is_empty() {
        return Err(Error::Empty("gold set has no sense-tagged instances".into()));
    }
    let ids: BTreeSet<&str> = gold.iter().map(|i| i.id.as_str()).collect();
    if let Some(unknown) = answers.ids().find(|id| !ids.contains(id)) {
        return Err(Error::invalid(format!("answer for unknown instance `{unknown}`")));
    }
    let mut overall = Tally::default();
    let mut lexelts: BTreeMap<String, Tally> = BTreeMap::new();
    let mut genres: BTreeMap<String, Tally> = BTreeMap::new();
    let any_genre = tagged.iter().any(|i| i.genre.is_some());
    for inst in tagged {
        let pred = answers.get(&inst.id);
        let correct = pred.is_some_and(|s| inst.is_correct(s));
        overall.add(pred.is_some(), correct);
        lexelts.entry(inst.lexelt.to_string()).or_default().add(pred.is_some(), correct);
        if any_genre {
            let g = inst.genre.clone().unwrap_or_else(|| "unknown".into());
            genres.entry(g).or_default().add(pred.is_some(), correct);
        }
    }
    let mut per_genre: BTreeMap<String, Scores> = genres.into_iter().map(|(g, t)| (g, t.scores())).collect();
    if any_genre {
        per_genre.insert(ALL_GENRES.into(), overall.scores());
    }
    Ok(EvalReport {
        overall: overall.scores(),
        per_lexelt: lexelts.into_iter().map(|(l, t)| (l, t.scores())).collect(),
        per_genre,
    })
}

/// MFS answers: each lexelt's most frequent training sense. Lexelts absent
/// from the inventory are left unanswered.
pub fn mfs_answers(inventory: &SenseInventory, instances: &[Instance]) -> AnswerSet {
    let mut set = AnswerSet::new();
    for inst in instances {
        if let Some(s) = most_frequent_sense(inventory, &inst.lexelt, None) {
            set.insert(inst.id.clone(), Answer::Sense(s.to_string()));
        }
    }
    set
}

/// Runs a trained model over `instances` with MFS backoff.
pub fn predict_all(
    model: &HeadModel,
    inventory: &SenseInventory,
    instances: &[Instance],
    features: &FeatureMap,
) -> Result<AnswerSet> {
    let rows: Vec<(String, Answer)> = instances
        .par_iter()
        .map(|inst| {
            let f = features
                .get(&inst.id)
                .ok_or_else(|| Error::invalid(format!("no features for instance {}", inst.id)))?;
            Ok((inst.id.clone(), predict_with_backoff(f, model, inventory, &inst.lexelt)?))
        })
        .collect::<Result<_>>()?;
    let mut set = AnswerSet::new();
    for (id, a) in rows {
        if a != Answer::Abstain {
            set.insert(id, a);
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// significance

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub system_a: String,
    pub system_b: String,
    /// The system with the higher full-set F1 (`B` on ties).
    pub better: String,
    /// F1(better) − F1(other) on the full set, in points.
    pub observed_difference: f64,
    pub p_value: f64,
    pub resamples: usize,
    pub seed: u64,
    pub significant: bool,
}

impl SignificanceResult {
    pub fn summary(&self) -> String {
        format!(
            "{} vs {}: better={} diff={:+.2} p={:.4} ({} resamples, seed {}) {}",
            self.system_a,
            self.system_b,
            self.better,
            self.observed_difference,
            self.p_value,
            self.resamples,
            self.seed,
            if self.significant { "significant" } else { "not significant" }
        )
    }
}

#[derive(Clone, Copy)]
struct Outcome {
    attempted: bool,
    correct: bool,
}

fn outcomes(answers: &AnswerSet, gold: &[&Instance]) -> Vec<Outcome> {
    gold.iter()
        .map(|inst| {
            let pred = answers.get(&inst.id);
            Outcome {
                attempted: pred.is_some(),
                correct: pred.is_some_and(|s| inst.is_correct(s)),
            }
        })
        .collect()
}

fn f1_of(counts: (usize, usize, usize)) -> f64 {
    Scores::from_counts(counts.0, counts.1, counts.2).f1
}

fn tally(o: &[Outcome], idx: impl Iterator<Item = usize>) -> (usize, usize, usize) {
    let mut t = (0, 0, 0);
    for i in idx {
        t.0 += 1;
        t.1 += o[i].attempted as usize;
        t.2 += o[i].correct as usize;
    }
    t
}

/// One-sided paired bootstrap test. The system with the higher F1 on the
/// full set is taken as better; p is the fraction of resamples (drawn with
/// replacement over tagged instances) in which its F1 does not exceed the
/// other's. Resample `r` draws from its own ChaCha stream, so the result is
/// independent of thread scheduling.
pub fn bootstrap_significance(
    answers_a: &AnswerSet,
    answers_b: &AnswerSet,
    gold: &[Instance],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    bootstrap_named(("A", answers_a), ("B", answers_b), gold, resamples, seed)
}

pub fn bootstrap_named(
    (name_a, answers_a): (&str, &AnswerSet),
    (name_b, answers_b): (&str, &AnswerSet),
    gold: &[Instance],
    resamples: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let tagged: Vec<&Instance> = gold.iter().filter(|i| !i.gold_senses.is_empty()).collect();
    if tagged.is_empty() {
        return Err(Error::Empty("gold set has no sense-tagged instances".into()));
    }
    let ids: BTreeSet<&str> = gold.iter().map(|i| i.id.as_str()).collect();
    for (name, set) in [(name_a, answers_a), (name_b, answers_b)] {
        if let Some(unknown) = set.ids().find(|id| !ids.contains(id)) {
            return Err(Error::invalid(format!("system {name} answers unknown instance `{unknown}`")));
        }
    }
    let a_ids: BTreeSet<&str> = answers_a.ids().collect();
    if !a_ids.is_empty() && !answers_b.is_empty() && answers_b.ids().all(|id| !a_ids.contains(id)) {
        return Err(Error::invalid("the two systems answer disjoint instance sets"));
    }

    let oa = outcomes(answers_a, &tagged);
    let ob = outcomes(answers_b, &tagged);
    let n = tagged.len();
    let full_a = f1_of(tally(&oa, 0..n));
    let full_b = f1_of(tally(&ob, 0..n));
    let b_better = full_b >= full_a;
    let (better, worse, better_name) = if b_better { (&ob, &oa, name_b) } else { (&oa, &ob, name_a) };

    let reversals: usize = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let fb = f1_of(tally(better, idx.iter().copied()));
            let fw = f1_of(tally(worse, idx.iter().copied()));
            usize::from(fb - fw <= 0.0)
        })
        .sum();
    let p_value = reversals as f64 / resamples as f64;
    Ok(SignificanceResult {
        system_a: name_a.into(),
        system_b: name_b.into(),
        better: better_name.into(),
        observed_difference: (full_b - full_a).abs(),
        p_value,
        resamples,
        seed,
        significant: p_value < ALPHA,
    })
}

// ---------------------------------------------------------------------------
// experiments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub dev_score: Option<f64>,
    pub selected_epoch: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub runs: Vec<RunResult>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
}

/// Data for one experiment: partitions plus precomputed features for all
/// of them.
pub struct ExperimentData<'a> {
    pub train: &'a [Instance],
    pub dev: &'a [Instance],
    pub test: &'a [Instance],
    pub features: &'a FeatureMap,
}

/// Trains (where applicable) and scores `variant` once per seed.
pub fn run_experiment(
    data: &ExperimentData<'_>,
    variant: Variant,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one run is required"));
    }
    let inventory = SenseInventory::from_instances(data.train);
    let train_refs: Vec<&Instance> = data.train.iter().collect();
    let dev_refs: Vec<&Instance> = data.dev.iter().collect();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        let outcome = train(&train_refs, &dev_refs, data.features, &inventory, variant, &cfg)?;
        let Checkpoint { model, dev_score, epoch, .. } = outcome.best;
        let answers = predict_all(&model, &inventory, data.test, data.features)?;
        runs.push(RunResult {
            seed,
            dev_score,
            selected_epoch: epoch,
            report: score(&answers, data.test)?,
        });
    }
    let k = runs.len() as f64;
    let mean_f1 = runs.iter().map(|r| r.report.overall.f1).sum::<f64>() / k;
    let mean_accuracy = runs.iter().map(|r| r.report.overall.accuracy).sum::<f64>() / k;
    Ok(ExperimentReport {
        variant,
        runs,
        mean_f1,
        mean_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lexelt;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gold(n: usize) -> Vec<Instance> {
        (0..n)
            .map(|i| Instance {
                id: format!("i{i:03}"),
                words: vec!["w".into()],
                target_index: 0,
                lexelt: Lexelt::new("w", Some("n")),
                gold_senses: vec!["yes".into()],
                left: None,
                right: None,
                genre: Some(if i % 2 == 0 { "nw" } else { "bc" }.into()),
                sentence: None,
            })
            .collect()
    }

    fn answers(gold: &[Instance], correct: impl Fn(usize) -> Option<bool>) -> AnswerSet {
        let mut set = AnswerSet::new();
        for (i, inst) in gold.iter().enumerate() {
            if let Some(c) = correct(i) {
                set.insert(inst.id.clone(), Answer::Sense(if c { "yes" } else { "no" }.into()));
            }
        }
        set
    }

    #[test]
    fn score_examples() {
        let g = gold(4);
        assert_eq!(score(&answers(&g, |_| Some(true)), &g).unwrap().overall.f1, 100.0);
        let r = score(&answers(&g, |i| Some(i != 3)), &g).unwrap();
        assert_eq!(r.overall.f1, 75.0);
        assert_eq!(r.overall.accuracy, 75.0);
        let r = score(&answers(&g, |i| (i < 2).then_some(true)), &g).unwrap();
        assert_eq!(r.overall.precision, 100.0);
        assert_eq!(r.overall.recall, 50.0);
        assert_abs_diff_eq!(r.overall.f1, 200.0 / 3.0, epsilon = 1e-9);
        assert_eq!(format!("{:.1}", r.overall.f1), "66.7");
        assert_eq!(r.per_genre[ALL_GENRES], r.overall);
        assert_eq!(r.per_genre["nw"].total, 2);
    }

    #[test]
    fn score_errors() {
        let g = gold(2);
        let mut a = AnswerSet::new();
        a.insert("ghost", Answer::Sense("yes".into()));
        assert!(score(&a, &g).is_err());
        assert!(score(&AnswerSet::new(), &[]).is_err());
    }

    #[test]
    fn answer_file_roundtrip() {
        let g = gold(3);
        let a = answers(&g, |i| (i != 1).then_some(i == 0));
        let text = a.to_text();
        assert_eq!(text, "i000\tyes\ni002\tno\n");
        assert_eq!(AnswerSet::parse(&text, Path::new("a.txt")).unwrap(), a);
        let err = AnswerSet::parse("i000 yes\n", Path::new("a.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(AnswerSet::parse("a\tb\na\tc\n", Path::new("a.txt")).is_err());
    }

    #[test]
    fn bootstrap_identical_is_not_significant() {
        let g = gold(30);
        let a = answers(&g, |i| Some(i % 3 != 0));
        let r = bootstrap_significance(&a, &a, &g, 500, 7).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn bootstrap_dominance_gives_zero() {
        let g = gold(100);
        let a = answers(&g, |_| Some(false));
        let b = answers(&g, |_| Some(true));
        let r = bootstrap_significance(&a, &b, &g, 1000, 1).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.better, "B");
        assert_eq!(r.observed_difference, 100.0);
        let r = bootstrap_significance(&b, &a, &g, 1000, 1).unwrap();
        assert_eq!(r.better, "A");
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let g = gold(40);
        let a = answers(&g, |i| Some(i % 2 == 0));
        let b = answers(&g, |i| Some(i % 3 != 0));
        let r1 = bootstrap_significance(&a, &b, &g, 2000, 11).unwrap();
        let r2 = bootstrap_significance(&a, &b, &g, 2000, 11).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn bootstrap_rejects_disjoint_sets() {
        let g = gold(4);
        let a = answers(&g, |i| (i < 2).then_some(true));
        let b = answers(&g, |i| (i >= 2).then_some(true));
        assert!(bootstrap_significance(&a, &b, &g, 10, 0).is_err());
    }

    #[test]
    fn mfs_answers_cover_known_lexelts() {
        let g = gold(3);
        let inv = SenseInventory::from_instances(&g);
        let a = mfs_answers(&inv, &g);
        assert_eq!(a.len(), 3);
        assert_eq!(score(&a, &g).unwrap().overall.accuracy, 100.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_full_coverage_identity(
            correct in prop::collection::vec(any::<bool>(), 1..60),
            rot in 0usize..60,
        ) {
            let g = gold(correct.len());
            let a = answers(&g, |i| Some(correct[i]));
            let r = score(&a, &g).unwrap();
            prop_assert_eq!(r.overall.f1, r.overall.accuracy);
            let mut shuffled = g.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            prop_assert_eq!(score(&a, &shuffled).unwrap(), r);
        }

        #[test]
        fn adding_a_correct_answer_is_monotone(
            answered in prop::collection::vec(prop::option::of(any::<bool>()), 2..40),
        ) {
            let g = gold(answered.len());
            let before = score(&answers(&g, |i| answered[i]), &g).unwrap().overall;
            if let Some(k) = answered.iter().position(Option::is_none) {
                let after = score(&answers(&g, |i| if i == k { Some(true) } else { answered[i] }), &g).unwrap().overall;
                prop_assert!(after.precision >= before.precision);
                prop_assert!(after.recall >= before.recall);
                prop_assert!(after.f1 >= before.f1);
            }
        }
    }
}
