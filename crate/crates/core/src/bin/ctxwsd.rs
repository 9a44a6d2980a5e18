//! `ctxwsd`: convert corpora, cache hidden stacks, train heads, predict,
//! score and compare systems.
//!
//! Every command communicates through files only and writes a
//! `<output>.manifest.json` run manifest next to its main output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ctxwsd::corpus::{load_corpus, write_native, Corpus, CorpusFormat, Instance, SenseInventory};
use ctxwsd::encoder::{ContextMode, EncoderWeights, Tokenizer, Vocab};
use ctxwsd::eval::{bootstrap_named, mfs_answers, predict_all, run_experiment, score, AnswerSet, ExperimentData};
use ctxwsd::features::{cache_manifest, encode_to_cache, load_cached_features, FeatureMap};
use ctxwsd::heads::{HeadModel, Variant};
use ctxwsd::synth::{self, SynthConfig};
use ctxwsd::trainer::{build_knn_index, train, train_fixed_epochs, train_with_epoch_transfer, Checkpoint, TrainConfig};
use ctxwsd::{Error, Result};

#[derive(Parser)]
#[command(name = "ctxwsd", version, about = "Word sense disambiguation over contextual encoder representations")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a benchmark corpus into native JSON Lines.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// native, senseval-ls or unified.
        #[arg(long, default_value = "native")]
        format: String,
        /// Answer key file (lexical-sample or all-words layout).
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Precompute hidden stacks for every instance into a cache directory.
    Encode {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long, default_value = "1sent+1sur")]
        context: ContextMode,
        #[arg(long)]
        cache_dir: PathBuf,
    },
    /// Train a head and write its checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        /// Dev corpus for checkpoint selection. Without it, `--transfer-ratio`
        /// runs the epoch-transfer protocol and `--fixed-epochs` trains blind.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        transfer_ratio: Option<f64>,
        #[arg(long)]
        fixed_epochs: Option<usize>,
        #[arg(long)]
        cache_dir: PathBuf,
        #[arg(long, default_value = "simple")]
        variant: Variant,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON training trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict senses for a corpus.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        cache_dir: PathBuf,
        /// Trained checkpoint. Not needed for `--variant 1nn` with `--train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Training corpus for 1-nn prediction without a checkpoint.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Answer the most frequent training sense instead of using a head.
        #[arg(long, conflicts_with_all = ["checkpoint", "variant"])]
        mfs: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score an answer file; optionally compare with a baseline.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        /// Second system for a bootstrap comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = ctxwsd::eval::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path; the table goes to stdout.
        #[arg(long)]
        output: PathBuf,
    },
    /// Paired bootstrap significance test between two answer files.
    Significance {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = ctxwsd::eval::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and score one variant over several seeds.
    Experiment {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        cache_dir: PathBuf,
        #[arg(long, default_value = "simple")]
        variant: Variant,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Seeds `seed, seed+1, ...`.
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the synthetic corpus, its vocabulary and a toy encoder.
    Synth {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        encoder_seed: u64,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        #[arg(long, default_value_t = 40)]
        types: usize,
        #[arg(long, default_value_t = 100)]
        instances_per_type: usize,
    },
}

#[derive(Args, Serialize)]
struct EncoderArgs {
    /// NTS1 encoder weights.
    #[arg(long)]
    weights: PathBuf,
    /// Word-piece vocabulary, one piece per line.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Args, Clone, Serialize)]
struct HyperArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Sentences per update.
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    /// Score dev every N updates instead of at each epoch end.
    #[arg(long)]
    eval_every: Option<usize>,
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            eval: self
                .eval_every
                .map_or(ctxwsd::trainer::EvalCadence::EndOfEpoch, ctxwsd::trainer::EvalCadence::Updates),
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// What a run consumed and produced, enough to repeat it.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started_unix: u64,
    finished_unix: u64,
}

struct Run {
    command: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    started: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Run {
    fn new(command: &'static str, config: serde_json::Value) -> Self {
        Self {
            command,
            config,
            inputs: BTreeMap::new(),
            started: now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = if path.is_dir() {
            // a cache directory is identified by its manifest
            sha256_file(&path.join(ctxwsd::features::MANIFEST_FILE))?
        } else {
            sha256_file(path)?
        };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<()> {
        let mut out = BTreeMap::new();
        for p in outputs {
            let digest = if p.is_dir() {
                sha256_file(&p.join(ctxwsd::features::MANIFEST_FILE))?
            } else {
                sha256_file(p)?
            };
            out.insert(p.display().to_string(), digest);
        }
        let manifest = RunManifest {
            tool: "ctxwsd",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs: out,
            started_unix: self.started,
            finished_unix: now(),
        };
        let path = manifest_path(primary);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        return primary.join("run.manifest.json");
    }
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn native(path: &Path) -> Result<Corpus> {
    load_corpus(path, &CorpusFormat::Native)
}

fn tokenizer(args: &EncoderArgs) -> Result<Tokenizer> {
    Ok(Tokenizer::new(Vocab::load(&args.vocab)?, args.lowercase))
}

fn features(cache: &Path, instances: &[Instance]) -> Result<FeatureMap> {
    load_cached_features(cache, instances, None)
}

fn cache_context(cache: &Path) -> Result<Option<String>> {
    Ok(cache_manifest(cache)?.map(|m| m.context.to_string()))
}

fn cmd_convert(input: &Path, format: &str, key: Option<PathBuf>, output: &Path) -> Result<()> {
    let mut run = Run::new("convert", serde_json::json!({ "format": format, "key": key }));
    run.input(input)?;
    let format = match format.parse::<CorpusFormat>()? {
        CorpusFormat::SensevalLexicalSample { .. } => CorpusFormat::SensevalLexicalSample { key: key.clone() },
        CorpusFormat::UnifiedAllWords { .. } => CorpusFormat::UnifiedAllWords { key: key.clone() },
        CorpusFormat::Native => CorpusFormat::Native,
    };
    if let Some(k) = &key {
        run.input(k)?;
    }
    let corpus = load_corpus(input, &format)?;
    if corpus.instances.is_empty() {
        warn!("{} contains no instances; writing an empty corpus", input.display());
    }
    write_native(output, &corpus.instances)?;
    info!("wrote {} instances to {}", corpus.instances.len(), output.display());
    run.finish(output, &[output])
}

fn cmd_encode(corpus: &Path, enc: &EncoderArgs, context: ContextMode, cache_dir: &Path) -> Result<()> {
    let mut run = Run::new("encode", serde_json::json!({ "encoder": enc, "context": context }));
    run.input(corpus)?;
    run.input(&enc.weights)?;
    run.input(&enc.vocab)?;
    let corpus = native(corpus)?;
    let tok = tokenizer(enc)?;
    let weights = EncoderWeights::load(&enc.weights)?;
    if tok.vocab().len() != weights.config.vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "vocabulary has {} pieces but the encoder expects {}",
            tok.vocab().len(),
            weights.config.vocab_size
        )));
    }
    let status = encode_to_cache(&corpus.instances, &tok, &weights, context, cache_dir)?;
    info!(
        "cache {}: {} written, {} reused, {} invalidated",
        cache_dir.display(),
        status.written,
        status.reused,
        status.invalidated
    );
    emit(&format!("written {} reused {} invalidated {}\n", status.written, status.reused, status.invalidated));
    run.finish(cache_dir, &[cache_dir])
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    train_path: &Path,
    dev_path: Option<&Path>,
    transfer_ratio: Option<f64>,
    fixed_epochs: Option<usize>,
    cache_dir: &Path,
    variant: Variant,
    hyper: &HyperArgs,
    output: &Path,
    trace_path: Option<&Path>,
) -> Result<()> {
    let config = hyper.config();
    let mut run = Run::new(
        "train",
        serde_json::json!({
            "variant": variant,
            "train_config": config,
            "transfer_ratio": transfer_ratio,
            "fixed_epochs": fixed_epochs,
            "context": cache_context(cache_dir)?,
        }),
    );
    run.input(train_path)?;
    run.input(cache_dir)?;
    let train_set = native(train_path)?.instances;
    let train_refs: Vec<&Instance> = train_set.iter().collect();
    let mut all = train_set.clone();
    let dev_set = match dev_path {
        Some(p) => {
            run.input(p)?;
            native(p)?.instances
        }
        None => Vec::new(),
    };
    all.extend(dev_set.iter().cloned());
    let feats = features(cache_dir, &all)?;
    let inventory = SenseInventory::from_instances(&train_set);

    let (checkpoint, trace) = match (dev_path, transfer_ratio, fixed_epochs) {
        (Some(_), None, None) => {
            let dev_refs: Vec<&Instance> = dev_set.iter().collect();
            let out = train(&train_refs, &dev_refs, &feats, &inventory, variant, &config)?;
            (out.best, serde_json::to_value(&out.trace)?)
        }
        (None, Some(ratio), None) => {
            let out = train_with_epoch_transfer(&train_set, ratio, &feats, variant, &config)?;
            let trace = serde_json::json!({
                "phase1": out.phase1.trace,
                "best_epochs": out.best_epochs,
                "phase2": out.phase2.trace,
            });
            (out.phase2.best, trace)
        }
        (None, None, Some(epochs)) => {
            let out = train_fixed_epochs(&train_refs, &feats, &inventory, variant, &config, epochs)?;
            (out.best, serde_json::to_value(&out.trace)?)
        }
        _ => {
            return Err(Error::invalid(
                "choose exactly one of --dev, --transfer-ratio or --fixed-epochs",
            ))
        }
    };
    if let Some(d) = checkpoint.dev_score {
        info!("selected epoch {} (update {}), dev accuracy {:.4}", checkpoint.epoch, checkpoint.update, d);
    }
    checkpoint.save(output)?;
    let mut outputs = vec![output];
    if let Some(t) = trace_path {
        write_text(t, &serde_json::to_string_pretty(&trace)?)?;
        outputs.push(t);
    }
    run.finish(output, &outputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    corpus: &Path,
    cache_dir: &Path,
    checkpoint: Option<&Path>,
    variant: Option<Variant>,
    train_path: Option<&Path>,
    mfs: bool,
    output: &Path,
) -> Result<()> {
    let mut run = Run::new(
        "predict",
        serde_json::json!({
            "variant": variant,
            "mfs": mfs,
            "context": cache_context(cache_dir)?,
        }),
    );
    run.input(corpus)?;
    let test = native(corpus)?.instances;
    let answers = if mfs {
        let train_path = train_path.ok_or_else(|| Error::invalid("--mfs needs --train"))?;
        run.input(train_path)?;
        let inv = SenseInventory::from_instances(&native(train_path)?.instances);
        mfs_answers(&inv, &test)
    } else {
        run.input(cache_dir)?;
        let (model, inventory) = match (checkpoint, train_path) {
            (Some(ckpt), _) => {
                run.input(ckpt)?;
                let c = Checkpoint::load(ckpt, None)?;
                if let Some(v) = variant.filter(|&v| v != c.model.variant()) {
                    return Err(Error::ConfigMismatch(format!(
                        "checkpoint holds a {} head, --variant asked for {v}",
                        c.model.variant()
                    )));
                }
                (c.model, c.inventory)
            }
            (None, Some(tp)) if variant == Some(Variant::Knn) => {
                run.input(tp)?;
                let train_set = native(tp)?.instances;
                let feats = features(cache_dir, &train_set)?;
                let refs: Vec<&Instance> = train_set.iter().collect();
                let index = build_knn_index(&refs, &feats)?;
                (HeadModel::Knn(index), SenseInventory::from_instances(&train_set))
            }
            _ => return Err(Error::invalid("predict needs --checkpoint, or --variant 1nn with --train")),
        };
        let feats = features(cache_dir, &test)?;
        predict_all(&model, &inventory, &test, &feats)?
    };
    write_text(output, &answers.to_text())?;
    info!("wrote {} answers to {}", answers.len(), output.display());
    run.finish(output, &[output])
}

fn cmd_eval(
    gold: &Path,
    answers: &Path,
    baseline: Option<&Path>,
    resamples: usize,
    seed: u64,
    output: &Path,
) -> Result<()> {
    let mut run = Run::new("eval", serde_json::json!({ "resamples": resamples, "seed": seed }));
    run.input(gold)?;
    run.input(answers)?;
    let gold_set = native(gold)?.instances;
    let system = AnswerSet::load(answers)?;
    let report = score(&system, &gold_set)?;
    emit(&report.to_table());
    let mut json = serde_json::to_value(&report)?;
    if let Some(b) = baseline {
        run.input(b)?;
        let base = AnswerSet::load(b)?;
        let sig = bootstrap_named(("baseline", &base), ("system", &system), &gold_set, resamples, seed)?;
        emit(&format!("{}\n", sig.summary()));
        json["significance"] = serde_json::to_value(&sig)?;
    }
    write_text(output, &serde_json::to_string_pretty(&json)?)?;
    run.finish(output, &[output])
}

fn cmd_significance(gold: &Path, a: &Path, b: &Path, resamples: usize, seed: u64, output: &Path) -> Result<()> {
    let mut run = Run::new("significance", serde_json::json!({ "resamples": resamples, "seed": seed }));
    for p in [gold, a, b] {
        run.input(p)?;
    }
    let gold_set = native(gold)?.instances;
    let sa = AnswerSet::load(a)?;
    let sb = AnswerSet::load(b)?;
    let name_a = a.display().to_string();
    let name_b = b.display().to_string();
    let sig = bootstrap_named((&name_a, &sa), (&name_b, &sb), &gold_set, resamples, seed)?;
    emit(&format!("{}\n", sig.summary()));
    write_text(output, &serde_json::to_string_pretty(&sig)?)?;
    run.finish(output, &[output])
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    train_path: &Path,
    dev_path: &Path,
    test_path: &Path,
    cache_dir: &Path,
    variant: Variant,
    hyper: &HyperArgs,
    runs: usize,
    output: &Path,
) -> Result<()> {
    let config = hyper.config();
    let seeds: Vec<u64> = (0..runs as u64).map(|i| hyper.seed + i).collect();
    let mut run = Run::new(
        "experiment",
        serde_json::json!({
            "variant": variant,
            "train_config": config,
            "seeds": seeds,
            "context": cache_context(cache_dir)?,
        }),
    );
    for p in [train_path, dev_path, test_path, cache_dir] {
        run.input(p)?;
    }
    let train_set = native(train_path)?.instances;
    let dev_set = native(dev_path)?.instances;
    let test_set = native(test_path)?.instances;
    let mut all = train_set.clone();
    all.extend(dev_set.iter().cloned());
    all.extend(test_set.iter().cloned());
    let feats = features(cache_dir, &all)?;
    let data = ExperimentData {
        train: &train_set,
        dev: &dev_set,
        test: &test_set,
        features: &feats,
    };
    let report = run_experiment(&data, variant, &config, &seeds)?;
    for r in &report.runs {
        emit(&format!("seed {:>4}  F1 {:>6.2}  epoch {}\n", r.seed, r.report.overall.f1, r.selected_epoch));
    }
    emit(&format!("mean F1 {:.2}  mean accuracy {:.2}\n", report.mean_f1, report.mean_accuracy));
    write_text(output, &serde_json::to_string_pretty(&report)?)?;
    run.finish(output, &[output])
}

fn cmd_synth(out: &Path, cfg: SynthConfig, encoder_seed: u64) -> Result<()> {
    let run = Run::new("synth", serde_json::json!({ "synth": cfg, "encoder_seed": encoder_seed }));
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let corpus = synth::generate(&cfg)?;
    let files = [
        ("train.jsonl", &corpus.train),
        ("dev.jsonl", &corpus.dev),
        ("test.jsonl", &corpus.test),
    ];
    for (name, set) in files {
        write_native(out.join(name), set)?;
    }
    let vocab = synth::vocab(&cfg)?;
    write_text(&out.join("vocab.txt"), &(vocab.pieces().join("\n") + "\n"))?;
    synth::toy_encoder(&cfg, encoder_seed)?.save(out.join("encoder.nts"))?;
    let paths: Vec<PathBuf> = ["train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "encoder.nts"]
        .iter()
        .map(|n| out.join(n))
        .collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    run.finish(out, &refs)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, format, key, output } => cmd_convert(&input, &format, key, &output),
        Command::Encode {
            corpus,
            encoder,
            context,
            cache_dir,
        } => cmd_encode(&corpus, &encoder, context, &cache_dir),
        Command::Train {
            train,
            dev,
            transfer_ratio,
            fixed_epochs,
            cache_dir,
            variant,
            hyper,
            output,
            trace,
        } => cmd_train(
            &train,
            dev.as_deref(),
            transfer_ratio,
            fixed_epochs,
            &cache_dir,
            variant,
            &hyper,
            &output,
            trace.as_deref(),
        ),
        Command::Predict {
            corpus,
            cache_dir,
            checkpoint,
            variant,
            train,
            mfs,
            output,
        } => cmd_predict(&corpus, &cache_dir, checkpoint.as_deref(), variant, train.as_deref(), mfs, &output),
        Command::Eval {
            gold,
            answers,
            baseline,
            resamples,
            seed,
            output,
        } => cmd_eval(&gold, &answers, baseline.as_deref(), resamples, seed, &output),
        Command::Significance {
            gold,
            a,
            b,
            resamples,
            seed,
            output,
        } => cmd_significance(&gold, &a, &b, resamples, seed, &output),
        Command::Experiment {
            train,
            dev,
            test,
            cache_dir,
            variant,
            hyper,
            runs,
            output,
        } => cmd_experiment(&train, &dev, &test, &cache_dir, variant, &hyper, runs, &output),
        Command::Synth {
            output_dir,
            seed,
            encoder_seed,
            label_noise,
            types,
            instances_per_type,
        } => cmd_synth(
            &output_dir,
            SynthConfig {
                seed,
                label_noise,
                types,
                instances_per_type,
                ..SynthConfig::default()
            },
            encoder_seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
