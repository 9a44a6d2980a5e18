//! Sense-annotated corpora: instances, lexelts, sense inventories, splits.
//!
//! The native on-disk format is JSON Lines, one instance per line:
//!
//! ```text
//! {"id":"bank.1","words":["the","bank","closed"],"target_index":1,
//!  "lemma":"bank","pos":"n","senses":["bank%1"],
//!  "left":["..."],"right":["..."],"genre":"nw","sentence":"doc1.s3"}
//! ```
//!
//! `pos`, `left`, `right`, `genre` and `sentence` are optional; `senses`
//! may be empty for unlabeled instances.

mod convert;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use convert::{parse_senseval_lexical_sample, parse_unified_all_words, read_key_file};

use crate::error::{Error, Result};

/// Lexical element keying a classifier: lemma plus an optional POS tag.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lexelt {
    pub lemma: String,
    pub pos: Option<String>,
}

impl Lexelt {
    pub fn new(lemma: impl Into<String>, pos: Option<&str>) -> Self {
        Self {
            lemma: lemma.into(),
            pos: pos.map(str::to_string),
        }
    }
}

impl fmt::Display for Lexelt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.pos {
            Some(p) => write!(f, "{}.{}", self.lemma, p),
            None => f.write_str(&self.lemma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub words: Vec<String>,
    pub target_index: usize,
    pub lexelt: Lexelt,
    /// Gold senses; the first is the one used as the training target.
    pub gold_senses: Vec<String>,
    pub left: Option<Vec<String>>,
    pub right: Option<Vec<String>>,
    pub genre: Option<String>,
    pub sentence: Option<String>,
}

impl Instance {
    /// Key grouping instances that share a sentence; mini-batches are
    /// built from whole sentences.
    pub fn sentence_key(&self) -> &str {
        self.sentence.as_deref().unwrap_or(&self.id)
    }

    pub fn target_word(&self) -> &str {
        &self.words[self.target_index]
    }

    pub fn is_correct(&self, sense: &str) -> bool {
        self.gold_senses.iter().any(|g| g == sense)
    }
}

#[derive(Serialize, Deserialize)]
struct NativeRecord {
    id: String,
    words: Vec<String>,
    target_index: usize,
    lemma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
    #[serde(default)]
    senses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence: Option<String>,
}

impl From<&Instance> for NativeRecord {
    fn from(i: &Instance) -> Self {
        NativeRecord {
            id: i.id.clone(),
            words: i.words.clone(),
            target_index: i.target_index,
            lemma: i.lexelt.lemma.clone(),
            pos: i.lexelt.pos.clone(),
            senses: i.gold_senses.clone(),
            left: i.left.clone(),
            right: i.right.clone(),
            genre: i.genre.clone(),
            sentence: i.sentence.clone(),
        }
    }
}

/// Ordered senses of one lexelt with their training frequencies.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub senses: Vec<String>,
    pub counts: Vec<u64>,
}

impl SenseEntry {
    pub fn index_of(&self, sense: &str) -> Option<usize> {
        self.senses.iter().position(|s| s == sense)
    }

    pub fn len(&self) -> usize {
        self.senses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senses.is_empty()
    }
}

/// Per-lexelt sense lists. Senses are sorted lexicographically, which
/// fixes each sense's output index independently of instance order.
/// Counts credit only the first gold sense of each instance, so they sum to
/// the lexelt's labeled-instance count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(Lexelt, SenseEntry)>", into = "Vec<(Lexelt, SenseEntry)>")]
pub struct SenseInventory {
    entries: BTreeMap<Lexelt, SenseEntry>,
}

// JSON maps need string keys, so the inventory travels as ordered pairs.
impl From<Vec<(Lexelt, SenseEntry)>> for SenseInventory {
    fn from(pairs: Vec<(Lexelt, SenseEntry)>) -> Self {
        Self {
            entries: pairs.into_iter().collect(),
        }
    }
}

impl From<SenseInventory> for Vec<(Lexelt, SenseEntry)> {
    fn from(inv: SenseInventory) -> Self {
        inv.entries.into_iter().collect()
    }
}

impl SenseInventory {
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Self {
        let mut senses: BTreeMap<Lexelt, BTreeSet<String>> = BTreeMap::new();
        let mut firsts: Vec<(&Lexelt, &str)> = Vec::new();
        for inst in instances {
            if inst.gold_senses.is_empty() {
                continue;
            }
            let set = senses.entry(inst.lexelt.clone()).or_default();
            set.extend(inst.gold_senses.iter().cloned());
            firsts.push((&inst.lexelt, &inst.gold_senses[0]));
        }
        let mut entries: BTreeMap<Lexelt, SenseEntry> = senses
            .into_iter()
            .map(|(lx, set)| {
                let senses: Vec<String> = set.into_iter().collect();
                let counts = vec![0; senses.len()];
                (lx, SenseEntry { senses, counts })
            })
            .collect();
        for (lx, sense) in firsts {
            let e = entries.get_mut(lx).expect("lexelt registered above");
            let i = e.index_of(sense).expect("sense registered above");
            e.counts[i] += 1;
        }
        Self { entries }
    }

    pub fn get(&self, lexelt: &Lexelt) -> Option<&SenseEntry> {
        self.entries.get(lexelt)
    }

    pub fn contains(&self, lexelt: &Lexelt) -> bool {
        self.entries.contains_key(lexelt)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Lexelt, &SenseEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, lexelt: Lexelt, entry: SenseEntry) {
        self.entries.insert(lexelt, entry);
    }

    /// SHA-256 over the canonical JSON form; used to pair checkpoints with
    /// the inventory they were trained against.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.entries.iter().collect::<Vec<_>>())
            .expect("inventory serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// Fails if any instance carries a gold sense unknown to its lexelt.
    pub fn check_instances(&self, instances: &[Instance]) -> Result<()> {
        for inst in instances {
            if inst.gold_senses.is_empty() {
                continue;
            }
            let entry = self.get(&inst.lexelt).ok_or_else(|| {
                Error::invalid(format!("instance {}: lexelt {} not in inventory", inst.id, inst.lexelt))
            })?;
            if let Some(s) = inst.gold_senses.iter().find(|s| entry.index_of(s).is_none()) {
                return Err(Error::invalid(format!(
                    "instance {}: sense `{s}` outside the inventory of {}",
                    inst.id, inst.lexelt
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub inventory: SenseInventory,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Self {
        let inventory = SenseInventory::from_instances(&instances);
        Self { instances, inventory }
    }
}

/// Input formats accepted by [`load_corpus`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// JSON Lines records (see module docs).
    Native,
    /// Senseval-2/3 English lexical-sample XML; answers inline or in an
    /// optional key file (`lexelt instance sense...` per line).
    SensevalLexicalSample { key: Option<PathBuf> },
    /// Unified all-words XML (`<corpus><text><sentence><wf|instance>`) with a
    /// gold key file (`instance-id sense...`). When no key is given,
    /// `<stem>.gold.key.txt` next to a `<stem>.data.xml` input is used if present.
    UnifiedAllWords { key: Option<PathBuf> },
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(CorpusFormat::Native),
            "senseval-ls" => Ok(CorpusFormat::SensevalLexicalSample { key: None }),
            "unified" => Ok(CorpusFormat::UnifiedAllWords { key: None }),
            other => Err(Error::invalid(format!(
                "unknown corpus format `{other}` (expected native, senseval-ls, unified)"
            ))),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_corpus(path: impl AsRef<Path>, format: &CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let instances = match format {
        CorpusFormat::Native => parse_native(&text, path)?,
        CorpusFormat::SensevalLexicalSample { key } => {
            let key = key.as_deref().map(read_key_file).transpose()?;
            parse_senseval_lexical_sample(&text, path, key.as_ref())?
        }
        CorpusFormat::UnifiedAllWords { key } => {
            let key_path = key.clone().or_else(|| {
                let name = path.file_name()?.to_str()?;
                let stem = name.strip_suffix(".data.xml")?;
                let candidate = path.with_file_name(format!("{stem}.gold.key.txt"));
                candidate.exists().then_some(candidate)
            });
            let key = key_path.as_deref().map(read_key_file).transpose()?;
            parse_unified_all_words(&text, path, key.as_ref())?
        }
    };
    Ok(Corpus::new(instances))
}

/// Parses native JSON Lines. Blank lines are skipped.
pub fn parse_native(text: &str, path: &Path) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut scheme: Option<bool> = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: NativeRecord =
            serde_json::from_str(line).map_err(|e| perr(format!("malformed record: {e}")))?;
        let inst = instance_from_record(rec).map_err(perr)?;
        let has_pos = inst.lexelt.pos.is_some();
        if *scheme.get_or_insert(has_pos) != has_pos {
            return Err(perr("lexelts mix lemma+pos and lemma-only forms".into()));
        }
        if !seen.insert(inst.id.clone()) {
            return Err(perr(format!("duplicate instance id `{}`", inst.id)));
        }
        out.push(inst);
    }
    Ok(out)
}

fn instance_from_record(rec: NativeRecord) -> std::result::Result<Instance, String> {
    if rec.words.is_empty() {
        return Err(format!("instance `{}` has no words", rec.id));
    }
    if rec.target_index >= rec.words.len() {
        return Err(format!(
            "instance `{}`: target_index {} out of range for {} words (valid 0..={})",
            rec.id,
            rec.target_index,
            rec.words.len(),
            rec.words.len() - 1
        ));
    }
    let mut senses = Vec::with_capacity(rec.senses.len());
    for s in rec.senses {
        if !senses.contains(&s) {
            senses.push(s);
        }
    }
    Ok(Instance {
        id: rec.id,
        words: rec.words,
        target_index: rec.target_index,
        lexelt: Lexelt {
            lemma: rec.lemma,
            pos: rec.pos,
        },
        gold_senses: senses,
        left: rec.left.filter(|w| !w.is_empty()),
        right: rec.right.filter(|w| !w.is_empty()),
        genre: rec.genre,
        sentence: rec.sentence,
    })
}

pub fn to_native_string(instances: &[Instance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&NativeRecord::from(inst))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_native(path: impl AsRef<Path>, instances: &[Instance]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(to_native_string(instances)?.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub assignment: BTreeMap<String, Partition>,
    /// Lexelts with a single instance; kept entirely in train.
    pub flagged: Vec<Lexelt>,
}

impl SplitPlan {
    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        self.assignment.get(id).copied()
    }

    pub fn select<'a>(&self, instances: &'a [Instance], part: Partition) -> Vec<&'a Instance> {
        instances
            .iter()
            .filter(|i| self.partition_of(&i.id) == Some(part))
            .collect()
    }
}

/// Moves `ceil(ratio * count)` instances of every lexelt into dev using a
/// seeded shuffle, always leaving at least one instance in train.
pub fn make_lexical_sample_split(instances: &[Instance], ratio: f64, seed: u64) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("dev ratio {ratio} outside (0, 1)")));
    }
    let mut groups: BTreeMap<&Lexelt, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        groups.entry(&inst.lexelt).or_default().push(&inst.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan::default();
    for (lexelt, mut ids) in groups {
        let count = ids.len();
        if count == 1 {
            plan.flagged.push(lexelt.clone());
            plan.assignment.insert(ids[0].to_string(), Partition::Train);
            continue;
        }
        ids.shuffle(&mut rng);
        // tolerance keeps e.g. 0.2 * 15 from rounding up to 4
        let dev = ((ratio * count as f64 - 1e-9).ceil() as usize).clamp(1, count - 1);
        for (k, id) in ids.into_iter().enumerate() {
            let part = if k < dev { Partition::Dev } else { Partition::Train };
            plan.assignment.insert(id.to_string(), part);
        }
    }
    Ok(plan)
}

/// Most frequent training sense of `lexelt`, ties broken by inventory
/// order. Lexelts absent from the inventory use `fallback` when it has an
/// entry. `None` marks an unknown lexelt.
pub fn most_frequent_sense<'a>(
    inventory: &'a SenseInventory,
    lexelt: &Lexelt,
    fallback: Option<&'a BTreeMap<Lexelt, String>>,
) -> Option<&'a str> {
    if let Some(entry) = inventory.get(lexelt).filter(|e| !e.is_empty()) {
        let mut best = 0;
        for (i, &c) in entry.counts.iter().enumerate() {
            if c > entry.counts[best] {
                best = i;
            }
        }
        return Some(&entry.senses[best]);
    }
    fallback.and_then(|f| f.get(lexelt)).map(String::as_str)
}
