//! The four adversary patterns for both attack flows, plus partitioning.

pub mod classification;
pub mod generation;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Role;
use crate::seed::derived_rng;
use crate::text::Document;

pub use classification::{
    assemble_attack_dataset, run_classification_attack, AttackConfig, Balance,
    ClassificationAttackReport, ClassificationConfig, ClassificationOutcome, Hygiene, ModelQuality,
};
pub use generation::{
    run_generation_attack, GenerationAttackReport, GenerationConfig, GenerationOutcome,
    SequencePoint,
};

/// Wall-clock seconds spent in one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

pub(crate) struct Stopwatch {
    last: std::time::Instant,
    pub timings: Vec<StageTiming>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch {
            last: std::time::Instant::now(),
            timings: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = std::time::Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Smallest corpus [`partition`] accepts.
pub const MIN_CORPUS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Black box, shadow trained from scratch on distribution-matched data.
    Adv1,
    /// Shadow initialized from the victim's parameters.
    Adv2,
    /// Shadow trained on an auxiliary corpus plus a slice of the shadow data.
    Adv3,
    /// Shadow data extended with leaked victim training documents.
    Adv4,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Adv1 => "adv1",
            Pattern::Adv2 => "adv2",
            Pattern::Adv3 => "adv3",
            Pattern::Adv4 => "adv4",
        }
    }

    pub fn role(self) -> Role {
        match self {
            Pattern::Adv1 => Role::DAd1,
            Pattern::Adv2 => Role::DAd2,
            Pattern::Adv3 => Role::DAd3,
            Pattern::Adv4 => Role::DAd4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub pattern: Pattern,
    #[serde(default = "default_fraction")]
    pub shadow_mix_fraction: f64,
    #[serde(default = "default_fraction")]
    pub victim_leak_fraction: f64,
    #[serde(default)]
    pub aux_corpus_id: Option<String>,
    #[serde(default = "default_n_generate")]
    pub n_generate: usize,
}

fn default_fraction() -> f64 {
    0.1
}

fn default_n_generate() -> usize {
    1000
}

pub const LEAK_RANGE: std::ops::RangeInclusive<f64> = 0.1..=0.5;

impl AdversarySpec {
    pub fn new(pattern: Pattern) -> Self {
        AdversarySpec {
            pattern,
            shadow_mix_fraction: default_fraction(),
            victim_leak_fraction: default_fraction(),
            aux_corpus_id: None,
            n_generate: default_n_generate(),
        }
    }

    pub fn with_aux(mut self, id: &str) -> Self {
        self.aux_corpus_id = Some(id.to_string());
        self
    }

    pub fn with_leak(mut self, fraction: f64) -> Self {
        self.victim_leak_fraction = fraction;
        self
    }

    pub fn with_n_generate(mut self, n: usize) -> Self {
        self.n_generate = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern == Pattern::Adv3 && self.aux_corpus_id.is_none() {
            return Err(Error::Config("adv3 requires aux_corpus_id".into()));
        }
        if self.pattern == Pattern::Adv4 && !LEAK_RANGE.contains(&self.victim_leak_fraction) {
            return Err(Error::Config(format!(
                "adv4 victim_leak_fraction {} is outside [0.1, 0.5]",
                self.victim_leak_fraction
            )));
        }
        if !(self.shadow_mix_fraction > 0.0 && self.shadow_mix_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "shadow_mix_fraction {} is outside (0, 1]",
                self.shadow_mix_fraction
            )));
        }
        if self.n_generate == 0 {
            return Err(Error::Config("n_generate must be at least 1".into()));
        }
        Ok(())
    }

    /// Short stable label used in run directory names.
    pub fn label(&self) -> String {
        match self.pattern {
            Pattern::Adv4 => format!("adv4-leak{}", self.victim_leak_fraction),
            Pattern::Adv3 => format!("adv3-mix{}", self.shadow_mix_fraction),
            p => p.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub d_victim_train: Vec<Document>,
    pub d_victim_test: Vec<Document>,
    pub d_shadow_train: Vec<Document>,
    pub d_shadow_test: Vec<Document>,
    /// Auxiliary corpora by id; only adv3 trains on one of them, but every
    /// pattern shares the vocabulary built over all of them.
    pub d_aux: BTreeMap<String, Vec<Document>>,
    pub partition_seed: u64,
}

impl DatasetBundle {
    pub fn all_documents(&self) -> impl Iterator<Item = &Document> {
        self.d_victim_train
            .iter()
            .chain(&self.d_victim_test)
            .chain(&self.d_shadow_train)
            .chain(&self.d_shadow_test)
            .chain(self.d_aux.values().flatten())
    }

    /// Errors if any document id appears in two partitions.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in self.all_documents() {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Config(format!(
                    "document id {} appears in more than one partition",
                    d.id
                )));
            }
        }
        Ok(())
    }
}

fn train_share(n: usize) -> usize {
    // round(0.8 n), halves rounded up
    (4 * n + 2) / 5
}

/// Seeded, label-stratified split into victim/shadow halves, each further
/// split 80/20 into train/test. `aux` is carried through unchanged.
pub fn partition(
    corpus: &[Document],
    aux: &BTreeMap<String, Vec<Document>>,
    seed: u64,
) -> Result<DatasetBundle> {
    if corpus.len() < MIN_CORPUS {
        return Err(Error::CorpusTooSmall {
            minimum: MIN_CORPUS,
            actual: corpus.len(),
        });
    }
    let labelled = corpus.iter().filter(|d| d.label.is_some()).count();
    if labelled != 0 && labelled != corpus.len() {
        return Err(Error::Config(
            "corpus mixes labelled and unlabelled documents".into(),
        ));
    }
    let n = corpus.len();
    let victim = n / 2;
    let shadow = n - victim;
    let sizes = [
        train_share(victim),
        victim - train_share(victim),
        train_share(shadow),
        shadow - train_share(shadow),
    ];

    let mut groups: BTreeMap<Option<&str>, Vec<&Document>> = BTreeMap::new();
    for d in corpus {
        groups.entry(d.label.as_deref()).or_default().push(d);
    }
    let class_sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let alloc = controlled_rounding(&class_sizes, &sizes);

    let mut rng = derived_rng(seed, "partition");
    let mut splits: [Vec<Document>; 4] = Default::default();
    for (c, docs) in groups.values_mut().enumerate() {
        docs.shuffle(&mut rng);
        let mut it = docs.iter();
        for (j, split) in splits.iter_mut().enumerate() {
            split.extend(it.by_ref().take(alloc[c][j]).map(|d| (*d).clone()));
        }
    }
    for split in splits.iter_mut() {
        split.shuffle(&mut rng);
    }
    let [d_victim_train, d_victim_test, d_shadow_train, d_shadow_test] = splits;
    let bundle = DatasetBundle {
        d_victim_train,
        d_victim_test,
        d_shadow_train,
        d_shadow_test,
        d_aux: aux.clone(),
        partition_seed: seed,
    };
    bundle.check_disjoint()?;
    Ok(bundle)
}

/// Integer matrix with the given row and column sums whose every entry is
/// the floor or the ceiling of its proportional target `row·col/total`.
fn controlled_rounding(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = rows.iter().sum();
    let mut alloc: Vec<Vec<usize>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| r * c / total).collect())
        .collect();
    let mut row_left: Vec<usize> = rows
        .iter()
        .zip(&alloc)
        .map(|(&r, a)| r - a.iter().sum::<usize>())
        .collect();
    let mut col_left: Vec<usize> = (0..cols.len())
        .map(|j| cols[j] - alloc.iter().map(|a| a[j]).sum::<usize>())
        .collect();
    // Distribute the remaining ones greedily: rows with the largest demand
    // first, each into the columns with the largest remaining capacity.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(row_left[i]));
    for i in order {
        let mut targets: Vec<usize> = (0..cols.len()).collect();
        targets.sort_by_key(|&j| std::cmp::Reverse(col_left[j]));
        for &j in targets.iter().take(row_left[i]) {
            alloc[i][j] += 1;
            col_left[j] -= 1;
        }
        row_left[i] = 0;
    }
    alloc
}

/// Documents the shadow model trains on for `spec`, identical across both
/// attack flows.
pub fn shadow_training_docs(
    spec: &AdversarySpec,
    bundle: &DatasetBundle,
    seed: u64,
) -> Result<Vec<Document>> {
    spec.validate()?;
    let mut docs = match spec.pattern {
        Pattern::Adv1 | Pattern::Adv2 => return Ok(bundle.d_shadow_train.clone()),
        Pattern::Adv3 => {
            let id = spec.aux_corpus_id.as_deref().unwrap_or_default();
            let aux = match bundle.d_aux.get(id) {
                Some(docs) if !docs.is_empty() => docs,
                Some(_) => return Err(Error::Config(format!("auxiliary corpus {id:?} is empty"))),
                None => return Err(Error::Config(format!("no auxiliary corpus named {id:?}"))),
            };
            let take = fraction_of(bundle.d_shadow_train.len(), spec.shadow_mix_fraction);
            let mut docs = aux.clone();
            docs.extend(nested_sample(&bundle.d_shadow_train, take, seed, "adv3-mix"));
            docs
        }
        Pattern::Adv4 => {
            let take = fraction_of(bundle.d_victim_train.len(), spec.victim_leak_fraction);
            let mut docs = bundle.d_shadow_train.clone();
            docs.extend(nested_sample(&bundle.d_victim_train, take, seed, "adv4-leak"));
            docs
        }
    };
    docs.shuffle(&mut derived_rng(seed, "shadow-docs"));
    Ok(docs)
}

fn fraction_of(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.max(1))
}

/// The first `take` documents of one seeded permutation, so samples for
/// increasing `take` are nested.
fn nested_sample(docs: &[Document], take: usize, seed: u64, label: &str) -> Vec<Document> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut derived_rng(seed, label));
    order.into_iter().take(take).map(|i| docs[i].clone()).collect()
}
