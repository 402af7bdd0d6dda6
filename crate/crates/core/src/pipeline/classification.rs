//! Classification-task attack: shadow posteriors train a membership
//! classifier that is then evaluated on the victim's posteriors.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{shadow_training_docs, AdversarySpec, DatasetBundle, Pattern, StageTiming, Stopwatch};
use crate::attack::{
    compute_metrics, default_feature_k, macro_f1, mlp_train, rf_train, AttackDataset,
    AttackMetrics, AttackModel, ForestConfig, Membership, MlpConfig, PosteriorRecord,
};
use crate::classifier::{
    clf_accuracy, clf_posteriors, clf_train_from, ClassifierParams, ClfTrainConfig,
    LabeledExample, TrainingNoise,
};
use crate::defense::{perturb_posteriors, Defense};
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::seed::{derive_seed, derived_rng};
use crate::text::{build_vocab_limited, label_set, Document, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mlp: MlpConfig,
    pub rf: ForestConfig,
    /// Posterior features kept per record; defaults to `min(C, 10)`.
    pub feature_k: Option<usize>,
    /// Share of D_attack held out to report attack-model generalization.
    pub holdout_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mlp: MlpConfig::default(),
            rf: ForestConfig::default(),
            feature_k: None,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationConfig {
    pub classifier: ClfTrainConfig,
    pub attack: AttackConfig,
    pub max_vocab: usize,
    pub min_count: usize,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            classifier: ClfTrainConfig::default(),
            attack: AttackConfig::default(),
            max_vocab: 8000,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub members: usize,
    pub nonmembers: usize,
    /// Records dropped from the larger side.
    pub discarded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelQuality {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hygiene {
    /// Victim-emitted records found in the attack training set.
    pub victim_records_in_training: usize,
    /// Record ids shared by the attack training and evaluation sets.
    pub shared_record_ids: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationAttackReport {
    pub pattern: Pattern,
    pub spec: AdversarySpec,
    pub seed: u64,
    pub defense: Defense,
    pub config: ClassificationConfig,
    pub num_classes: usize,
    pub feature_k: usize,
    pub shadow_training_docs: usize,
    /// Attack metrics on the victim's posteriors.
    pub mlp: AttackMetrics,
    pub rf: AttackMetrics,
    /// Attack metrics on the held-out part of D_attack.
    pub mlp_holdout: AttackMetrics,
    pub rf_holdout: AttackMetrics,
    pub shadow_quality: ModelQuality,
    pub victim_quality: ModelQuality,
    pub attack_balance: Balance,
    pub evaluation_balance: Balance,
    pub hygiene: Hygiene,
}

#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    pub report: ClassificationAttackReport,
    pub attack_train: Vec<PosteriorRecord>,
    pub attack_holdout: Vec<PosteriorRecord>,
    pub victim_eval: Vec<PosteriorRecord>,
    pub mlp: AttackModel,
    pub rf: AttackModel,
    pub victim: ClassifierParams,
    pub shadow: ClassifierParams,
    pub timings: Vec<StageTiming>,
}

/// Labels shadow-train posteriors as members and shadow-test posteriors as
/// nonmembers, then down-samples the larger side (seeded) to balance.
pub fn assemble_attack_dataset(
    members: Vec<PosteriorRecord>,
    nonmembers: Vec<PosteriorRecord>,
    feature_k: usize,
    seed: u64,
) -> Result<(AttackDataset, Balance)> {
    if members.is_empty() {
        return Err(Error::EmptyInput { what: "member posteriors" });
    }
    if nonmembers.is_empty() {
        return Err(Error::EmptyInput {
            what: "nonmember posteriors",
        });
    }
    let m = members.len().min(nonmembers.len());
    let discarded = members.len() + nonmembers.len() - 2 * m;
    let mut records = down_sample(members, m, seed, "balance-members", Membership::Member);
    records.extend(down_sample(nonmembers, m, seed, "balance-nonmembers", Membership::Nonmember));
    let balance = Balance {
        members: m,
        nonmembers: m,
        discarded,
    };
    Ok((AttackDataset::new(records, feature_k)?, balance))
}

/// Keeps `m` records chosen by a seeded permutation, in their original order.
fn down_sample(
    records: Vec<PosteriorRecord>,
    m: usize,
    seed: u64,
    label: &str,
    membership: Membership,
) -> Vec<PosteriorRecord> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    if m < records.len() {
        idx.shuffle(&mut derived_rng(seed, label));
        idx.truncate(m);
        idx.sort_unstable();
    }
    let keep: HashSet<usize> = idx.into_iter().collect();
    records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, mut r)| {
            r.membership = membership;
            r
        })
        .collect()
}

/// Stratified by membership: the first `holdout` share of each class (after
/// a seeded shuffle) is held out.
fn split_holdout(
    data: &AttackDataset,
    fraction: f64,
    seed: u64,
) -> Result<(AttackDataset, Vec<PosteriorRecord>)> {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for membership in [Membership::Member, Membership::Nonmember] {
        let mut group: Vec<&PosteriorRecord> = data
            .records
            .iter()
            .filter(|r| r.membership == membership)
            .collect();
        group.shuffle(&mut derived_rng(seed, &format!("holdout-{membership:?}")));
        let n_hold = ((group.len() as f64 * fraction).round() as usize).min(group.len().saturating_sub(1));
        holdout.extend(group[..n_hold].iter().map(|r| (*r).clone()));
        train.extend(group[n_hold..].iter().map(|r| (*r).clone()));
    }
    Ok((AttackDataset::new(train, data.feature_k)?, holdout))
}

fn examples(vocab: &Vocabulary, labels: &[String], docs: &[Document]) -> Result<Vec<LabeledExample>> {
    docs.iter()
        .map(|d| {
            let label = d.label.as_deref().ok_or_else(|| {
                Error::Config(format!("document {} has no label", d.id))
            })?;
            let class = labels
                .binary_search_by(|l| l.as_str().cmp(label))
                .map_err(|_| Error::Config(format!("unknown label {label}")))?;
            Ok(LabeledExample {
                id: d.id.clone(),
                features: vocab.bag_of_words(&d.text),
                label: class,
            })
        })
        .collect()
}

fn quality(
    params: &ClassifierParams,
    train: &[LabeledExample],
    test: &[LabeledExample],
) -> Result<ModelQuality> {
    let mut predicted = Vec::with_capacity(test.len());
    for ex in test {
        predicted.push(argmax(&params.logits(&ex.features)?));
    }
    let actual: Vec<usize> = test.iter().map(|e| e.label).collect();
    Ok(ModelQuality {
        train_accuracy: clf_accuracy(params, train)?,
        test_accuracy: clf_accuracy(params, test)?,
        test_macro_f1: macro_f1(&predicted, &actual, params.num_classes),
    })
}

fn with_membership(mut records: Vec<PosteriorRecord>, m: Membership) -> Vec<PosteriorRecord> {
    for r in records.iter_mut() {
        r.membership = m;
    }
    records
}

fn evaluate(model: &AttackModel, records: &[PosteriorRecord], k: usize) -> Result<AttackMetrics> {
    let data = AttackDataset::new(records.to_vec(), k)?;
    let predicted = model.predict_labels(&data.features())?;
    compute_metrics(&predicted, &data.labels())
}

pub fn run_classification_attack(
    spec: &AdversarySpec,
    bundle: &DatasetBundle,
    cfg: &ClassificationConfig,
    defense: &Defense,
    seed: u64,
) -> Result<ClassificationOutcome> {
    let mut clock = Stopwatch::start();
    spec.validate().map_err(|e| e.at_stage("validate"))?;
    let dp = match defense {
        Defense::None => None,
        Defense::Dp(c) => {
            c.scale().map_err(|e| e.at_stage("validate"))?;
            Some(c)
        }
        _ => {
            return Err(Error::Config(
                "distillation and early stopping apply to the generation task only".into(),
            )
            .at_stage("validate"))
        }
    };

    let all: Vec<&Document> = bundle.all_documents().collect();
    let labels = label_set(&all).map_err(|e| e.at_stage("vocab"))?;
    if labels.len() < 2 {
        return Err(Error::Config("classification corpus needs at least two labels".into()).at_stage("vocab"));
    }
    let texts: Vec<&str> = all.iter().map(|d| d.text.as_str()).collect();
    let vocab = build_vocab_limited(&texts, cfg.min_count, Some(cfg.max_vocab)).map_err(|e| e.at_stage("vocab"))?;
    let enc = |docs: &[Document]| examples(&vocab, &labels, docs).map_err(|e| e.at_stage("features"));
    let victim_train = enc(&bundle.d_victim_train)?;
    let victim_test = enc(&bundle.d_victim_test)?;
    let shadow_test = enc(&bundle.d_shadow_test)?;
    let shadow_docs = shadow_training_docs(spec, bundle, seed).map_err(|e| e.at_stage("shadow-data"))?;
    let shadow_train = enc(&shadow_docs)?;
    let c = labels.len();
    let k = cfg.attack.feature_k.unwrap_or_else(|| default_feature_k(c));
    clock.lap("features");

    // victim
    let noise = dp.filter(|d| d.perturb_training).map(|d| TrainingNoise {
        laplace: *d,
        seed: derive_seed(seed, "victim-train-noise"),
    });
    let zeros = ClassifierParams::zeros(c, vocab.len()).map_err(|e| e.at_stage("victim-train"))?;
    let (victim, _) = clf_train_from(zeros.clone(), &victim_train, &cfg.classifier, noise.as_ref())
        .map_err(|e| e.at_stage("victim-train"))?;
    clock.lap("victim-train");

    // shadow, undefended
    let shadow_init = match spec.pattern {
        Pattern::Adv2 => victim.clone(),
        _ => zeros,
    };
    let (shadow, _) = clf_train_from(shadow_init, &shadow_train, &cfg.classifier, None)
        .map_err(|e| e.at_stage("shadow-train"))?;
    clock.lap("shadow-train");

    // D_attack from shadow posteriors
    let stage = |e: Error| e.at_stage("attack-data");
    let members = clf_posteriors(&shadow, &shadow_train, "shadow").map_err(stage)?;
    let nonmembers = clf_posteriors(&shadow, &shadow_test, "shadow").map_err(stage)?;
    let (d_attack, attack_balance) =
        assemble_attack_dataset(members, nonmembers, k, derive_seed(seed, "attack-balance")).map_err(stage)?;
    let (train_set, attack_holdout) =
        split_holdout(&d_attack, cfg.attack.holdout_fraction, seed).map_err(stage)?;
    clock.lap("attack-data");

    let mlp = AttackModel::Mlp(
        mlp_train(&train_set, &cfg.attack.mlp, derive_seed(seed, "attack-mlp")).map_err(|e| e.at_stage("attack-mlp"))?,
    );
    clock.lap("attack-mlp");
    let rf = AttackModel::Forest(
        rf_train(&train_set, &cfg.attack.rf, derive_seed(seed, "attack-rf")).map_err(|e| e.at_stage("attack-rf"))?,
    );
    clock.lap("attack-rf");

    // victim posteriors, perturbed on emission when the Laplace defense is on
    let stage = |e: Error| e.at_stage("victim-posteriors");
    let mut emitted = with_membership(
        clf_posteriors(&victim, &victim_train, "victim").map_err(stage)?,
        Membership::Member,
    );
    emitted.extend(with_membership(
        clf_posteriors(&victim, &victim_test, "victim").map_err(stage)?,
        Membership::Nonmember,
    ));
    if let Some(d) = dp {
        emitted = emitted
            .iter()
            .map(|r| perturb_posteriors(r, d, &mut derived_rng(seed, &format!("dp:{}", r.record_id))))
            .collect::<Result<_>>()
            .map_err(stage)?;
    }
    let (em_members, em_nonmembers): (Vec<_>, Vec<_>) =
        emitted.into_iter().partition(|r| r.membership == Membership::Member);
    let (eval_set, evaluation_balance) =
        assemble_attack_dataset(em_members, em_nonmembers, k, derive_seed(seed, "eval-balance")).map_err(stage)?;
    let victim_eval = eval_set.records;
    clock.lap("victim-posteriors");

    let stage = |e: Error| e.at_stage("evaluate");
    let hygiene = audit(&train_set.records, &victim_eval);
    if !hygiene.passed {
        return Err(Error::Config("victim posteriors leaked into attack training".into()).at_stage("evaluate"));
    }
    let report = ClassificationAttackReport {
        pattern: spec.pattern,
        spec: spec.clone(),
        seed,
        defense: defense.clone(),
        config: cfg.clone(),
        num_classes: c,
        feature_k: k,
        shadow_training_docs: shadow_docs.len(),
        mlp: evaluate(&mlp, &victim_eval, k).map_err(stage)?,
        rf: evaluate(&rf, &victim_eval, k).map_err(stage)?,
        mlp_holdout: evaluate(&mlp, &attack_holdout, k).map_err(stage)?,
        rf_holdout: evaluate(&rf, &attack_holdout, k).map_err(stage)?,
        shadow_quality: quality(&shadow, &shadow_train, &shadow_test).map_err(stage)?,
        victim_quality: quality(&victim, &victim_train, &victim_test).map_err(stage)?,
        attack_balance,
        evaluation_balance,
        hygiene,
    };
    clock.lap("evaluate");
    Ok(ClassificationOutcome {
        report,
        attack_train: train_set.records,
        attack_holdout,
        victim_eval,
        mlp,
        rf,
        victim,
        shadow,
        timings: clock.timings,
    })
}

/// Record-id audit that no victim-side posterior reached attack training.
pub fn audit(attack_train: &[PosteriorRecord], evaluation: &[PosteriorRecord]) -> Hygiene {
    let victim_records_in_training = attack_train
        .iter()
        .filter(|r| r.source_model != "shadow" || !r.record_id.starts_with("shadow:"))
        .count();
    let train_ids: HashSet<&str> = attack_train.iter().map(|r| r.record_id.as_str()).collect();
    let shared_record_ids = evaluation
        .iter()
        .filter(|r| train_ids.contains(r.record_id.as_str()))
        .count();
    Hygiene {
        victim_records_in_training,
        shared_record_ids,
        passed: victim_records_in_training == 0 && shared_record_ids == 0,
    }
}
