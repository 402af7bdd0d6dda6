//! Generation-task attack: compare text generated by the shadow against text
//! from an untrained model, both scored by the victim.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{shadow_training_docs, AdversarySpec, DatasetBundle, Pattern, StageTiming, Stopwatch};
use crate::defense::{distill, Defense};
use crate::error::{Error, Result};
use crate::lm::{corpus_ppl, lm_generate, lm_score, lm_train, LmShape, LmTrainConfig, ReferenceLm, TrainTrace};
use crate::metrics::{
    membership_shift, sequence_avg_logprob, sequence_ppl, summarize_dataset, Extended,
    PerProbSummary, Role, ShiftReport, TokenScoreSequence,
};
use crate::seed::{derive_seed, derived_rng};
use crate::text::{build_vocab_limited, Document, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub shape: LmShape,
    pub train: LmTrainConfig,
    /// Shadow epochs; defaults to `train.epochs`. Zero leaves the shadow at
    /// its initialization.
    pub shadow_epochs: Option<usize>,
    pub max_len: usize,
    pub temperature: f64,
    pub max_vocab: usize,
    pub min_count: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            shape: LmShape::default(),
            train: LmTrainConfig::default(),
            shadow_epochs: None,
            max_len: 24,
            temperature: 1.0,
            max_vocab: 512,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePoint {
    pub sequence_id: String,
    pub role: Role,
    pub lambda: Extended,
    pub ppl: Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttackReport {
    pub pattern: Pattern,
    pub spec: AdversarySpec,
    pub seed: u64,
    pub defense: Defense,
    pub config: GenerationConfig,
    pub vocab_size: usize,
    pub shadow_training_docs: usize,
    pub d_ori: PerProbSummary,
    pub d_adv: PerProbSummary,
    pub shift: ShiftReport,
    /// Token-level PPL of the deployed victim on its training and test splits.
    pub victim_train_ppl: f64,
    pub victim_test_ppl: f64,
    pub victim_training: TrainTrace,
    /// Final mean KL between teacher and student when distillation is on.
    pub kd_final_kl: Option<f64>,
    /// Decoded prompt prefixes in generation order.
    pub prompts: Vec<String>,
    pub points: Vec<SequencePoint>,
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub report: GenerationAttackReport,
    pub vocab: Vocabulary,
    pub victim: ReferenceLm,
    pub shadow: ReferenceLm,
    pub d_ori: Vec<TokenScoreSequence>,
    pub d_adv: Vec<TokenScoreSequence>,
    pub timings: Vec<StageTiming>,
}

fn encode_all(vocab: &Vocabulary, docs: &[Document]) -> Vec<Vec<u32>> {
    docs.iter().map(|d| vocab.encode_document(&d.text)).collect()
}

pub fn run_generation_attack(
    spec: &AdversarySpec,
    bundle: &DatasetBundle,
    cfg: &GenerationConfig,
    defense: &Defense,
    seed: u64,
) -> Result<GenerationOutcome> {
    let mut clock = Stopwatch::start();
    spec.validate().map_err(|e| e.at_stage("validate"))?;
    if matches!(defense, Defense::Dp(_)) {
        return Err(Error::Config(
            "the Laplace defense applies to the classification task only".into(),
        )
        .at_stage("validate"));
    }
    if bundle.d_shadow_test.is_empty() {
        return Err(Error::EmptyInput { what: "d_shadow_test" }.at_stage("validate"));
    }

    let texts: Vec<&str> = bundle.all_documents().map(|d| d.text.as_str()).collect();
    let vocab = build_vocab_limited(&texts, cfg.min_count, Some(cfg.max_vocab)).map_err(|e| e.at_stage("vocab"))?;
    let v = vocab.len();
    clock.lap("vocab");
    let victim_train = encode_all(&vocab, &bundle.d_victim_train);
    let victim_test = encode_all(&vocab, &bundle.d_victim_test);

    // victim, possibly defended
    let es = match defense {
        Defense::Es(c) => Some(c),
        _ => None,
    };
    let victim = ReferenceLm::init(v, cfg.shape, derive_seed(seed, "victim-init")).map_err(|e| e.at_stage("victim-train"))?;
    let (victim, victim_training) = lm_train(
        victim,
        &victim_train,
        &cfg.train,
        derive_seed(seed, "victim-shuffle"),
        es,
        es.map(|_| victim_test.as_slice()),
    )
    .map_err(|e| e.at_stage("victim-train"))?;
    let (victim, kd_final_kl) = match defense {
        Defense::Kd(kd) => {
            let (student, trace) = distill(&victim, &victim_train, kd, derive_seed(seed, "kd-student"))
                .map_err(|e| e.at_stage("kd"))?;
            (student, trace.mean_kl.last().copied())
        }
        _ => (victim, None),
    };
    clock.lap("victim-train");

    // prompts: the first k tokens of held-out shadow documents
    let shadow_test = encode_all(&vocab, &bundle.d_shadow_test);
    let k = cfg.shape.context_k;
    let mut prng = derived_rng(seed, "prompts");
    let prompts: Vec<Vec<u32>> = (0..spec.n_generate)
        .map(|_| {
            let doc = &shadow_test[prng.gen_range(0..shadow_test.len())];
            let body = &doc[..doc.len() - 1]; // drop <eos>
            body[..k.min(body.len())].to_vec()
        })
        .collect();

    let ori = ReferenceLm::init(v, cfg.shape, derive_seed(seed, "ori-init")).map_err(|e| e.at_stage("ori-init"))?;
    let ori_samples = generate_all(&ori, &prompts, cfg, seed, "gen-ori").map_err(|e| e.at_stage("generate-ori"))?;
    clock.lap("generate-ori");

    // shadow
    let shadow_docs = shadow_training_docs(spec, bundle, seed).map_err(|e| e.at_stage("shadow-data"))?;
    let shadow_corpus = encode_all(&vocab, &shadow_docs);
    let shadow_init = match spec.pattern {
        Pattern::Adv2 => victim.clone(),
        _ => ReferenceLm::init(v, cfg.shape, derive_seed(seed, "shadow-init")).map_err(|e| e.at_stage("shadow-train"))?,
    };
    let shadow_epochs = cfg.shadow_epochs.unwrap_or(cfg.train.epochs);
    let shadow = if shadow_epochs == 0 {
        shadow_init
    } else {
        let train = LmTrainConfig {
            epochs: shadow_epochs,
            ..cfg.train
        };
        lm_train(shadow_init, &shadow_corpus, &train, derive_seed(seed, "shadow-shuffle"), None, None)
            .map_err(|e| e.at_stage("shadow-train"))?
            .0
    };
    clock.lap("shadow-train");
    let adv_samples = generate_all(&shadow, &prompts, cfg, seed, "gen-shadow").map_err(|e| e.at_stage("generate-shadow"))?;
    clock.lap("generate-shadow");

    // both sets scored by the deployed victim
    let d_ori = score_all(&victim, &ori_samples, "ori", Role::DOri).map_err(|e| e.at_stage("score"))?;
    let d_adv = score_all(&victim, &adv_samples, "adv", spec.pattern.role()).map_err(|e| e.at_stage("score"))?;
    let ori_summary = summarize_dataset(&d_ori).map_err(|e| e.at_stage("summarize"))?;
    let adv_summary = summarize_dataset(&d_adv).map_err(|e| e.at_stage("summarize"))?;
    let shift = membership_shift(&adv_summary, &ori_summary);
    clock.lap("score");

    let mut points = Vec::with_capacity(d_ori.len() + d_adv.len());
    for s in d_ori.iter().chain(&d_adv) {
        points.push(SequencePoint {
            sequence_id: s.sequence_id.clone(),
            role: s.role,
            lambda: sequence_avg_logprob(s)?,
            ppl: sequence_ppl(s)?,
        });
    }

    let report = GenerationAttackReport {
        pattern: spec.pattern,
        spec: spec.clone(),
        seed,
        defense: defense.clone(),
        config: cfg.clone(),
        vocab_size: v,
        shadow_training_docs: shadow_docs.len(),
        d_ori: ori_summary,
        d_adv: adv_summary,
        shift,
        victim_train_ppl: corpus_ppl(&victim, &victim_train),
        victim_test_ppl: corpus_ppl(&victim, &victim_test),
        victim_training,
        kd_final_kl,
        prompts: prompts.iter().map(|p| vocab.decode(p)).collect(),
        points,
    };
    Ok(GenerationOutcome {
        report,
        vocab,
        victim,
        shadow,
        d_ori,
        d_adv,
        timings: clock.timings,
    })
}

/// Prompt followed by its sampled continuation, one per prompt.
fn generate_all(
    lm: &ReferenceLm,
    prompts: &[Vec<u32>],
    cfg: &GenerationConfig,
    seed: u64,
    label: &str,
) -> Result<Vec<Vec<u32>>> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let cont = lm_generate(
                lm,
                prompt,
                cfg.max_len,
                cfg.temperature,
                derive_seed(seed, &format!("{label}:{i}")),
            )?;
            let mut sample = prompt.clone();
            sample.extend(cont);
            Ok(sample)
        })
        .collect()
}

fn score_all(
    lm: &ReferenceLm,
    samples: &[Vec<u32>],
    prefix: &str,
    role: Role,
) -> Result<Vec<TokenScoreSequence>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| lm_score(lm, s, format!("{prefix}-{:06}", i + 1), "victim", role))
        .collect()
}
