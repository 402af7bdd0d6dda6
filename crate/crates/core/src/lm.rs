//! The reference language model: concatenated embeddings of the previous `k`
//! tokens feeding one linear layer and a softmax over the vocabulary.
//!
//! It is small enough to train in seconds and exposes closed-form gradients,
//! yet it memorizes small corpora, which is all the auditing pipelines need
//! from a victim.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defense::early_stop::{early_stop_check, EsConfig};
use crate::error::{Error, Result};
use crate::math::{argmax, log_softmax_into, softmax_into};
use crate::metrics::{LogProb, Role, TokenScoreSequence};
use crate::seed::{derived_rng, rng_from_seed};
use crate::text::{BOS, EOS};

pub const PARAMS_VERSION: &str = "refmodel_v1";
const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmShape {
    pub context_k: usize,
    pub embed_dim: usize,
}

impl Default for LmShape {
    fn default() -> Self {
        LmShape {
            context_k: 3,
            embed_dim: 16,
        }
    }
}

/// Trainable parameters. `output_weights` is row-major `(k·d) × V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLm {
    pub vocab_size: usize,
    pub context_k: usize,
    pub embed_dim: usize,
    pub embedding: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
    pub rng_seed: u64,
}

/// Gradient with the same layout as [`ReferenceLm`].
#[derive(Debug, Clone, PartialEq)]
pub struct LmGradient {
    pub embedding: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

/// A next-token prediction example: the `k` preceding ids and the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<u32>,
    pub target: u32,
}

/// `<bos>`-padded contexts for every position of `tokens`.
pub fn examples_for(tokens: &[u32], k: usize) -> Vec<Example> {
    let mut window = vec![BOS; k];
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        out.push(Example {
            context: window.clone(),
            target: t,
        });
        window.remove(0);
        window.push(t);
    }
    out
}

impl ReferenceLm {
    pub fn zeros(vocab_size: usize, shape: LmShape) -> Result<Self> {
        validate_shape(vocab_size, shape)?;
        let (k, d) = (shape.context_k, shape.embed_dim);
        Ok(ReferenceLm {
            vocab_size,
            context_k: k,
            embed_dim: d,
            embedding: vec![0.0; vocab_size * d],
            output_weights: vec![0.0; k * d * vocab_size],
            output_bias: vec![0.0; vocab_size],
            rng_seed: 0,
        })
    }

    /// Seeded uniform(-0.05, 0.05) embeddings and weights, zero bias.
    pub fn init(vocab_size: usize, shape: LmShape, seed: u64) -> Result<Self> {
        let mut lm = Self::zeros(vocab_size, shape)?;
        let mut rng = derived_rng(seed, "lm-init");
        for w in lm.embedding.iter_mut().chain(lm.output_weights.iter_mut()) {
            *w = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        lm.rng_seed = seed;
        Ok(lm)
    }

    pub fn shape(&self) -> LmShape {
        LmShape {
            context_k: self.context_k,
            embed_dim: self.embed_dim,
        }
    }

    fn input_dim(&self) -> usize {
        self.context_k * self.embed_dim
    }

    fn check_id(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id: id as usize,
                vocab_size: self.vocab_size,
            })
        }
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.context.len() != self.context_k {
            return Err(Error::DimensionMismatch {
                what: "context length",
                expected: self.context_k,
                actual: ex.context.len(),
            });
        }
        ex.context.iter().try_for_each(|&c| self.check_id(c))?;
        self.check_id(ex.target)
    }

    /// Writes the concatenated embeddings into `hidden` and the logits into `logits`.
    pub fn forward(&self, context: &[u32], hidden: &mut [f64], logits: &mut [f64]) {
        let d = self.embed_dim;
        let v = self.vocab_size;
        for (j, &c) in context.iter().enumerate() {
            let row = c as usize * d;
            hidden[j * d..(j + 1) * d].copy_from_slice(&self.embedding[row..row + d]);
        }
        logits.copy_from_slice(&self.output_bias);
        for (i, &h) in hidden.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let w = &self.output_weights[i * v..(i + 1) * v];
            for (l, &wi) in logits.iter_mut().zip(w) {
                *l += h * wi;
            }
        }
    }

    pub fn logits(&self, context: &[u32]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.input_dim()];
        let mut logits = vec![0.0; self.vocab_size];
        self.forward(context, &mut hidden, &mut logits);
        logits
    }

    /// Accumulates the gradient contribution of `dlogits` at one example.
    pub fn backward(
        &self,
        context: &[u32],
        hidden: &[f64],
        dlogits: &[f64],
        grad: &mut LmGradient,
    ) {
        let d = self.embed_dim;
        let v = self.vocab_size;
        for (b, &g) in grad.output_bias.iter_mut().zip(dlogits) {
            *b += g;
        }
        for (i, &h) in hidden.iter().enumerate() {
            let w = &self.output_weights[i * v..(i + 1) * v];
            let gw = &mut grad.output_weights[i * v..(i + 1) * v];
            let mut dh = 0.0;
            for ((gwi, &wi), &g) in gw.iter_mut().zip(w).zip(dlogits) {
                *gwi += h * g;
                dh += wi * g;
            }
            let (j, t) = (i / d, i % d);
            grad.embedding[context[j] as usize * d + t] += dh;
        }
    }

    pub fn zero_gradient(&self) -> LmGradient {
        LmGradient {
            embedding: vec![0.0; self.embedding.len()],
            output_weights: vec![0.0; self.output_weights.len()],
            output_bias: vec![0.0; self.output_bias.len()],
        }
    }

    pub fn apply_gradient(&mut self, grad: &LmGradient, lr: f64) {
        let pairs = self
            .embedding
            .iter_mut()
            .zip(&grad.embedding)
            .chain(self.output_weights.iter_mut().zip(&grad.output_weights))
            .chain(self.output_bias.iter_mut().zip(&grad.output_bias));
        for (p, g) in pairs {
            *p -= lr * g;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.embedding
            .iter()
            .chain(&self.output_weights)
            .chain(&self.output_bias)
            .all(|v| v.is_finite())
    }

    /// Writes params in the `refmodel_v1` JSON format.
    pub fn to_json(&self) -> String {
        let file = LmFile {
            version: PARAMS_VERSION.to_string(),
            kind: "lm".to_string(),
            vocab_size: self.vocab_size,
            context_k: self.context_k,
            embed_dim: self.embed_dim,
            rng_seed: self.rng_seed,
            embedding: self.embedding.clone(),
            output_weights: self.output_weights.clone(),
            output_bias: self.output_bias.clone(),
        };
        serde_json::to_string(&file).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LmFile =
            serde_json::from_str(s).map_err(|e| Error::schema("<document>", e.to_string()))?;
        if file.version != PARAMS_VERSION {
            return Err(Error::schema(
                "version",
                format!("expected {PARAMS_VERSION:?}, found {:?}", file.version),
            ));
        }
        if file.kind != "lm" {
            return Err(Error::schema("kind", format!("expected \"lm\", found {:?}", file.kind)));
        }
        let shape = LmShape {
            context_k: file.context_k,
            embed_dim: file.embed_dim,
        };
        validate_shape(file.vocab_size, shape).map_err(|e| Error::schema("shape", e.to_string()))?;
        let (v, k, d) = (file.vocab_size, file.context_k, file.embed_dim);
        check_len("embedding", file.embedding.len(), v * d)?;
        check_len("output_weights", file.output_weights.len(), k * d * v)?;
        check_len("output_bias", file.output_bias.len(), v)?;
        Ok(ReferenceLm {
            vocab_size: v,
            context_k: k,
            embed_dim: d,
            embedding: file.embedding,
            output_weights: file.output_weights,
            output_bias: file.output_bias,
            rng_seed: file.rng_seed,
        })
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub(crate) fn check_len(field: &str, actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::schema(
            field,
            format!("expected {expected} entries, found {actual}"),
        ))
    }
}

fn validate_shape(vocab_size: usize, shape: LmShape) -> Result<()> {
    if vocab_size < 4 {
        return Err(Error::invalid("vocab_size", "must be at least 4"));
    }
    if shape.context_k == 0 {
        return Err(Error::invalid("context_k", "must be at least 1"));
    }
    if shape.embed_dim == 0 {
        return Err(Error::invalid("embed_dim", "must be at least 1"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LmFile {
    version: String,
    kind: String,
    vocab_size: usize,
    context_k: usize,
    embed_dim: usize,
    rng_seed: u64,
    embedding: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: Vec<f64>,
}

/// Scores `tokens` under the model, one natural-log probability per token.
pub fn lm_score(
    lm: &ReferenceLm,
    tokens: &[u32],
    sequence_id: impl Into<String>,
    model_id: impl Into<String>,
    role: Role,
) -> Result<TokenScoreSequence> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    tokens.iter().try_for_each(|&t| lm.check_id(t))?;
    let mut hidden = vec![0.0; lm.input_dim()];
    let mut logits = vec![0.0; lm.vocab_size];
    let mut logp = vec![0.0; lm.vocab_size];
    let mut logprobs = Vec::with_capacity(tokens.len());
    for ex in examples_for(tokens, lm.context_k) {
        lm.forward(&ex.context, &mut hidden, &mut logits);
        log_softmax_into(&logits, &mut logp);
        let v = logp[ex.target as usize];
        logprobs.push(if v == f64::NEG_INFINITY {
            LogProb::NegInf
        } else {
            LogProb::Finite(v.min(0.0))
        });
    }
    Ok(TokenScoreSequence {
        sequence_id: sequence_id.into(),
        model_id: model_id.into(),
        role,
        token_ids: tokens.to_vec(),
        logprobs,
    })
}

/// Mean cross-entropy of a batch and its analytic gradient.
pub fn lm_loss_grad(lm: &ReferenceLm, batch: &[Example]) -> Result<(f64, LmGradient)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "batch" });
    }
    batch.iter().try_for_each(|ex| lm.check_example(ex))?;
    let mut grad = lm.zero_gradient();
    let loss = accumulate_loss_grad(lm, batch, &mut grad);
    Ok((loss, grad))
}

fn accumulate_loss_grad(lm: &ReferenceLm, batch: &[Example], grad: &mut LmGradient) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let mut hidden = vec![0.0; lm.input_dim()];
    let mut logits = vec![0.0; lm.vocab_size];
    let mut probs = vec![0.0; lm.vocab_size];
    let mut loss = 0.0;
    for ex in batch {
        lm.forward(&ex.context, &mut hidden, &mut logits);
        log_softmax_into(&logits, &mut probs);
        loss -= probs[ex.target as usize];
        for p in probs.iter_mut() {
            *p = p.exp() * scale;
        }
        probs[ex.target as usize] -= scale;
        lm.backward(&ex.context, &hidden, &probs, grad);
    }
    loss * scale
}

/// Mean next-token cross-entropy over every position of every sequence.
pub fn corpus_loss(lm: &ReferenceLm, corpus: &[Vec<u32>]) -> f64 {
    let mut hidden = vec![0.0; lm.input_dim()];
    let mut logits = vec![0.0; lm.vocab_size];
    let mut logp = vec![0.0; lm.vocab_size];
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in corpus {
        for ex in examples_for(seq, lm.context_k) {
            lm.forward(&ex.context, &mut hidden, &mut logits);
            log_softmax_into(&logits, &mut logp);
            total -= logp[ex.target as usize];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Token-level perplexity of a corpus.
pub fn corpus_ppl(lm: &ReferenceLm, corpus: &[Vec<u32>]) -> f64 {
    corpus_loss(lm, corpus).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_ppl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_at: Option<usize>,
}

impl TrainTrace {
    pub fn validation_ppls(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.validation_ppl).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 50,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

/// Mini-batch gradient descent on mean next-token cross-entropy.
///
/// Examples are reshuffled every epoch from `shuffle_seed`. The recorded
/// training loss is the full-corpus loss after the epoch's updates. When a
/// validation corpus is supplied its token-level PPL is recorded each epoch,
/// and with `es` set training halts at the first epoch the stopping rule
/// fires, keeping the parameters of that epoch.
pub fn lm_train(
    mut lm: ReferenceLm,
    corpus: &[Vec<u32>],
    cfg: &LmTrainConfig,
    shuffle_seed: u64,
    es: Option<&EsConfig>,
    validation: Option<&[Vec<u32>]>,
) -> Result<(ReferenceLm, TrainTrace)> {
    validate_train_config(cfg)?;
    if es.is_some() && validation.is_none() {
        return Err(Error::invalid(
            "validation",
            "early stopping needs a validation corpus",
        ));
    }
    let examples: Vec<Example> = corpus
        .iter()
        .flat_map(|seq| examples_for(seq, lm.context_k))
        .collect();
    if examples.is_empty() {
        return Err(Error::EmptyInput {
            what: "training corpus",
        });
    }
    examples.iter().try_for_each(|ex| lm.check_example(ex))?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = rng_from_seed(shuffle_seed);
    let mut trace = TrainTrace::default();
    let mut grad = lm.zero_gradient();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            grad.clear();
            let loss = accumulate_loss_grad(&lm, &batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            lm.apply_gradient(&grad, cfg.lr);
        }
        let train_loss = corpus_loss(&lm, corpus);
        if !train_loss.is_finite() || !lm.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        let validation_ppl = validation.map(|v| corpus_ppl(&lm, v));
        trace.records.push(TrainRecord {
            epoch,
            train_loss,
            validation_ppl,
        });
        if let Some(es) = es {
            if early_stop_check(&trace.validation_ppls(), es) == Some(epoch) {
                trace.stopped_at = Some(epoch);
                break;
            }
        }
    }
    Ok((lm, trace))
}

impl LmGradient {
    pub fn clear(&mut self) {
        for g in self
            .embedding
            .iter_mut()
            .chain(self.output_weights.iter_mut())
            .chain(self.output_bias.iter_mut())
        {
            *g = 0.0;
        }
    }
}

pub(crate) fn validate_train_config(cfg: &LmTrainConfig) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs", "must be at least 1"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("lr", "must be a positive finite number"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    Ok(())
}

/// Ancestral sampling from `softmax(logits / temperature)`.
///
/// A temperature of exactly zero selects the argmax at every step. The
/// returned continuation excludes the prompt and ends with `<eos>` when one
/// was sampled before `max_len` tokens.
pub fn lm_generate(
    lm: &ReferenceLm,
    prompt: &[u32],
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len", "must be at least 1"));
    }
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature", "must be finite and >= 0"));
    }
    prompt.iter().try_for_each(|&t| lm.check_id(t))?;
    let k = lm.context_k;
    let mut context = vec![BOS; k];
    for &t in prompt {
        context.remove(0);
        context.push(t);
    }
    let mut rng = rng_from_seed(seed);
    let mut hidden = vec![0.0; lm.input_dim()];
    let mut logits = vec![0.0; lm.vocab_size];
    let mut probs = vec![0.0; lm.vocab_size];
    let mut out = Vec::with_capacity(max_len);
    while out.len() < max_len {
        lm.forward(&context, &mut hidden, &mut logits);
        let next = if temperature == 0.0 {
            argmax(&logits)
        } else {
            for l in logits.iter_mut() {
                *l /= temperature;
            }
            softmax_into(&logits, &mut probs);
            sample_index(&probs, rng.gen::<f64>())
        } as u32;
        out.push(next);
        if next == EOS {
            break;
        }
        context.remove(0);
        context.push(next);
    }
    Ok(out)
}

/// Inverse-CDF draw from a discrete distribution given `u` in `[0, 1)`.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the total slightly below 1
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::relative_error;
    use crate::metrics::sequence_avg_logprob;
    use rand::Rng;

    fn shape(k: usize, d: usize) -> LmShape {
        LmShape {
            context_k: k,
            embed_dim: d,
        }
    }

    fn random_lm(v: usize, seed: u64) -> ReferenceLm {
        let mut lm = ReferenceLm::init(v, shape(2, 4), seed).unwrap();
        let mut rng = rng_from_seed(seed + 1);
        for b in lm.output_bias.iter_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        for w in lm.embedding.iter_mut().chain(lm.output_weights.iter_mut()) {
            *w *= 10.0;
        }
        lm
    }

    #[test]
    fn zero_model_is_uniform() {
        let lm = ReferenceLm::zeros(10, shape(3, 4)).unwrap();
        let s = lm_score(&lm, &[3, 4, 5, 2], "s", "m", Role::Other).unwrap();
        for lp in &s.logprobs {
            assert_eq!(*lp, LogProb::Finite(-(10f64).ln()));
        }
    }

    #[test]
    fn out_of_range_and_empty_inputs() {
        let lm = ReferenceLm::zeros(10, shape(3, 4)).unwrap();
        assert!(matches!(
            lm_score(&lm, &[3, 10], "s", "m", Role::Other),
            Err(Error::TokenOutOfRange { id: 10, .. })
        ));
        assert!(lm_score(&lm, &[], "s", "m", Role::Other).is_err());
        assert!(lm_loss_grad(&lm, &[]).is_err());
        assert!(lm_generate(&lm, &[1], 0, 1.0, 0).is_err());
        assert!(ReferenceLm::zeros(3, shape(3, 4)).is_err());
        assert!(ReferenceLm::zeros(10, shape(0, 4)).is_err());
    }

    #[test]
    fn bias_gradient_of_zero_model_is_uniform_minus_onehot() {
        let v = 8;
        let lm = ReferenceLm::zeros(v, shape(2, 3)).unwrap();
        let ex = Example {
            context: vec![BOS, 4],
            target: 5,
        };
        let (loss, g) = lm_loss_grad(&lm, &[ex]).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
        for (i, &gb) in g.output_bias.iter().enumerate() {
            let expected = 1.0 / v as f64 - if i == 5 { 1.0 } else { 0.0 };
            assert!((gb - expected).abs() < 1e-15);
        }
        assert!(g.output_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let lm = random_lm(9, 3);
        let ex = Example {
            context: vec![3, 4],
            target: 6,
        };
        let (l1, g1) = lm_loss_grad(&lm, std::slice::from_ref(&ex)).unwrap();
        let (l2, g2) = lm_loss_grad(&lm, &[ex.clone(), ex]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.output_weights.iter().zip(&g2.output_weights) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g1.embedding.iter().zip(&g2.embedding) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lm = random_lm(12, 5);
        let batch: Vec<Example> = examples_for(&[3, 7, 7, 4, 11, 2], 2);
        let (_, g) = lm_loss_grad(&lm, &batch).unwrap();
        let mut rng = rng_from_seed(99);
        let h = 1e-5;
        for _ in 0..30 {
            let which = rng.gen_range(0..3);
            let mut plus = lm.clone();
            let mut minus = lm.clone();
            let (idx, analytic) = match which {
                0 => {
                    let i = rng.gen_range(0..lm.embedding.len());
                    plus.embedding[i] += h;
                    minus.embedding[i] -= h;
                    (i, g.embedding[i])
                }
                1 => {
                    let i = rng.gen_range(0..lm.output_weights.len());
                    plus.output_weights[i] += h;
                    minus.output_weights[i] -= h;
                    (i, g.output_weights[i])
                }
                _ => {
                    let i = rng.gen_range(0..lm.output_bias.len());
                    plus.output_bias[i] += h;
                    minus.output_bias[i] -= h;
                    (i, g.output_bias[i])
                }
            };
            let lp = lm_loss_grad(&plus, &batch).unwrap().0;
            let lmi = lm_loss_grad(&minus, &batch).unwrap().0;
            let numeric = (lp - lmi) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            assert!(err < 1e-4, "param group {which} idx {idx}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn epochs_zero_rejected_and_one_epoch_trace() {
        let lm = ReferenceLm::init(10, shape(2, 4), 1).unwrap();
        let corpus = vec![vec![3, 4, 5, 2]];
        let cfg = LmTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(lm_train(lm.clone(), &corpus, &cfg, 0, None, None).is_err());
        let cfg = LmTrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let (_, trace) = lm_train(lm, &corpus, &cfg, 0, None, None).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].epoch, 1);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut lm = ReferenceLm::init(10, shape(2, 4), 1).unwrap();
        lm.output_bias[3] = f64::NAN;
        let cfg = LmTrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let r = lm_train(lm, &[vec![3, 4, 2]], &cfg, 0, None, None);
        assert!(matches!(r, Err(Error::NonFiniteLoss { epoch: 1, batch: 1 })));
    }

    #[test]
    fn training_on_one_sentence_raises_lambda() {
        let v = 20;
        let sentence = vec![5, 9, 3, 17, 11, 2];
        let lm = ReferenceLm::init(v, shape(3, 8), 4).unwrap();
        let cfg = LmTrainConfig {
            epochs: 200,
            lr: 0.1,
            batch_size: 32,
        };
        let (trained, _) = lm_train(lm, &[sentence.clone()], &cfg, 1, None, None).unwrap();
        let s = lm_score(&trained, &sentence, "s", "m", Role::Member).unwrap();
        let lambda = sequence_avg_logprob(&s).unwrap().finite().unwrap();
        assert!(lambda > -(v as f64).ln());

        // scoring depends on order
        let mut reversed = sentence.clone();
        reversed.reverse();
        let r = lm_score(&trained, &reversed, "r", "m", Role::Other).unwrap();
        assert_ne!(sequence_avg_logprob(&r).unwrap(), sequence_avg_logprob(&s).unwrap());
    }

    #[test]
    fn generation_is_deterministic_and_greedy_at_zero_temperature() {
        let lm = random_lm(12, 8);
        let a = lm_generate(&lm, &[3, 4], 15, 1.0, 42).unwrap();
        let b = lm_generate(&lm, &[3, 4], 15, 1.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 15);

        let greedy = lm_generate(&lm, &[3, 4], 10, 0.0, 1).unwrap();
        let mut context = vec![3u32, 4];
        for &t in &greedy {
            assert_eq!(t as usize, argmax(&lm.logits(&context)));
            context.remove(0);
            context.push(t);
        }
        assert_eq!(greedy, lm_generate(&lm, &[3, 4], 10, 0.0, 999).unwrap());
    }

    #[test]
    fn params_round_trip_is_bit_exact() {
        let lm = random_lm(11, 21);
        let back = ReferenceLm::from_json(&lm.to_json()).unwrap();
        assert_eq!(back, lm);
        for (a, b) in back.output_weights.iter().zip(&lm.output_weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_params_are_schema_errors() {
        let json = random_lm(11, 2).to_json();
        let truncated = &json[..json.len() / 2];
        assert!(matches!(ReferenceLm::from_json(truncated), Err(Error::Schema { .. })));

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["output_bias"] = serde_json::json!([0.0, 1.0]);
        match ReferenceLm::from_json(&v.to_string()) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "output_bias"),
            other => panic!("unexpected {other:?}"),
        }
        v["version"] = serde_json::json!("refmodel_v0");
        match ReferenceLm::from_json(&v.to_string()) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "version"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
