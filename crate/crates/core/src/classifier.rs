//! Multinomial logistic regression over bag-of-words counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{Membership, PosteriorRecord};
use crate::defense::{perturb_vector, LaplaceConfig};
use crate::error::{Error, Result};
use crate::jsonl::write_atomic;
use crate::lm::{check_len, PARAMS_VERSION};
use crate::math::{argmax, log_softmax_into, softmax_into};
use crate::seed::derived_rng;

/// `weights` is row-major `F × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// One document as seen by the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClfTrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        ClfTrainConfig { epochs: 300, lr: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClfTrace {
    /// Mean cross-entropy after each epoch.
    pub losses: Vec<f64>,
    /// Fraction of training examples whose posterior argmax is the label.
    pub train_accuracy: f64,
}

/// Laplace noise applied to the softmax outputs inside the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingNoise {
    pub laplace: LaplaceConfig,
    pub seed: u64,
}

impl ClassifierParams {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "must be at least 2"));
        }
        Ok(ClassifierParams {
            num_classes,
            feature_dim,
            weights: vec![0.0; feature_dim * num_classes],
            bias: vec![0.0; num_classes],
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "classifier features",
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        Ok(self.sparse_logits(&sparse(x)))
    }

    fn sparse_logits(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let c = self.num_classes;
        let mut z = self.bias.clone();
        for &(f, v) in x {
            let row = &self.weights[f * c..(f + 1) * c];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += v * w;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        let mut p = vec![0.0; z.len()];
        softmax_into(&z, &mut p);
        Ok(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        let file = ClfFile {
            version: PARAMS_VERSION.to_string(),
            kind: "classifier".to_string(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        };
        serde_json::to_string(&file).expect("classifier params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ClfFile =
            serde_json::from_str(s).map_err(|e| Error::schema("<document>", e.to_string()))?;
        if file.version != PARAMS_VERSION {
            return Err(Error::schema(
                "version",
                format!("expected {PARAMS_VERSION:?}, found {:?}", file.version),
            ));
        }
        if file.kind != "classifier" {
            return Err(Error::schema(
                "kind",
                format!("expected \"classifier\", found {:?}", file.kind),
            ));
        }
        if file.num_classes < 2 {
            return Err(Error::schema("num_classes", "must be at least 2"));
        }
        check_len("weights", file.weights.len(), file.feature_dim * file.num_classes)?;
        check_len("bias", file.bias.len(), file.num_classes)?;
        let params = ClassifierParams {
            num_classes: file.num_classes,
            feature_dim: file.feature_dim,
            weights: file.weights,
            bias: file.bias,
        };
        if !params.all_finite() {
            return Err(Error::schema("weights", "entries must be finite"));
        }
        Ok(params)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClfFile {
    version: String,
    kind: String,
    num_classes: usize,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn sparse(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

/// Nonzero feature entries of each example, computed once per training run.
struct SparseSet<'a> {
    examples: &'a [LabeledExample],
    rows: Vec<Vec<(usize, f64)>>,
}

impl<'a> SparseSet<'a> {
    fn new(examples: &'a [LabeledExample]) -> Self {
        SparseSet {
            examples,
            rows: examples.iter().map(|e| sparse(&e.features)).collect(),
        }
    }
}

fn check_examples(params: &ClassifierParams, examples: &[LabeledExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyInput {
            what: "classifier training set",
        });
    }
    for ex in examples {
        if ex.features.len() != params.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "classifier features",
                expected: params.feature_dim,
                actual: ex.features.len(),
            });
        }
        if ex.label >= params.num_classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                num_classes: params.num_classes,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy and its gradient.
pub fn clf_loss_grad(
    params: &ClassifierParams,
    examples: &[LabeledExample],
) -> Result<(f64, ClassifierGradient)> {
    check_examples(params, examples)?;
    accumulate(params, &SparseSet::new(examples), None)
}

fn accumulate(
    params: &ClassifierParams,
    data: &SparseSet,
    noise: Option<(&TrainingNoise, usize)>,
) -> Result<(f64, ClassifierGradient)> {
    let c = params.num_classes;
    let mut grad = ClassifierGradient {
        weights: vec![0.0; params.weights.len()],
        bias: vec![0.0; c],
    };
    let scale = 1.0 / data.examples.len() as f64;
    let mut loss = 0.0;
    let mut log_p = vec![0.0; c];
    for (ex, row) in data.examples.iter().zip(&data.rows) {
        log_softmax_into(&params.sparse_logits(row), &mut log_p);
        loss -= log_p[ex.label] * scale;
        let mut p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        if let Some((tn, epoch)) = noise {
            let mut rng = derived_rng(tn.seed, &format!("train-noise:{epoch}:{}", ex.id));
            p = perturb_vector(&p, &tn.laplace, &mut rng)?;
        }
        p[ex.label] -= 1.0;
        for (b, d) in grad.bias.iter_mut().zip(&p) {
            *b += d * scale;
        }
        for &(f, v) in row {
            let g = &mut grad.weights[f * c..(f + 1) * c];
            for (gj, d) in g.iter_mut().zip(&p) {
                *gj += v * d * scale;
            }
        }
    }
    Ok((loss, grad))
}

pub fn clf_train(
    examples: &[LabeledExample],
    num_classes: usize,
    cfg: &ClfTrainConfig,
) -> Result<(ClassifierParams, ClfTrace)> {
    let dim = examples.first().map_or(0, |e| e.features.len());
    clf_train_from(ClassifierParams::zeros(num_classes, dim)?, examples, cfg, None)
}

/// Full-batch gradient descent starting from `params`.
pub fn clf_train_from(
    mut params: ClassifierParams,
    examples: &[LabeledExample],
    cfg: &ClfTrainConfig,
    noise: Option<&TrainingNoise>,
) -> Result<(ClassifierParams, ClfTrace)> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("lr", "must be positive and finite"));
    }
    check_examples(&params, examples)?;
    let data = SparseSet::new(examples);
    let mut trace = ClfTrace::default();
    for epoch in 1..=cfg.epochs {
        let (loss, grad) = accumulate(&params, &data, noise.map(|n| (n, epoch)))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 1 });
        }
        for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
            *w -= cfg.lr * g;
        }
        for (b, g) in params.bias.iter_mut().zip(&grad.bias) {
            *b -= cfg.lr * g;
        }
        trace.losses.push(sparse_loss(&params, &data));
    }
    trace.train_accuracy = clf_accuracy(&params, examples)?;
    Ok((params, trace))
}

fn sparse_loss(params: &ClassifierParams, data: &SparseSet) -> f64 {
    let mut log_p = vec![0.0; params.num_classes];
    let mut total = 0.0;
    for (ex, row) in data.examples.iter().zip(&data.rows) {
        log_softmax_into(&params.sparse_logits(row), &mut log_p);
        total -= log_p[ex.label];
    }
    total / data.examples.len() as f64
}

pub fn clf_loss(params: &ClassifierParams, examples: &[LabeledExample]) -> Result<f64> {
    let mut log_p = vec![0.0; params.num_classes];
    let mut total = 0.0;
    for ex in examples {
        log_softmax_into(&params.logits(&ex.features)?, &mut log_p);
        total -= log_p[ex.label];
    }
    Ok(total / examples.len() as f64)
}

pub fn clf_accuracy(params: &ClassifierParams, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput { what: "examples" });
    }
    let mut correct = 0;
    for ex in examples {
        if params.predict(&ex.features)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Posterior records with `membership` left as `unknown`; the caller labels them.
pub fn clf_posteriors(
    params: &ClassifierParams,
    examples: &[LabeledExample],
    source_model: &str,
) -> Result<Vec<PosteriorRecord>> {
    examples
        .iter()
        .map(|ex| {
            Ok(PosteriorRecord {
                record_id: format!("{source_model}:{}", ex.id),
                posteriors: params.predict_proba(&ex.features)?,
                true_class: ex.label,
                membership: Membership::Unknown,
                source_model: source_model.to_string(),
                dp: None,
            })
        })
        .collect()
}
