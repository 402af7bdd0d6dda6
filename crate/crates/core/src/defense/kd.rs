//! Knowledge distillation of a reference LM onto a smaller student.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{examples_for, LmShape, ReferenceLm};
use crate::math::log_softmax_into;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    pub temperature: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub student: LmShape,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            temperature: 2.0,
            epochs: 50,
            lr: 0.1,
            batch_size: 32,
            student: LmShape {
                context_k: 3,
                embed_dim: 8,
            },
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature", "must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// `T² · KL(softmax(teacher/T) ‖ softmax(student/T))` and its gradient with
/// respect to the student logits, `T · (q − p)`.
pub fn kd_loss(teacher_logits: &[f64], student_logits: &[f64], temperature: f64) -> Result<(f64, Vec<f64>)> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::DimensionMismatch {
            what: "logits",
            expected: teacher_logits.len(),
            actual: student_logits.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    let n = teacher_logits.len();
    let mut log_p = vec![0.0; n];
    let mut log_q = vec![0.0; n];
    let t: Vec<f64> = teacher_logits.iter().map(|x| x / temperature).collect();
    let s: Vec<f64> = student_logits.iter().map(|x| x / temperature).collect();
    log_softmax_into(&t, &mut log_p);
    log_softmax_into(&s, &mut log_q);
    let mut kl = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let p = log_p[i].exp();
        if p > 0.0 {
            kl += p * (log_p[i] - log_q[i]);
        }
        grad[i] = temperature * (log_q[i].exp() - p);
    }
    Ok(((temperature * temperature * kl).max(0.0), grad))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KdTrace {
    /// Mean `KL(teacher ‖ student)` at the distillation temperature after each epoch.
    pub mean_kl: Vec<f64>,
}

/// Distills `teacher` onto a freshly initialized student of `cfg.student` shape.
pub fn distill(
    teacher: &ReferenceLm,
    corpus: &[Vec<u32>],
    cfg: &KdConfig,
    seed: u64,
) -> Result<(ReferenceLm, KdTrace)> {
    if cfg.student.embed_dim > teacher.embed_dim {
        return Err(Error::invalid(
            "student.embed_dim",
            format!(
                "student ({}) must not be wider than the teacher ({})",
                cfg.student.embed_dim, teacher.embed_dim
            ),
        ));
    }
    let student = ReferenceLm::init(teacher.vocab_size, cfg.student, seed)?;
    distill_from(student, teacher, corpus, cfg, seed)
}

/// Distills `teacher` onto an existing `student`.
pub fn distill_from(
    mut student: ReferenceLm,
    teacher: &ReferenceLm,
    corpus: &[Vec<u32>],
    cfg: &KdConfig,
    shuffle_seed: u64,
) -> Result<(ReferenceLm, KdTrace)> {
    cfg.validate()?;
    if student.vocab_size != teacher.vocab_size {
        return Err(Error::DimensionMismatch {
            what: "student vocabulary",
            expected: teacher.vocab_size,
            actual: student.vocab_size,
        });
    }
    for seq in corpus {
        for &t in seq {
            if t as usize >= teacher.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: t as usize,
                    vocab_size: teacher.vocab_size,
                });
            }
        }
    }
    // (student context, teacher soft logits) per training position
    let mut positions: Vec<(Vec<u32>, Vec<f64>)> = Vec::new();
    for seq in corpus {
        let s_ex = examples_for(seq, student.context_k);
        let t_ex = examples_for(seq, teacher.context_k);
        for (s, t) in s_ex.into_iter().zip(t_ex) {
            positions.push((s.context, teacher.logits(&t.context)));
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyInput {
            what: "distillation corpus",
        });
    }

    let v = student.vocab_size;
    let mut hidden = vec![0.0; student.context_k * student.embed_dim];
    let mut logits = vec![0.0; v];
    let mut order: Vec<usize> = (0..positions.len()).collect();
    let mut rng = rng_from_seed(shuffle_seed);
    let mut grad = student.zero_gradient();
    let mut trace = KdTrace::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grad.clear();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (context, teacher_logits) = &positions[i];
                student.forward(context, &mut hidden, &mut logits);
                let (loss, mut dlogits) = kd_loss(teacher_logits, &logits, cfg.temperature)?;
                batch_loss += loss * scale;
                for g in dlogits.iter_mut() {
                    *g *= scale;
                }
                student.backward(context, &hidden, &dlogits, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            student.apply_gradient(&grad, cfg.lr);
        }
        trace
            .mean_kl
            .push(mean_kl(&student, &positions, cfg.temperature)?);
    }
    Ok((student, trace))
}

fn mean_kl(student: &ReferenceLm, positions: &[(Vec<u32>, Vec<f64>)], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for (context, teacher_logits) in positions {
        let (loss, _) = kd_loss(teacher_logits, &student.logits(context), temperature)?;
        total += loss / (temperature * temperature);
    }
    Ok(total / positions.len() as f64)
}
