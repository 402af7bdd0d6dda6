//! Membership-inference auditing for language models.
//!
//! The engine measures training-induced memorization by comparing perplexity
//! and average token log-probability of generated text under a victim model,
//! runs four adversary patterns against victim/shadow pairs, trains
//! membership attack classifiers on posterior vectors, and evaluates three
//! mitigations (Laplace output perturbation, knowledge distillation and
//! early stopping).
//!
//! Everything runs against small, seeded reference models so that every
//! result is reproducible bit for bit on a laptop.

pub mod attack;
pub mod classifier;
pub mod defense;
pub mod error;
pub mod experiment;
pub mod jsonl;
pub mod lm;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use metrics::{
    membership_shift, sequence_avg_logprob, sequence_ppl, summarize_dataset, Extended, LogProb,
    PerProbSummary, Role, ShiftReport, ShiftVerdict, TokenScoreSequence,
};
