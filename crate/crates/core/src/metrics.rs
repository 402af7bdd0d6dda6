//! Perplexity and average log-probability over token score streams, dataset
//! summaries, and the member/non-member shift comparison.
//!
//! All logarithms are natural. A single zero-probability token drives a
//! sequence to `λ = -inf` and `PPL = +inf`; such sequences are counted
//! separately and excluded from the finite aggregates.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A natural-log token probability: a finite value `<= 0`, or `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogProb {
    Finite(f64),
    NegInf,
}

impl LogProb {
    pub fn new(value: f64) -> Result<Self> {
        Self::checked(value, 0)
    }

    fn checked(value: f64, position: usize) -> Result<Self> {
        if value == f64::NEG_INFINITY {
            Ok(LogProb::NegInf)
        } else if value.is_finite() && value <= 0.0 {
            Ok(LogProb::Finite(value))
        } else {
            Err(Error::InvalidLogProb { position, value })
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            LogProb::Finite(v) => Some(v),
            LogProb::NegInf => None,
        }
    }
}

impl Serialize for LogProb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LogProb::Finite(v) => s.serialize_f64(*v),
            LogProb::NegInf => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for LogProb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct LogProbVisitor;

        impl Visitor<'_> for LogProbVisitor {
            type Value = LogProb;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number <= 0 or the string \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<LogProb, E> {
                LogProb::new(v).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<LogProb, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<LogProb, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<LogProb, E> {
                if v == "-inf" {
                    Ok(LogProb::NegInf)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        d.deserialize_any(LogProbVisitor)
    }
}

/// The extended real line. Used for sequence-level results so that
/// infinities are carried as tags instead of IEEE sentinels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Extended {
    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Lossy conversion for display and plotting only.
    pub fn to_f64(self) -> f64 {
        match self {
            Extended::NegInf => f64::NEG_INFINITY,
            Extended::Finite(v) => v,
            Extended::PosInf => f64::INFINITY,
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Extended::NegInf => s.serialize_str("-inf"),
            Extended::Finite(v) => s.serialize_f64(*v),
            Extended::PosInf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ExtendedVisitor;

        impl Visitor<'_> for ExtendedVisitor {
            type Value = Extended;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, \"inf\" or \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Extended, E> {
                Ok(Extended::Finite(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Extended, E> {
                Ok(Extended::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Extended, E> {
                Ok(Extended::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Extended, E> {
                match v {
                    "-inf" => Ok(Extended::NegInf),
                    "inf" => Ok(Extended::PosInf),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }

        d.deserialize_any(ExtendedVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DOri,
    DAd1,
    DAd2,
    DAd3,
    DAd4,
    Member,
    Nonmember,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::DOri => "d_ori",
            Role::DAd1 => "d_ad1",
            Role::DAd2 => "d_ad2",
            Role::DAd3 => "d_ad3",
            Role::DAd4 => "d_ad4",
            Role::Member => "member",
            Role::Nonmember => "nonmember",
            Role::Other => "other",
        }
    }
}

/// One scored text: token ids plus their log-probabilities under `model_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenScoreSequence {
    pub sequence_id: String,
    pub model_id: String,
    pub role: Role,
    pub token_ids: Vec<u32>,
    pub logprobs: Vec<LogProb>,
}

impl TokenScoreSequence {
    /// Builds a sequence from raw `f64` log-probabilities, validating every entry.
    pub fn from_raw(
        sequence_id: impl Into<String>,
        model_id: impl Into<String>,
        role: Role,
        token_ids: Vec<u32>,
        logprobs: &[f64],
    ) -> Result<Self> {
        let logprobs = logprobs
            .iter()
            .enumerate()
            .map(|(i, &v)| LogProb::checked(v, i))
            .collect::<Result<Vec<_>>>()?;
        let seq = TokenScoreSequence {
            sequence_id: sequence_id.into(),
            model_id: model_id.into(),
            role,
            token_ids,
            logprobs,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.logprobs.is_empty() && self.token_ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if self.logprobs.len() != self.token_ids.len() {
            return Err(Error::LengthMismatch {
                tokens: self.token_ids.len(),
                logprobs: self.logprobs.len(),
            });
        }
        for (i, lp) in self.logprobs.iter().enumerate() {
            if let LogProb::Finite(v) = *lp {
                if !(v.is_finite() && v <= 0.0) {
                    return Err(Error::InvalidLogProb {
                        position: i,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// λ(W): the mean per-token log-probability, summed in list order.
pub fn sequence_avg_logprob(scores: &TokenScoreSequence) -> Result<Extended> {
    scores.validate()?;
    // running mean: exact when every token has the same log-probability
    let mut mean = 0.0;
    for (i, lp) in scores.logprobs.iter().enumerate() {
        match lp {
            LogProb::Finite(v) => mean += (v - mean) / (i + 1) as f64,
            LogProb::NegInf => return Ok(Extended::NegInf),
        }
    }
    Ok(Extended::Finite(mean))
}

/// Perplexity, `exp(-λ(W))`. Always `>= 1` for a valid sequence.
pub fn sequence_ppl(scores: &TokenScoreSequence) -> Result<Extended> {
    Ok(ppl_from_lambda(sequence_avg_logprob(scores)?))
}

pub(crate) fn ppl_from_lambda(lambda: Extended) -> Extended {
    match lambda {
        Extended::Finite(l) => Extended::Finite((-l).exp()),
        _ => Extended::PosInf,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerProbSummary {
    pub count_total: usize,
    pub count_infinite: usize,
    /// `None` when every sequence is infinite.
    pub mean_lambda_finite: Option<f64>,
    pub median_lambda_finite: Option<f64>,
    pub mean_ppl_finite: Option<f64>,
    pub median_ppl_finite: Option<f64>,
    pub inf_rate: f64,
}

impl PerProbSummary {
    pub fn has_finite(&self) -> bool {
        self.count_infinite < self.count_total
    }
}

/// Lower median: for an even count the smaller of the two central values.
fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

pub fn summarize_dataset(scores: &[TokenScoreSequence]) -> Result<PerProbSummary> {
    let lambdas = scores
        .iter()
        .map(sequence_avg_logprob)
        .collect::<Result<Vec<_>>>()?;
    summarize_lambdas(&lambdas)
}

/// Same as [`summarize_dataset`] for already computed λ values.
pub fn summarize_lambdas(lambdas: &[Extended]) -> Result<PerProbSummary> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput { what: "dataset" });
    }
    let mut finite: Vec<f64> = lambdas.iter().filter_map(|l| l.finite()).collect();
    let count_total = lambdas.len();
    let count_infinite = count_total - finite.len();

    let (mean_lambda, mean_ppl) = if finite.is_empty() {
        (None, None)
    } else {
        let n = finite.len() as f64;
        let mut sum_l = 0.0;
        let mut sum_p = 0.0;
        for &l in &finite {
            sum_l += l;
            sum_p += (-l).exp();
        }
        (Some(sum_l / n), Some(sum_p / n))
    };
    let mut ppls: Vec<f64> = finite.iter().map(|l| (-l).exp()).collect();

    Ok(PerProbSummary {
        count_total,
        count_infinite,
        mean_lambda_finite: mean_lambda,
        median_lambda_finite: lower_median(&mut finite),
        mean_ppl_finite: mean_ppl,
        median_ppl_finite: lower_median(&mut ppls),
        inf_rate: count_infinite as f64 / count_total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftVerdict {
    MemberLike,
    NonmemberLike,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Candidate minus baseline. `None` when either side has no finite sequence.
    pub delta_mean_lambda: Option<f64>,
    pub delta_median_ppl: Option<f64>,
    pub delta_inf_rate: f64,
    pub eq34_verdict: ShiftVerdict,
}

/// Compares a candidate dataset against a baseline.
///
/// `member_like` requires both a higher mean λ and a lower median PPL; the
/// mirrored condition gives `nonmember_like`; anything else is inconclusive.
pub fn membership_shift(candidate: &PerProbSummary, baseline: &PerProbSummary) -> ShiftReport {
    let delta_inf_rate = candidate.inf_rate - baseline.inf_rate;
    let deltas = match (
        candidate.mean_lambda_finite,
        baseline.mean_lambda_finite,
        candidate.median_ppl_finite,
        baseline.median_ppl_finite,
    ) {
        (Some(cl), Some(bl), Some(cp), Some(bp)) => Some((cl - bl, cp - bp)),
        _ => None,
    };
    match deltas {
        None => ShiftReport {
            delta_mean_lambda: None,
            delta_median_ppl: None,
            delta_inf_rate,
            eq34_verdict: ShiftVerdict::Inconclusive,
        },
        Some((dl, dp)) => {
            let verdict = if dl > 0.0 && dp < 0.0 {
                ShiftVerdict::MemberLike
            } else if dl < 0.0 && dp > 0.0 {
                ShiftVerdict::NonmemberLike
            } else {
                ShiftVerdict::Inconclusive
            };
            ShiftReport {
                delta_mean_lambda: Some(dl),
                delta_median_ppl: Some(dp),
                delta_inf_rate,
                eq34_verdict: verdict,
            }
        }
    }
}
