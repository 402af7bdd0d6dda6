//! Membership attack models trained on posterior vectors, and the attack
//! metric suite.

pub mod forest;
pub mod metrics;
pub mod mlp;

use serde::{Deserialize, Serialize};

use crate::defense::DpEcho;
use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

pub use forest::{rf_predict, rf_predict_labels, rf_train, DecisionTree, ForestConfig, ForestParams};
pub use metrics::{compute_metrics, macro_f1, AttackMetrics};
pub use mlp::{mlp_predict, mlp_predict_labels, mlp_train, MlpConfig, MlpParams};

pub const ATTACK_VERSION: &str = "attack_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    Nonmember,
    Unknown,
}

/// One classifier output for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorRecord {
    pub record_id: String,
    pub posteriors: Vec<f64>,
    pub true_class: usize,
    pub membership: Membership,
    pub source_model: String,
    /// Present on records emitted through the Laplace mechanism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpEcho>,
}

impl PosteriorRecord {
    pub fn validate(&self) -> Result<()> {
        if self.posteriors.is_empty() {
            return Err(Error::EmptyInput { what: "posteriors" });
        }
        if self
            .posteriors
            .iter()
            .any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::schema("posteriors", "entries must lie in [0, 1]"));
        }
        let sum: f64 = self.posteriors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::schema("posteriors", format!("sum is {sum}, expected 1")));
        }
        if self.true_class >= self.posteriors.len() {
            return Err(Error::LabelOutOfRange {
                label: self.true_class,
                num_classes: self.posteriors.len(),
            });
        }
        Ok(())
    }
}

/// Labelled posteriors used to train or evaluate an attack model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub records: Vec<PosteriorRecord>,
    pub feature_k: usize,
}

impl AttackDataset {
    pub fn new(records: Vec<PosteriorRecord>, feature_k: usize) -> Result<Self> {
        if feature_k == 0 {
            return Err(Error::invalid("feature_k", "must be at least 1"));
        }
        let mut has_member = false;
        let mut has_nonmember = false;
        for r in &records {
            match r.membership {
                Membership::Member => has_member = true,
                Membership::Nonmember => has_nonmember = true,
                Membership::Unknown => {
                    return Err(Error::schema(
                        "membership",
                        format!("record {} has unknown membership", r.record_id),
                    ))
                }
            }
        }
        if !(has_member && has_nonmember) {
            return Err(Error::SingleClass);
        }
        Ok(AttackDataset { records, feature_k })
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| featurize(&r.posteriors, self.feature_k))
            .collect()
    }

    /// `true` for members.
    pub fn labels(&self) -> Vec<bool> {
        self.records
            .iter()
            .map(|r| r.membership == Membership::Member)
            .collect()
    }
}

/// Posterior vector sorted descending, truncated or zero-padded to `k`.
pub fn featurize(posteriors: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = posteriors.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.resize(k, 0.0);
    sorted
}

/// Default feature width: `min(C, 10)`.
pub fn default_feature_k(num_classes: usize) -> usize {
    num_classes.clamp(1, 10)
}

/// A trained attack model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum AttackModel {
    Mlp(MlpParams),
    Forest(ForestParams),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttackFile {
    version: String,
    model: AttackModel,
}

impl AttackModel {
    pub fn name(&self) -> &'static str {
        match self {
            AttackModel::Mlp(_) => "mlp",
            AttackModel::Forest(_) => "rf",
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<bool> {
        match self {
            AttackModel::Mlp(p) => mlp_predict(p, features).map(|prob| prob > 0.5),
            AttackModel::Forest(f) => rf_predict(f, features).map(|(label, _)| label),
        }
    }

    pub fn predict_labels(&self, features: &[Vec<f64>]) -> Result<Vec<bool>> {
        features.iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> String {
        let file = AttackFile {
            version: ATTACK_VERSION.to_string(),
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("attack model serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: AttackFile =
            serde_json::from_str(s).map_err(|e| Error::schema("<document>", e.to_string()))?;
        if file.version != ATTACK_VERSION {
            return Err(Error::schema(
                "version",
                format!("expected {ATTACK_VERSION:?}, found {:?}", file.version),
            ));
        }
        Ok(file.model)
    }

    pub fn export(&self, path: &std::path::Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn import(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
