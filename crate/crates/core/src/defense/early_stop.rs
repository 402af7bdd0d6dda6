//! Early stopping on validation perplexity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    /// Minimum per-epoch PPL decrement that counts as progress.
    pub threshold: f64,
    /// Number of consecutive sub-threshold decrements that stops training.
    pub patience: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            threshold: 0.005,
            patience: 2,
        }
    }
}

impl EsConfig {
    pub const THRESHOLD_RANGE: (f64, f64) = (0.001, 0.01);

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::invalid("threshold", "must be finite and >= 0"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        Ok(())
    }
}

/// Returns the 1-based epoch `t` at which the stopping rule first holds:
/// for `patience` consecutive epochs `e` ending at `t`,
/// `ppl[e-1] - ppl[e] < threshold`.
pub fn early_stop_check(validation_ppl: &[f64], cfg: &EsConfig) -> Option<usize> {
    let mut run = 0;
    for (i, pair) in validation_ppl.windows(2).enumerate() {
        if pair[0] - pair[1] < cfg.threshold {
            run += 1;
            if run >= cfg.patience {
                // pair[1] is epoch i + 2 in 1-based numbering
                return Some(i + 2);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_two_small_decrements() {
        let cfg = EsConfig {
            threshold: 0.01,
            patience: 2,
        };
        assert_eq!(early_stop_check(&[10.0, 9.0, 8.999, 8.9985], &cfg), Some(4));
    }

    #[test]
    fn steep_descent_never_stops() {
        let cfg = EsConfig::default();
        let trace: Vec<f64> = (0..20).map(|i| 100.0 - 3.0 * i as f64).collect();
        assert_eq!(early_stop_check(&trace, &cfg), None);
        assert_eq!(early_stop_check(&[5.0], &cfg), None);
    }

    #[test]
    fn rising_ppl_counts_as_no_progress() {
        let cfg = EsConfig {
            threshold: 0.001,
            patience: 1,
        };
        assert_eq!(early_stop_check(&[10.0, 9.0, 9.5], &cfg), Some(3));
    }

    #[test]
    fn a_large_step_resets_the_run() {
        let cfg = EsConfig {
            threshold: 0.01,
            patience: 2,
        };
        assert_eq!(early_stop_check(&[10.0, 9.999, 8.0, 7.999, 7.998], &cfg), Some(5));
    }

    #[test]
    fn validation() {
        assert!(EsConfig::default().validate().is_ok());
        assert!(EsConfig { threshold: 0.01, patience: 0 }.validate().is_err());
        assert!(EsConfig { threshold: f64::NAN, patience: 1 }.validate().is_err());
    }
}
