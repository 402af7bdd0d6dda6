//! Mitigations: Laplace output perturbation, knowledge distillation and
//! early stopping.

pub mod early_stop;
pub mod kd;
pub mod laplace;

use serde::{Deserialize, Serialize};

pub use early_stop::{early_stop_check, EsConfig};
pub use kd::{distill, distill_from, kd_loss, KdConfig, KdTrace};
pub use laplace::{
    laplace_from_uniform, laplace_sample, laplace_scale, perturb_posteriors, perturb_vector, DpEcho,
    LaplaceConfig, MuMode,
};

/// The defense applied to a victim in one pipeline cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defense {
    None,
    Dp(LaplaceConfig),
    Kd(KdConfig),
    Es(EsConfig),
}

impl Defense {
    /// Short stable label used in run directory names.
    pub fn label(&self) -> String {
        match self {
            Defense::None => "none".to_string(),
            Defense::Dp(c) => format!("dp-{}-eps{}", c.mu_mode.as_str(), c.epsilon),
            Defense::Kd(c) => format!("kd-t{}", c.temperature),
            Defense::Es(c) => format!("es-th{}", c.threshold),
        }
    }
}
