//! Per-update diagnostics shared by the three algorithms.

use serde::{Deserialize, Serialize};

use crate::diffcore::AdError;
use crate::policy::PolicyError;

/// Fields an algorithm does not produce stay `None` and print as empty CSV cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub surrogate_before: Option<f64>,
    pub surrogate_after: Option<f64>,
    /// Sampled mean `KL(π_old ‖ π_new)` over the batch states.
    pub kl: Option<f64>,
    pub cg_residual: Option<f64>,
    pub backtracks: Option<usize>,
    pub accepted: Option<bool>,
    pub value_loss_before: Option<f64>,
    pub value_loss_after: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub eta: Option<f64>,
    /// Largest condition number over the damped K-FAC factors.
    pub factor_condition: Option<f64>,
    pub entropy: Option<f64>,
}

impl UpdateReport {
    pub const COLUMNS: [&'static str; 14] = [
        "surrogate_before",
        "surrogate_after",
        "kl",
        "cg_residual",
        "backtracks",
        "accepted",
        "value_loss_before",
        "value_loss_after",
        "clip_fraction",
        "mean_ratio",
        "max_ratio",
        "eta",
        "factor_condition",
        "entropy",
    ];

    pub fn cells(&self) -> Vec<String> {
        fn f(x: Option<f64>) -> String {
            x.map(|v| format!("{v:e}")).unwrap_or_default()
        }
        vec![
            f(self.surrogate_before),
            f(self.surrogate_after),
            f(self.kl),
            f(self.cg_residual),
            self.backtracks.map(|b| b.to_string()).unwrap_or_default(),
            self.accepted.map(|a| u8::from(a).to_string()).unwrap_or_default(),
            f(self.value_loss_before),
            f(self.value_loss_after),
            f(self.clip_fraction),
            f(self.mean_ratio),
            f(self.max_ratio),
            f(self.eta),
            f(self.factor_condition),
            f(self.entropy),
        ]
    }
}


#[derive(Debug, thiserror::Error)]
pub enum UpdateError {
    #[error("invalid update configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ad(#[from] AdError),
}
