//! Experiment harness for `decouple-hmm`: the seven-method comparison,
//! error-rate fits, the output-perturbation sweep and CSV reporting.

pub mod config;
pub mod experiment;
pub mod output;
pub mod rates;
pub mod stability;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("insufficient data for a rate fit: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Core(#[from] decouple_hmm::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

pub use config::{ExperimentConfig, SpecSource, StabilityConfig};
pub use experiment::{run_experiment, run_seed, ExperimentResults, ResultRow};
pub use rates::{rate_check, Quantity, RateCheck};
pub use stability::{stability_sweep, StabilityRow};

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Independent stream for `purpose` under a run seed.
pub(crate) fn derive_seed(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(purpose.wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ 0x2545_F491_4F6C_DD1D
}
