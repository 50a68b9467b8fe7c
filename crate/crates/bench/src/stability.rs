//! Sensitivity of the transition estimate to errors in the output parameters.
//!
//! For each seed one sequence is drawn and estimated with the exact output
//! parameters; then the outputs are moved by `epsilon` along a seeded random
//! unit direction and the estimate is repeated on the same data. The added
//! error is `||A_eps - A_0||_F^2`.

use decouple_hmm::estimators::{full_pipeline, perturb_outputs, PipelineOptions};
use decouple_hmm::model::sample;
use decouple_hmm::{HmmSpec, OutputModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::StabilityConfig;
use crate::{derive_seed, median, BenchError, Result};

const SEED_DIRECTION: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    pub seed: u64,
    pub status: String,
    /// `||A_eps - A_0||_F^2`.
    pub added_error_sq: f64,
    pub added_error: f64,
    /// `||A_0 - A||_F^2` for the same seed.
    pub statistical_error_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub epsilon: f64,
    pub runs: usize,
    pub median_added_error_sq: f64,
    pub median_added_error: f64,
    pub median_statistical_error_sq: f64,
}

fn seed_rows(
    spec: &HmmSpec,
    g: &decouple_hmm::GaussianOutputModel,
    cfg: &StabilityConfig,
    options: PipelineOptions,
    seed: u64,
) -> Vec<StabilityRow> {
    let fail = |msg: String| -> Vec<StabilityRow> {
        cfg.epsilons
            .iter()
            .map(|&epsilon| StabilityRow {
                epsilon,
                seed,
                status: msg.clone(),
                added_error_sq: f64::NAN,
                added_error: f64::NAN,
                statistical_error_sq: f64::NAN,
            })
            .collect()
    };
    let y = match sample(spec, cfg.t as usize, seed) {
        Ok(p) => p.observations,
        Err(e) => return fail(e.to_string()),
    };
    let base = match full_pipeline(&y, &spec.outputs, options) {
        Ok(r) => r.a_hat().into_inner(),
        Err(e) => return fail(e.to_string()),
    };
    let stat = (&base - spec.a.matrix()).norm_squared();
    cfg.epsilons
        .iter()
        .map(|&epsilon| {
            let res = perturb_outputs(g, epsilon, derive_seed(seed, SEED_DIRECTION)).and_then(
                |p| full_pipeline(&y, &OutputModel::Gaussian(p), options),
            );
            match res {
                Ok(r) => {
                    let d = (r.a_hat().into_inner() - &base).norm_squared();
                    StabilityRow {
                        epsilon,
                        seed,
                        status: "ok".into(),
                        added_error_sq: d,
                        added_error: d.sqrt(),
                        statistical_error_sq: stat,
                    }
                }
                Err(e) => StabilityRow {
                    epsilon,
                    seed,
                    status: e.to_string(),
                    added_error_sq: f64::NAN,
                    added_error: f64::NAN,
                    statistical_error_sq: stat,
                },
            }
        })
        .collect()
}

/// Rows sorted by `(epsilon, seed)`; runs on the current rayon pool.
pub fn stability_sweep(
    spec: &HmmSpec,
    cfg: &StabilityConfig,
    options: PipelineOptions,
) -> Result<Vec<StabilityRow>> {
    let OutputModel::Gaussian(g) = &spec.outputs else {
        return Err(BenchError::InvalidConfig(
            "the stability sweep needs Gaussian outputs".into(),
        ));
    };
    let seeds: Vec<u64> = (0..cfg.seeds).map(|s| cfg.seed_offset + s).collect();
    let mut rows: Vec<StabilityRow> = seeds
        .par_iter()
        .flat_map_iter(|&seed| seed_rows(spec, g, cfg, options, seed))
        .collect();
    rows.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

/// Medians per epsilon, in increasing epsilon order.
pub fn summarise(rows: &[StabilityRow]) -> Vec<StabilitySummary> {
    let mut eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    eps.into_iter()
        .map(|epsilon| {
            let ok: Vec<&StabilityRow> = rows
                .iter()
                .filter(|r| r.epsilon == epsilon && r.status == "ok")
                .collect();
            let mut sq: Vec<f64> = ok.iter().map(|r| r.added_error_sq).collect();
            let mut lin: Vec<f64> = ok.iter().map(|r| r.added_error).collect();
            let mut stat: Vec<f64> = ok.iter().map(|r| r.statistical_error_sq).collect();
            StabilitySummary {
                epsilon,
                runs: ok.len(),
                median_added_error_sq: median(&mut sq),
                median_added_error: median(&mut lin),
                median_statistical_error_sq: median(&mut stat),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use decouple_hmm::model::builtin;

    #[test]
    fn zero_epsilon_matches_baseline_exactly() {
        let cfg = StabilityConfig {
            epsilons: vec![0.0, 1e-2],
            t: 5_000,
            seeds: 2,
            seed_offset: 0,
        };
        let rows = stability_sweep(&builtin::toy_gaussian(), &cfg, Default::default()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows.iter().filter(|r| r.epsilon == 0.0) {
            assert_eq!(r.added_error_sq, 0.0);
        }
        let s = summarise(&rows);
        assert_eq!(s.len(), 2);
        assert!(s[1].median_added_error_sq > 0.0);
    }

    #[test]
    fn discrete_spec_is_rejected() {
        let cfg = StabilityConfig::default();
        assert!(stability_sweep(&builtin::toy_discrete(), &cfg, Default::default()).is_err());
    }
}
