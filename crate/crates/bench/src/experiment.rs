//! The seven-method comparison.
//!
//! | id | output parameters              | initial A            |
//! |----|--------------------------------|----------------------|
//! | 1  | Baum-Welch from random values  | random               |
//! | 2  | known, QP only                 | -                    |
//! | 3  | EM mixture fit, then QP        | -                    |
//! | 4  | known, held fixed in BW        | method 2 estimate    |
//! | 5  | EM fit, updated by BW          | method 3 estimate    |
//! | 6  | known, held fixed in BW        | random               |
//! | 7  | EM fit, updated by BW          | random               |
//!
//! Stages shared between methods (the exact-parameter QP, the EM fit and the
//! QP on the EM fit) run once per `(T, seed)` and their wall time is charged to
//! every method that uses them.

use std::time::Instant;

use decouple_hmm::baseline::{
    baum_welch_observed, random_discrete_outputs, random_gaussian_outputs,
    random_transition_matrix, BaumWelchInit,
};
use decouple_hmm::estimators::{error_metrics, full_pipeline, population_pipeline, EstimationReport};
use decouple_hmm::mixture::{align_components, best_permutation, em_fit, MixtureConfig, MixtureFit};
use decouple_hmm::model::{sample, stationary_distribution};
use decouple_hmm::{HmmSpec, Observations, OutputModel};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{uses_em, ExperimentConfig};
use crate::stability::{stability_sweep, StabilityRow};
use crate::{derive_seed, median, BenchError, Result};

const SEED_EM: u64 = 1;
const SEED_A0: u64 = 2;
const SEED_THETA: u64 = 3;

/// Wall-clock milliseconds per stage of one method run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub em_ms: f64,
    pub qp_ms: f64,
    pub bw_ms: f64,
    pub total_ms: f64,
}

/// One `(method, T, seed)` run. Timings are kept out of the serialised row
/// so that results files are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: u8,
    #[serde(rename = "T")]
    pub t: u64,
    pub seed: u64,
    /// `ok`, or the error that stopped this run.
    pub status: String,
    pub frobenius_sq_error: f64,
    pub frobenius_error: f64,
    pub pi_sq_error: f64,
    /// `alignment[i]`: estimated state matched to true state `i`, space separated.
    pub alignment: String,
    /// Aligned squared Frobenius error after each Baum-Welch iteration, `;` separated.
    pub bw_iterations_trace: String,
    #[serde(skip)]
    pub times: StageTimes,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn trace(&self) -> Vec<f64> {
        if self.bw_iterations_trace.is_empty() {
            return Vec::new();
        }
        self.bw_iterations_trace
            .split(';')
            .map(|v| v.parse().unwrap_or(f64::NAN))
            .collect()
    }

    fn failed(method: u8, t: u64, seed: u64, msg: &str) -> Self {
        Self {
            method,
            t,
            seed,
            status: msg.to_string(),
            frobenius_sq_error: f64::NAN,
            frobenius_error: f64::NAN,
            pi_sq_error: f64::NAN,
            alignment: String::new(),
            bw_iterations_trace: String::new(),
            times: StageTimes::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: u8,
    #[serde(rename = "T")]
    pub t: u64,
    pub seed: u64,
    pub em_ms: f64,
    pub qp_ms: f64,
    pub bw_ms: f64,
    pub total_ms: f64,
}

impl From<&ResultRow> for TimingRow {
    fn from(r: &ResultRow) -> Self {
        Self {
            method: r.method,
            t: r.t,
            seed: r.seed,
            em_ms: r.times.em_ms,
            qp_ms: r.times.qp_ms,
            bw_ms: r.times.bw_ms,
            total_ms: r.times.total_ms,
        }
    }
}

/// Medians and means over seeds for one `(method, T)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: u8,
    #[serde(rename = "T")]
    pub t: u64,
    pub runs: usize,
    pub failed: usize,
    pub median_frobenius_sq_error: f64,
    pub mean_frobenius_sq_error: f64,
    pub median_pi_sq_error: f64,
    pub mean_pi_sq_error: f64,
    pub median_total_ms: f64,
    pub mean_total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationResult {
    pub status: String,
    pub frobenius_sq_error: f64,
    pub pi_sq_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    /// Sorted by `(method, T, seed)`.
    pub rows: Vec<ResultRow>,
    pub population: Option<PopulationResult>,
    pub stability: Option<Vec<StabilityRow>>,
}

impl ExperimentResults {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.ok())
            || self.population.as_ref().is_some_and(|p| p.status != "ok")
            || self
                .stability
                .as_ref()
                .is_some_and(|s| s.iter().any(|r| r.status != "ok"))
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        summarise(&self.rows)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarise(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(u8, u64)> = rows.iter().map(|r| (r.method, r.t)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(method, t)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && r.t == t)
                .collect();
            let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.ok()).collect();
            let mut frob: Vec<f64> = ok.iter().map(|r| r.frobenius_sq_error).collect();
            let mut pi: Vec<f64> = ok
                .iter()
                .map(|r| r.pi_sq_error)
                .filter(|v| v.is_finite())
                .collect();
            let mut ms: Vec<f64> = ok.iter().map(|r| r.times.total_ms).collect();
            SummaryRow {
                method,
                t,
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                mean_frobenius_sq_error: mean(&frob),
                median_frobenius_sq_error: median(&mut frob),
                mean_pi_sq_error: mean(&pi),
                median_pi_sq_error: median(&mut pi),
                mean_total_ms: mean(&ms),
                median_total_ms: median(&mut ms),
            }
        })
        .collect()
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn join_perm(p: &[usize]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Matches estimated output parameters to the truth (`p[i]` estimated for true `i`).
pub fn align_outputs(estimated: &OutputModel, truth: &OutputModel) -> Vec<usize> {
    match (estimated, truth) {
        (OutputModel::Gaussian(e), OutputModel::Gaussian(t)) => {
            align_components(e.components(), t.components())
        }
        (OutputModel::Discrete(e), OutputModel::Discrete(t)) => {
            best_permutation(t.n(), |i, j| (e.b().column(j) - t.b().column(i)).abs().sum())
        }
        _ => (0..truth.n()).collect(),
    }
}

struct Shared {
    spec: HmmSpec,
    y: Observations,
    t: u64,
    seed: u64,
}

impl Shared {
    fn qp(&self, outputs: &OutputModel, cfg: &ExperimentConfig) -> Result<(EstimationReport, f64)> {
        let start = Instant::now();
        let report = full_pipeline(&self.y, outputs, cfg.estimator)?;
        Ok((report, ms_since(start)))
    }

    fn qp_row(
        &self,
        method: u8,
        report: &EstimationReport,
        alignment: Vec<usize>,
        times: StageTimes,
    ) -> ResultRow {
        match error_metrics(&report.pi_hat(), report.a_hat().matrix(), &self.spec.a, &alignment) {
            Ok(e) => ResultRow {
                method,
                t: self.t,
                seed: self.seed,
                status: "ok".into(),
                frobenius_sq_error: e.a_frobenius_sq,
                frobenius_error: e.a_frobenius,
                pi_sq_error: e.pi_sq,
                alignment: join_perm(&alignment),
                bw_iterations_trace: String::new(),
                times,
            },
            Err(e) => ResultRow::failed(method, self.t, self.seed, &e.to_string()),
        }
    }

    /// Baum-Welch from `init`; alignment is recomputed from the outputs unless they are fixed.
    fn bw_row(
        &self,
        method: u8,
        init: BaumWelchInit,
        iterations: usize,
        mut times: StageTimes,
    ) -> ResultRow {
        let truth = &self.spec;
        let fixed = init.fix_outputs;
        let identity: Vec<usize> = (0..truth.n()).collect();
        let mut trace = Vec::with_capacity(iterations);
        let start = Instant::now();
        let result = baum_welch_observed(&self.y, &init, iterations, |_, a, outputs| {
            let p = if fixed {
                identity.clone()
            } else {
                align_outputs(outputs, &truth.outputs)
            };
            let aligned = decouple_hmm::estimators::align_square(a.matrix(), &p);
            trace.push((aligned - truth.a.matrix()).norm_squared());
        });
        times.bw_ms = ms_since(start);
        times.total_ms = times.em_ms + times.qp_ms + times.bw_ms;
        let result = match result {
            Ok(r) => r,
            Err(e) => return ResultRow::failed(method, self.t, self.seed, &e.to_string()),
        };
        let alignment = if fixed {
            identity
        } else {
            align_outputs(&result.outputs_hat, &truth.outputs)
        };
        let pi_hat = stationary_distribution(&result.a_hat)
            .unwrap_or_else(|_| DVector::from_element(truth.n(), f64::NAN));
        match error_metrics(&pi_hat, result.a_hat.matrix(), &truth.a, &alignment) {
            Ok(e) => ResultRow {
                method,
                t: self.t,
                seed: self.seed,
                status: "ok".into(),
                frobenius_sq_error: e.a_frobenius_sq,
                frobenius_error: e.a_frobenius,
                pi_sq_error: e.pi_sq,
                alignment: join_perm(&alignment),
                bw_iterations_trace: trace
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                times,
            },
            Err(e) => ResultRow::failed(method, self.t, self.seed, &e.to_string()),
        }
    }
}

fn random_outputs(y: &Observations, truth: &OutputModel, seed: u64) -> Result<OutputModel> {
    let n = truth.n();
    Ok(match (y, truth) {
        (Observations::Continuous(v), _) => {
            OutputModel::Gaussian(random_gaussian_outputs(v, n, seed)?)
        }
        (Observations::Discrete(_), OutputModel::Discrete(b)) => {
            OutputModel::Discrete(random_discrete_outputs(b.m(), n, seed)?)
        }
        _ => return Err(BenchError::InvalidConfig("observation/output mismatch".into())),
    })
}

type Stage<T> = Option<std::result::Result<T, String>>;

fn stage<T>(wanted: bool, f: impl FnOnce() -> Result<T>) -> Stage<T> {
    wanted.then(|| f().map_err(|e| e.to_string()))
}

/// All requested methods on one sampled sequence of length `t`.
pub fn run_seed(spec: &HmmSpec, cfg: &ExperimentConfig, t: u64, seed: u64) -> Vec<ResultRow> {
    let mut methods = cfg.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let path = match sample(spec, t as usize, seed) {
        Ok(p) => p,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| ResultRow::failed(m, t, seed, &e.to_string()))
                .collect()
        }
    };
    let sh = Shared {
        spec: spec.clone(),
        y: path.observations,
        t,
        seed,
    };
    let n = spec.n();
    let identity: Vec<usize> = (0..n).collect();
    let has = |m: u8| methods.contains(&m);

    let exact_qp = stage(has(2) || has(4), || sh.qp(&spec.outputs, cfg));
    let em = stage(methods.iter().any(|&m| uses_em(m)), || {
        let Observations::Continuous(v) = &sh.y else {
            return Err(BenchError::InvalidConfig("EM needs continuous data".into()));
        };
        let start = Instant::now();
        let mc = MixtureConfig {
            seed: derive_seed(seed, SEED_EM),
            ..cfg.mixture
        };
        let fit: MixtureFit = em_fit(v, n, &mc)?;
        let outputs = OutputModel::Gaussian(fit.outputs()?);
        Ok((outputs, ms_since(start)))
    });
    let em_qp = stage(has(3) || has(5), || match &em {
        Some(Ok((outputs, _))) => sh.qp(outputs, cfg),
        Some(Err(e)) => Err(BenchError::InvalidConfig(e.clone())),
        None => unreachable!(),
    });
    let a0 = random_transition_matrix(n, derive_seed(seed, SEED_A0));

    let mut rows = Vec::with_capacity(methods.len());
    for &m in &methods {
        let row = match m {
            1 => match random_outputs(&sh.y, &spec.outputs, derive_seed(seed, SEED_THETA)) {
                Ok(outputs0) => sh.bw_row(
                    1,
                    BaumWelchInit {
                        a0: a0.clone(),
                        outputs0,
                        initial0: None,
                        fix_outputs: false,
                    },
                    cfg.bw_iterations,
                    StageTimes::default(),
                ),
                Err(e) => ResultRow::failed(1, t, seed, &e.to_string()),
            },
            2 => match exact_qp.as_ref().expect("stage requested") {
                Ok((report, qp_ms)) => sh.qp_row(
                    2,
                    report,
                    identity.clone(),
                    StageTimes {
                        qp_ms: *qp_ms,
                        total_ms: *qp_ms,
                        ..Default::default()
                    },
                ),
                Err(e) => ResultRow::failed(2, t, seed, e),
            },
            3 => match (em.as_ref().expect("stage"), em_qp.as_ref().expect("stage")) {
                (Ok((outputs, em_ms)), Ok((report, qp_ms))) => sh.qp_row(
                    3,
                    report,
                    align_outputs(outputs, &spec.outputs),
                    StageTimes {
                        em_ms: *em_ms,
                        qp_ms: *qp_ms,
                        total_ms: em_ms + qp_ms,
                        ..Default::default()
                    },
                ),
                (Err(e), _) | (_, Err(e)) => ResultRow::failed(3, t, seed, e),
            },
            4 => match exact_qp.as_ref().expect("stage") {
                Ok((report, qp_ms)) => sh.bw_row(
                    4,
                    BaumWelchInit {
                        a0: report.a_hat(),
                        outputs0: spec.outputs.clone(),
                        initial0: None,
                        fix_outputs: true,
                    },
                    cfg.bw_iterations,
                    StageTimes {
                        qp_ms: *qp_ms,
                        ..Default::default()
                    },
                ),
                Err(e) => ResultRow::failed(4, t, seed, e),
            },
            5 => match (em.as_ref().expect("stage"), em_qp.as_ref().expect("stage")) {
                (Ok((outputs, em_ms)), Ok((report, qp_ms))) => sh.bw_row(
                    5,
                    BaumWelchInit {
                        a0: report.a_hat(),
                        outputs0: outputs.clone(),
                        initial0: None,
                        fix_outputs: false,
                    },
                    cfg.bw_iterations,
                    StageTimes {
                        em_ms: *em_ms,
                        qp_ms: *qp_ms,
                        ..Default::default()
                    },
                ),
                (Err(e), _) | (_, Err(e)) => ResultRow::failed(5, t, seed, e),
            },
            6 => sh.bw_row(
                6,
                BaumWelchInit {
                    a0: a0.clone(),
                    outputs0: spec.outputs.clone(),
                    initial0: None,
                    fix_outputs: true,
                },
                cfg.bw_iterations,
                StageTimes::default(),
            ),
            7 => match em.as_ref().expect("stage") {
                Ok((outputs, em_ms)) => sh.bw_row(
                    7,
                    BaumWelchInit {
                        a0: a0.clone(),
                        outputs0: outputs.clone(),
                        initial0: None,
                        fix_outputs: false,
                    },
                    cfg.bw_iterations,
                    StageTimes {
                        em_ms: *em_ms,
                        ..Default::default()
                    },
                ),
                Err(e) => ResultRow::failed(7, t, seed, e),
            },
            other => ResultRow::failed(other, t, seed, "unknown method"),
        };
        rows.push(row);
    }
    rows
}

/// Method 2 on exact population moments.
pub fn run_population(spec: &HmmSpec, cfg: &ExperimentConfig) -> PopulationResult {
    let identity: Vec<usize> = (0..spec.n()).collect();
    let res = population_pipeline(spec, cfg.estimator).and_then(|r| {
        error_metrics(&r.pi_hat(), r.a_hat().matrix(), &spec.a, &identity)
    });
    match res {
        Ok(e) => PopulationResult {
            status: "ok".into(),
            frobenius_sq_error: e.a_frobenius_sq,
            pi_sq_error: e.pi_sq,
        },
        Err(e) => PopulationResult {
            status: e.to_string(),
            frobenius_sq_error: f64::NAN,
            pi_sq_error: f64::NAN,
        },
    }
}

/// Runs every `(T, seed)` job on a bounded pool; per-run failures are recorded, never fatal.
pub fn run_experiment(spec: &HmmSpec, cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate(spec)?;
    let jobs: Vec<(u64, u64)> = cfg
        .t_grid
        .iter()
        .flat_map(|&t| (0..cfg.seeds).map(move |s| (t, cfg.seed_offset + s)))
        .collect();
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<ResultRow> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(t, seed)| run_seed(spec, cfg, t, seed))
            .collect()
    });
    rows.sort_by_key(|r| (r.method, r.t, r.seed));
    let population = cfg.population.then(|| run_population(spec, cfg));
    let stability = match &cfg.stability {
        Some(sc) => Some(pool.install(|| stability_sweep(spec, sc, cfg.estimator))?),
        None => None,
    };
    Ok(ExperimentResults {
        rows,
        population,
        stability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use decouple_hmm::model::builtin;

    fn small_config(methods: Vec<u8>) -> ExperimentConfig {
        ExperimentConfig {
            methods,
            t_grid: vec![2_000],
            seeds: 2,
            bw_iterations: 3,
            workers: Some(1),
            ..Default::default()
        }
    }

    #[test]
    fn every_method_produces_a_row() {
        let spec = builtin::toy_gaussian();
        let res = run_experiment(&spec, &small_config((1..=7).collect())).unwrap();
        assert_eq!(res.rows.len(), 14);
        for r in &res.rows {
            assert!(r.ok(), "{r:?}");
            assert!(r.frobenius_sq_error >= 0.0);
            assert_eq!(r.alignment.split(' ').count(), 4);
            let bw = [1, 4, 5, 6, 7].contains(&r.method);
            assert_eq!(r.trace().len(), if bw { 3 } else { 0 });
        }
        let keys: Vec<_> = res.rows.iter().map(|r| (r.method, r.t, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn discrete_spec_runs_known_output_methods() {
        let spec = builtin::toy_discrete();
        let res = run_experiment(&spec, &small_config(vec![1, 2, 4, 6])).unwrap();
        assert!(res.rows.iter().all(|r| r.ok()), "{:?}", res.rows);
    }

    #[test]
    fn population_mode_is_exact() {
        let spec = builtin::toy_gaussian();
        let p = run_population(&spec, &ExperimentConfig::default());
        assert_eq!(p.status, "ok");
        assert!(p.frobenius_sq_error < 1e-12);
    }

    #[test]
    fn summary_counts_runs() {
        let spec = builtin::toy_gaussian();
        let res = run_experiment(&spec, &small_config(vec![2, 6])).unwrap();
        let s = res.summary();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|c| c.runs == 2 && c.failed == 0));
    }
}
