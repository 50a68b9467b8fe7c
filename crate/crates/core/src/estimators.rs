//! Stationary-distribution and transition-matrix estimators.
//!
//! Both estimators treat the hidden chain as if its states were drawn
//! independently from the stationary distribution and match either singleton
//! moments (for `pi`) or consecutive-pair moments (for `A`) in a weighted or
//! plain least-squares sense. The weighted objectives use inverse empirical
//! frequencies; cells with a zero empirical moment get weight zero.
//!
//! For `A`, with `vec` stacking columns (`A_ij` at `i + j n`), the pair model is
//! `nu = C vec(A)` where `C[(k + k' m), (i + j n)] = pi_j E_kj E_k'i` and `E` is
//! `B` (discrete), `F` (Gaussian, posterior pairs) or `K` (Gaussian, density pairs).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    seeded_rng, stationary_distribution, DiscreteOutputModel, GaussianComponent,
    GaussianOutputModel, HmmSpec, Observations, OutputModel, TransitionMatrix, RANK_TOL,
};
use crate::moments::{
    self, compute_f, gaussian_k, ContinuousMoments, DiscreteAccumulator, DiscreteMoments,
    EtaAccumulator, EtaPrimeAccumulator, XiAccumulator, PI_FLOOR,
};
use crate::qp::{self, NormalEquations, QpSolution, SimplexQp};

/// Least-squares metric for the moment-matching objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `||v||^2_{1/nu_hat}`, zero weight on empty cells.
    #[default]
    Weighted,
    /// Plain `||v||_2^2`.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMethod {
    NormalEquations,
    WeightedQp,
    UnweightedQp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active_constraints: usize,
}

impl From<&QpSolution> for SolverStats {
    fn from(s: &QpSolution) -> Self {
        Self {
            iterations: s.iterations,
            kkt_residual: s.kkt_residual,
            active_constraints: s.active_set.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiEstimate {
    pub pi_hat: DVector<f64>,
    pub method: PiMethod,
    /// `None` when the normal equations were enough.
    pub solver: Option<SolverStats>,
    /// Smallest singular value of `diag(1/sqrt(rho_hat)) B` or `diag(1/sqrt(xi_hat)) K`.
    pub sigma1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AEstimate {
    pub a_hat: TransitionMatrix,
    pub objective: Objective,
    pub stationarity_constraint: bool,
    pub solver: SolverStats,
    /// Smallest singular value of the pair operator `C`.
    pub sigma1_c: f64,
}

/// Options for the transition-matrix QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AOptions {
    pub objective: Objective,
    /// Adds `A pi_hat = pi_hat` to the constraint set.
    pub stationarity_constraint: bool,
    /// Gaussian outputs only: match density pairs `eta'` through `K` instead of posterior pairs `eta` through `F`.
    pub eta_prime: bool,
}

impl AOptions {
    /// Weighted objective with the stationarity constraint.
    pub fn weighted() -> Self {
        Self {
            objective: Objective::Weighted,
            stationarity_constraint: true,
            eta_prime: false,
        }
    }

    /// Plain least squares without the stationarity constraint.
    pub fn unweighted() -> Self {
        Self {
            objective: Objective::Unweighted,
            stationarity_constraint: false,
            eta_prime: false,
        }
    }
}

impl Default for AOptions {
    fn default() -> Self {
        Self::weighted()
    }
}

fn inverse_weights(v: impl Iterator<Item = f64>, objective: Objective) -> Vec<f64> {
    v.map(|x| match objective {
        Objective::Unweighted => 1.0,
        Objective::Weighted if x > 0.0 => 1.0 / x,
        Objective::Weighted => 0.0,
    })
    .collect()
}

/// `E^T diag(w) E` and `E^T diag(w) target`.
fn weighted_normal_form(
    e: &DMatrix<f64>,
    w: &[f64],
    target: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut we = e.clone();
    for (r, &wr) in w.iter().enumerate() {
        we.row_mut(r).scale_mut(wr);
    }
    let m = linalg::symmetrize(&(e.transpose() * &we));
    let h = we.transpose() * target;
    (m, h)
}

/// `sigma_min(diag(1/sqrt(v)) E)` over rows with `v > 0`.
fn scaled_sigma_min(e: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let rows: Vec<usize> = (0..v.len()).filter(|&k| v[k] > 0.0).collect();
    let scaled = DMatrix::from_fn(rows.len(), e.ncols(), |r, c| {
        e[(rows[r], c)] / v[rows[r]].sqrt()
    });
    linalg::sigma_min(&scaled)
}

fn solve_pi_qp(
    e: &DMatrix<f64>,
    target: &DVector<f64>,
    objective: Objective,
) -> Result<(DVector<f64>, SolverStats)> {
    let w = inverse_weights(target.iter().copied(), objective);
    let (m, h) = weighted_normal_form(e, &w, target);
    let sol = qp::solve(&SimplexQp::on_simplex(m, h)?)?;
    let stats = SolverStats::from(&sol);
    Ok((renormalise(sol.x), stats))
}

fn renormalise(mut x: DVector<f64>) -> DVector<f64> {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = x.sum();
    x / s
}

/// `pi_hat` from symbol frequencies.
///
/// The weighted objective first tries the closed form `W^{-1} 1` with
/// `W = B^T diag(1/rho_hat) B`; it falls back to the simplex QP when that
/// vector has a nonpositive entry, when `W` is singular, or when some symbol
/// was never observed.
pub fn estimate_pi_discrete(
    moments: &DiscreteMoments,
    outputs: &DiscreteOutputModel,
    objective: Objective,
) -> Result<PiEstimate> {
    outputs.check_rank()?;
    let b = outputs.b();
    if moments.rho.len() != b.nrows() {
        return Err(Error::Dimension(format!(
            "rho_hat has {} symbols, B has {}",
            moments.rho.len(),
            b.nrows()
        )));
    }
    let sigma1 = scaled_sigma_min(b, &moments.rho);
    if objective == Objective::Weighted && moments.rho.iter().all(|&r| r > 0.0) {
        let w = inverse_weights(moments.rho.iter().copied(), objective);
        let (gram, _) = weighted_normal_form(b, &w, &moments.rho);
        match qp::solve_normal_equations(&gram) {
            Ok(NormalEquations::Solved(pi_hat)) => {
                return Ok(PiEstimate {
                    pi_hat,
                    method: PiMethod::NormalEquations,
                    solver: None,
                    sigma1,
                })
            }
            Ok(NormalEquations::NeedsQp) | Err(Error::SingularW(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let (pi_hat, stats) = solve_pi_qp(b, &moments.rho, objective)?;
    Ok(PiEstimate {
        pi_hat,
        method: match objective {
            Objective::Weighted => PiMethod::WeightedQp,
            Objective::Unweighted => PiMethod::UnweightedQp,
        },
        solver: Some(stats),
        sigma1,
    })
}

/// `pi_hat` from `xi_hat` and the kernel matrix `K`, over the simplex.
pub fn estimate_pi_continuous(
    xi_hat: &DVector<f64>,
    k: &DMatrix<f64>,
    objective: Objective,
) -> Result<PiEstimate> {
    let n = k.ncols();
    if k.nrows() != n || xi_hat.len() != n {
        return Err(Error::Dimension(format!(
            "K is {}x{}, xi_hat has length {}",
            k.nrows(),
            n,
            xi_hat.len()
        )));
    }
    let ratio = linalg::inverse_condition(k);
    if ratio <= RANK_TOL {
        return Err(Error::RankDeficientK(ratio));
    }
    let sigma1 = scaled_sigma_min(k, xi_hat);
    let method = match objective {
        Objective::Weighted => PiMethod::WeightedQp,
        Objective::Unweighted => PiMethod::UnweightedQp,
    };
    if n == 1 {
        return Ok(PiEstimate {
            pi_hat: DVector::from_element(1, 1.0),
            method,
            solver: None,
            sigma1,
        });
    }
    let (pi_hat, stats) = solve_pi_qp(k, xi_hat, objective)?;
    Ok(PiEstimate {
        pi_hat,
        method,
        solver: Some(stats),
        sigma1,
    })
}

/// Dense pair operator: `C[(k + k' m), (i + j n)] = pi_j E_kj E_k'i`.
pub fn build_c(pi_hat: &DVector<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let m = e.nrows();
    let n = e.ncols();
    assert_eq!(pi_hat.len(), n, "pi_hat and E disagree on the state count");
    let mut c = DMatrix::zeros(m * m, n * n);
    for j in 0..n {
        for i in 0..n {
            let col = i + j * n;
            for kp in 0..m {
                let right = pi_hat[j] * e[(kp, i)];
                for k in 0..m {
                    c[(k + kp * m, col)] = e[(k, j)] * right;
                }
            }
        }
    }
    c
}

/// Column-sum rows, then optionally the rows of `A pi_hat = pi_hat`.
fn a_constraints(pi_hat: &DVector<f64>, stationarity: bool) -> (DMatrix<f64>, DVector<f64>) {
    let n = pi_hat.len();
    let rows = if stationarity { 2 * n } else { n };
    let mut e = DMatrix::zeros(rows, n * n);
    let mut rhs = DVector::zeros(rows);
    for j in 0..n {
        for i in 0..n {
            e[(j, i + j * n)] = 1.0;
        }
        rhs[j] = 1.0;
    }
    if stationarity {
        for i in 0..n {
            for j in 0..n {
                e[(n + i, i + j * n)] = pi_hat[j];
            }
            rhs[n + i] = pi_hat[i];
        }
    }
    (e, rhs)
}

/// Shared transition-matrix QP: match `nu_hat` (`m x m`) through `E` (`m x n`).
///
/// Weights inside `C` use `pi_hat` floored at [`PI_FLOOR`]; the stationarity
/// constraint uses `pi_hat` as given.
pub fn estimate_a(
    nu_hat: &DMatrix<f64>,
    e: &DMatrix<f64>,
    pi_hat: &DVector<f64>,
    options: AOptions,
) -> Result<AEstimate> {
    let m = e.nrows();
    let n = e.ncols();
    if nu_hat.nrows() != m || nu_hat.ncols() != m || pi_hat.len() != n {
        return Err(Error::Dimension(format!(
            "pair moments {}x{}, emission operator {m}x{n}, pi_hat length {}",
            nu_hat.nrows(),
            nu_hat.ncols(),
            pi_hat.len()
        )));
    }
    let floored = pi_hat.map(|p| p.max(PI_FLOOR));
    let c = build_c(&floored, e);
    let sigma1_c = linalg::sigma_min(&c);
    let target = linalg::vec_col_major(nu_hat);
    let w = inverse_weights(target.iter().copied(), options.objective);
    let (mq, h) = weighted_normal_form(&c, &w, &target);
    let (eq, rhs) = a_constraints(pi_hat, options.stationarity_constraint);
    let sol = qp::solve(&SimplexQp::new(mq, h, eq, rhs)?)?;
    let mut a = linalg::unvec_col_major(&sol.x, n, n);
    for mut col in a.column_iter_mut() {
        col.iter_mut().for_each(|v| *v = v.max(0.0));
        let s = col.sum();
        col /= s;
    }
    Ok(AEstimate {
        a_hat: TransitionMatrix::new(a)?,
        objective: options.objective,
        stationarity_constraint: options.stationarity_constraint,
        solver: SolverStats::from(&sol),
        sigma1_c,
    })
}

pub fn estimate_a_discrete(
    moments: &DiscreteMoments,
    outputs: &DiscreteOutputModel,
    pi_hat: &DVector<f64>,
    options: AOptions,
) -> Result<AEstimate> {
    estimate_a(&moments.sigma, outputs.b(), pi_hat, options)
}

/// Gaussian outputs: `eta_hat` through `f`, or `eta'_hat` through `k` when `options.eta_prime`.
pub fn estimate_a_continuous(
    moments: &ContinuousMoments,
    f: &DMatrix<f64>,
    k: &DMatrix<f64>,
    pi_hat: &DVector<f64>,
    options: AOptions,
) -> Result<AEstimate> {
    if options.eta_prime {
        let etap = moments.eta_prime.as_ref().ok_or_else(|| {
            Error::Dimension("eta' requested but not present in the moments".into())
        })?;
        estimate_a(etap, k, pi_hat, options)
    } else {
        let ratio = linalg::inverse_condition(f);
        if ratio <= RANK_TOL {
            return Err(Error::RankDeficientF(ratio));
        }
        estimate_a(&moments.eta, f, pi_hat, options)
    }
}

// ------------------------------------------------------------------ pipeline

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineOptions {
    pub pi_objective: Objective,
    pub a: AOptions,
}

impl PipelineOptions {
    pub fn unweighted() -> Self {
        Self {
            pi_objective: Objective::Unweighted,
            a: AOptions::unweighted(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub moments_ms: f64,
    pub pi_ms: f64,
    pub effective_ms: f64,
    pub a_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiagnostics {
    pub pi_method: PiMethod,
    pub pi_solver: Option<SolverStats>,
    /// `sigma_1` of the scaled emission/kernel matrix used for `pi`.
    pub sigma1_pi: f64,
    pub sigma1_k: Option<f64>,
    pub sigma1_f: Option<f64>,
    pub sigma1_c: f64,
    pub a_solver: SolverStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub pi_l2: f64,
    pub pi_sq: f64,
    pub a_frobenius: f64,
    pub a_frobenius_sq: f64,
}

/// Output of [`full_pipeline`]; serialises with `"schema": "report-v1"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub schema: String,
    pub n: usize,
    pub output_type: String,
    #[serde(rename = "T")]
    pub samples: Option<u64>,
    pub options: PipelineOptions,
    pub pi_hat: Vec<f64>,
    #[serde(rename = "A_hat")]
    pub a_hat: Vec<Vec<f64>>,
    pub diagnostics: ReportDiagnostics,
    pub timings: StageTimings,
    /// `alignment[i]` is the estimated state matched to true state `i`.
    pub alignment: Option<Vec<usize>>,
    pub errors: Option<ErrorMetrics>,
}

pub const REPORT_SCHEMA: &str = "report-v1";

/// `out[(i, j)] = m[(p[i], p[j])]`.
pub fn align_square(m: &DMatrix<f64>, p: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(p[i], p[j])])
}

pub fn align_vector(v: &DVector<f64>, p: &[usize]) -> DVector<f64> {
    DVector::from_iterator(v.len(), p.iter().map(|&k| v[k]))
}

/// Errors of `(pi_hat, a_hat)` against `truth` after mapping estimated state `p[i]` onto true state `i`.
pub fn error_metrics(
    pi_hat: &DVector<f64>,
    a_hat: &DMatrix<f64>,
    truth: &TransitionMatrix,
    alignment: &[usize],
) -> Result<ErrorMetrics> {
    let pi = stationary_distribution(truth)?;
    let dpi = align_vector(pi_hat, alignment) - pi;
    let da = align_square(a_hat, alignment) - truth.matrix();
    Ok(ErrorMetrics {
        pi_l2: dpi.norm(),
        pi_sq: dpi.norm_squared(),
        a_frobenius: da.norm(),
        a_frobenius_sq: da.norm_squared(),
    })
}

impl EstimationReport {
    pub fn pi_hat(&self) -> DVector<f64> {
        DVector::from_vec(self.pi_hat.clone())
    }

    pub fn a_hat(&self) -> TransitionMatrix {
        TransitionMatrix::from_rows(&self.a_hat).expect("report holds a stochastic matrix")
    }

    /// Fills `alignment` and `errors` against a known transition matrix.
    pub fn attach_truth(&mut self, truth: &TransitionMatrix, alignment: Vec<usize>) -> Result<()> {
        let m = error_metrics(&self.pi_hat(), self.a_hat().matrix(), truth, &alignment)?;
        self.errors = Some(m);
        self.alignment = Some(alignment);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail")
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Moments -> `pi_hat` -> (`F` for Gaussian outputs) -> `A_hat`, timing each stage.
///
/// Gaussian observations are read twice: once for `xi_hat`, then again for the
/// pair moments, which depend on `pi_hat`.
pub fn full_pipeline(
    y: &Observations,
    outputs_hat: &OutputModel,
    options: PipelineOptions,
) -> Result<EstimationReport> {
    let start = Instant::now();
    let mut timings = StageTimings::default();
    let report = match (y, outputs_hat) {
        (Observations::Discrete(seq), OutputModel::Discrete(b)) => {
            let t0 = Instant::now();
            let mut acc = DiscreteAccumulator::new(b.m());
            for &s in seq {
                acc.push(s)?;
            }
            let mom = acc.finish()?;
            timings.moments_ms = ms(t0);
            let t1 = Instant::now();
            let pi = estimate_pi_discrete(&mom, b, options.pi_objective)?;
            timings.pi_ms = ms(t1);
            let t2 = Instant::now();
            let a = estimate_a_discrete(&mom, b, &pi.pi_hat, options.a)?;
            timings.a_ms = ms(t2);
            build_report("discrete", mom.samples, options, pi, a, None, None)
        }
        (Observations::Continuous(seq), OutputModel::Gaussian(g)) => {
            let t0 = Instant::now();
            let mut xi_acc = XiAccumulator::new(g);
            seq.iter().for_each(|&v| xi_acc.push(v));
            let xi = xi_acc.finish()?;
            timings.moments_ms = ms(t0);
            let t1 = Instant::now();
            let k = gaussian_k(g);
            let pi = estimate_pi_continuous(&xi, &k, options.pi_objective)?;
            timings.pi_ms = ms(t1);
            let t2 = Instant::now();
            let f = if options.a.eta_prime {
                None
            } else {
                Some(compute_f(g, &pi.pi_hat)?)
            };
            timings.effective_ms = ms(t2);
            let t3 = Instant::now();
            let mom = if options.a.eta_prime {
                let mut acc = EtaPrimeAccumulator::new(g);
                seq.iter().for_each(|&v| acc.push(v));
                ContinuousMoments {
                    xi: xi.clone(),
                    eta: DMatrix::zeros(g.n(), g.n()),
                    eta_prime: Some(acc.finish()?),
                    samples: Some(seq.len() as u64),
                }
            } else {
                let mut acc = EtaAccumulator::new(g, &pi.pi_hat);
                seq.iter().for_each(|&v| acc.push(v));
                ContinuousMoments {
                    xi: xi.clone(),
                    eta: acc.finish()?,
                    eta_prime: None,
                    samples: Some(seq.len() as u64),
                }
            };
            timings.moments_ms += ms(t3);
            let t4 = Instant::now();
            let f_or_empty = f.clone().unwrap_or_else(|| DMatrix::zeros(0, 0));
            let a = estimate_a_continuous(&mom, &f_or_empty, &k, &pi.pi_hat, options.a)?;
            timings.a_ms = ms(t4);
            let sigma1_k = Some(linalg::sigma_min(&k));
            let sigma1_f = f.as_ref().map(linalg::sigma_min);
            build_report("gaussian", mom.samples, options, pi, a, sigma1_k, sigma1_f)
        }
        _ => {
            return Err(Error::Dimension(
                "observation type does not match the output model".into(),
            ))
        }
    };
    let mut report = report;
    timings.total_ms = ms(start);
    report.timings = timings;
    Ok(report)
}

/// Runs the estimators on the exact population moments of `spec`.
pub fn population_pipeline(spec: &HmmSpec, options: PipelineOptions) -> Result<EstimationReport> {
    let pi_true = stationary_distribution(&spec.a)?;
    let report = match &spec.outputs {
        OutputModel::Discrete(b) => {
            let mom = moments::analytic_discrete(&spec.a, b)?;
            let pi = estimate_pi_discrete(&mom, b, options.pi_objective)?;
            let a = estimate_a_discrete(&mom, b, &pi.pi_hat, options.a)?;
            build_report("discrete", None, options, pi, a, None, None)
        }
        OutputModel::Gaussian(g) => {
            let k = gaussian_k(g);
            let xi = &k * &pi_true;
            let pi = estimate_pi_continuous(&xi, &k, options.pi_objective)?;
            let f_true = compute_f(g, &pi_true)?;
            let mom = ContinuousMoments {
                xi,
                eta: moments::pair_moment(&f_true, spec.a.matrix(), &pi_true),
                eta_prime: Some(moments::pair_moment(&k, spec.a.matrix(), &pi_true)),
                samples: None,
            };
            let f = compute_f(g, &pi.pi_hat)?;
            let a = estimate_a_continuous(&mom, &f, &k, &pi.pi_hat, options.a)?;
            let sigma1_k = Some(linalg::sigma_min(&k));
            let sigma1_f = Some(linalg::sigma_min(&f));
            build_report("gaussian", None, options, pi, a, sigma1_k, sigma1_f)
        }
    };
    Ok(report)
}

fn build_report(
    output_type: &str,
    samples: Option<u64>,
    options: PipelineOptions,
    pi: PiEstimate,
    a: AEstimate,
    sigma1_k: Option<f64>,
    sigma1_f: Option<f64>,
) -> EstimationReport {
    EstimationReport {
        schema: REPORT_SCHEMA.to_string(),
        n: pi.pi_hat.len(),
        output_type: output_type.to_string(),
        samples,
        options,
        pi_hat: pi.pi_hat.iter().copied().collect(),
        a_hat: a.a_hat.to_rows(),
        diagnostics: ReportDiagnostics {
            pi_method: pi.method,
            pi_solver: pi.solver,
            sigma1_pi: pi.sigma1,
            sigma1_k,
            sigma1_f,
            sigma1_c: a.sigma1_c,
            a_solver: a.solver,
        },
        timings: StageTimings::default(),
        alignment: None,
        errors: None,
    }
}

/// Moves `(mu_i, sigma2_i)` jointly by `epsilon` along a seeded uniformly random unit direction.
///
/// Variances are floored at `1e-12` so the result stays a valid model.
pub fn perturb_outputs(
    outputs: &GaussianOutputModel,
    epsilon: f64,
    seed: u64,
) -> Result<GaussianOutputModel> {
    if epsilon == 0.0 {
        return Ok(outputs.clone());
    }
    let n = outputs.n();
    let mut rng = seeded_rng(seed);
    let dir: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    let comps = outputs
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            GaussianComponent::new(
                c.mu + epsilon * dir[2 * i] / norm,
                (c.sigma2 + epsilon * dir[2 * i + 1] / norm).max(1e-12),
            )
        })
        .collect();
    GaussianOutputModel::new(comps)
}
