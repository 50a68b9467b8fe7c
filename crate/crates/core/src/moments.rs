//! Singleton and consecutive-pair moments of an observation sequence.
//!
//! Discrete outputs use symbol frequencies `rho` and pair frequencies `sigma`.
//! Gaussian outputs are mapped through the likelihood vector
//! `phi(y) = (f_1(y), .., f_n(y))`, giving `xi = E[phi(Y)]`, the posterior-pair
//! moment `eta` and the density-pair moment `eta'`. Population counterparts
//! follow from the kernel matrix `K_ij = int f_i f_j` and the effective
//! observation matrix `F_kj = E[P(k | Y) | X = j]`:
//!
//! ```text
//! rho = B pi          sigma_kk' = sum_ij pi_j A_ij B_kj B_k'i
//! xi  = K pi          eta_kk'   = sum_ij pi_j A_ij F_kj F_k'i
//!                     eta'_kk'  = sum_ij pi_j A_ij K_kj K_k'i
//! ```
//!
//! Every empirical estimator is a streaming accumulator: feed observations one
//! at a time, or accumulate disjoint chunks and [`merge`](DiscreteAccumulator::merge)
//! them in order. The pair straddling a chunk boundary is credited to the chunk
//! holding its second element, so merged results equal a single pass exactly.
//!
//! `eta'` has no closed-form empirical estimator in the literature; we use the
//! pair average `1/(T-1) sum_t f_k(y_{t-1}) f_k'(y_t)`, the plug-in for
//! `E[f_k(Y) f_k'(Y')]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    stationary_distribution, DiscreteOutputModel, GaussianOutputModel, HmmSpec, OutputModel,
    TransitionMatrix,
};
use crate::quadrature::{self, QUAD_TOL};
use crate::serde_rows;

/// Floor applied to stationary weights inside posterior computations.
pub const PI_FLOOR: f64 = 1e-12;

/// Empirical (or population) symbol and pair frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMoments {
    #[serde(with = "serde_rows::vector")]
    pub rho: DVector<f64>,
    #[serde(with = "serde_rows::matrix")]
    pub sigma: DMatrix<f64>,
    /// Sequence length; `None` for population moments.
    #[serde(rename = "T")]
    pub samples: Option<u64>,
}

/// Empirical (or population) likelihood moments of a Gaussian-output sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousMoments {
    #[serde(with = "serde_rows::vector")]
    pub xi: DVector<f64>,
    #[serde(with = "serde_rows::matrix")]
    pub eta: DMatrix<f64>,
    #[serde(
        with = "serde_rows::opt_matrix",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub eta_prime: Option<DMatrix<f64>>,
    #[serde(rename = "T")]
    pub samples: Option<u64>,
}

/// `K` and, once a stationary estimate is available, `F`, with their smallest singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMatrices {
    pub k: DMatrix<f64>,
    pub f: Option<DMatrix<f64>>,
    pub sigma1_k: f64,
    pub sigma1_f: Option<f64>,
}

impl EffectiveMatrices {
    pub fn gaussian(outputs: &GaussianOutputModel, pi: Option<&DVector<f64>>) -> Result<Self> {
        let k = gaussian_k(outputs);
        let sigma1_k = linalg::sigma_min(&k);
        let f = pi.map(|p| compute_f(outputs, p)).transpose()?;
        let sigma1_f = f.as_ref().map(linalg::sigma_min);
        Ok(Self {
            k,
            f,
            sigma1_k,
            sigma1_f,
        })
    }
}

// ---------------------------------------------------------------- discrete

/// Streaming symbol/pair counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAccumulator {
    m: usize,
    counts: Vec<u64>,
    pairs: Vec<u64>,
    first: Option<usize>,
    last: Option<usize>,
    len: u64,
}

impl DiscreteAccumulator {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            counts: vec![0; m],
            pairs: vec![0; m * m],
            first: None,
            last: None,
            len: 0,
        }
    }

    pub fn push(&mut self, symbol: usize) -> Result<()> {
        if symbol >= self.m {
            return Err(Error::SymbolOutOfRange {
                symbol,
                position: self.len as usize,
                alphabet: self.m,
            });
        }
        self.counts[symbol] += 1;
        if let Some(prev) = self.last {
            self.pairs[prev * self.m + symbol] += 1;
        } else {
            self.first = Some(symbol);
        }
        self.last = Some(symbol);
        self.len += 1;
        Ok(())
    }

    /// Appends a chunk that immediately follows `self` in the sequence.
    pub fn merge(&mut self, next: &DiscreteAccumulator) {
        assert_eq!(self.m, next.m, "alphabet mismatch");
        for (c, n) in self.counts.iter_mut().zip(&next.counts) {
            *c += n;
        }
        for (c, n) in self.pairs.iter_mut().zip(&next.pairs) {
            *c += n;
        }
        if let (Some(l), Some(f)) = (self.last, next.first) {
            self.pairs[l * self.m + f] += 1;
        }
        if self.first.is_none() {
            self.first = next.first;
        }
        if next.last.is_some() {
            self.last = next.last;
        }
        self.len += next.len;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(&self) -> Result<DiscreteMoments> {
        if self.len < 2 {
            return Err(Error::SequenceTooShort {
                len: self.len as usize,
                needed: 2,
            });
        }
        let t = self.len as f64;
        let rho = DVector::from_iterator(self.m, self.counts.iter().map(|&c| c as f64 / t));
        let sigma = DMatrix::from_fn(self.m, self.m, |k, kp| {
            self.pairs[k * self.m + kp] as f64 / (t - 1.0)
        });
        Ok(DiscreteMoments {
            rho,
            sigma,
            samples: Some(self.len),
        })
    }
}

/// Single-pass `rho_hat` and `sigma_hat` over symbols in `[0, m)`.
pub fn empirical_rho_sigma<I>(y: I, m: usize) -> Result<DiscreteMoments>
where
    I: IntoIterator<Item = usize>,
{
    let mut acc = DiscreteAccumulator::new(m);
    for s in y {
        acc.push(s)?;
    }
    acc.finish()
}

// -------------------------------------------------------------- continuous

/// Posterior `P(k | y)` under stationary weights `pi`, evaluated in log space.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    outputs: &'a GaussianOutputModel,
    log_pi: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(outputs: &'a GaussianOutputModel, pi: &DVector<f64>) -> Self {
        assert_eq!(outputs.n(), pi.len(), "posterior weights have wrong length");
        Self {
            outputs,
            log_pi: pi.iter().map(|&p| p.max(PI_FLOOR).ln()).collect(),
        }
    }

    pub fn eval_into(&self, y: f64, out: &mut [f64]) {
        let mut top = f64::NEG_INFINITY;
        for ((o, c), lp) in out.iter_mut().zip(self.outputs.components()).zip(&self.log_pi) {
            *o = lp + c.log_density(y);
            top = top.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - top).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// Streaming `xi_hat_k = 1/T sum_t f_k(y_t)`.
#[derive(Debug, Clone)]
pub struct XiAccumulator<'a> {
    outputs: &'a GaussianOutputModel,
    sums: Vec<f64>,
    scratch: Vec<f64>,
    len: u64,
}

impl<'a> XiAccumulator<'a> {
    pub fn new(outputs: &'a GaussianOutputModel) -> Self {
        let n = outputs.n();
        Self {
            outputs,
            sums: vec![0.0; n],
            scratch: vec![0.0; n],
            len: 0,
        }
    }

    pub fn push(&mut self, y: f64) {
        self.outputs.densities_into(y, &mut self.scratch);
        for (s, v) in self.sums.iter_mut().zip(&self.scratch) {
            *s += v;
        }
        self.len += 1;
    }

    pub fn merge(&mut self, next: &XiAccumulator<'_>) {
        for (s, v) in self.sums.iter_mut().zip(&next.sums) {
            *s += v;
        }
        self.len += next.len;
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(&self) -> Result<DVector<f64>> {
        if self.len == 0 {
            return Err(Error::SequenceTooShort { len: 0, needed: 1 });
        }
        let t = self.len as f64;
        Ok(DVector::from_iterator(
            self.sums.len(),
            self.sums.iter().map(|s| s / t),
        ))
    }
}

/// Streaming average of outer products of consecutive feature vectors.
#[derive(Debug, Clone, PartialEq)]
struct PairAverager {
    n: usize,
    sums: DMatrix<f64>,
    first: Option<Vec<f64>>,
    last: Option<Vec<f64>>,
    len: u64,
}

impl PairAverager {
    fn new(n: usize) -> Self {
        Self {
            n,
            sums: DMatrix::zeros(n, n),
            first: None,
            last: None,
            len: 0,
        }
    }

    fn add_outer(sums: &mut DMatrix<f64>, prev: &[f64], cur: &[f64]) {
        for (kp, c) in cur.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (k, p) in prev.iter().enumerate() {
                sums[(k, kp)] += p * c;
            }
        }
    }

    /// `feature` is consumed as the new "last" vector.
    fn push(&mut self, feature: Vec<f64>) {
        match self.last.as_mut() {
            Some(prev) => {
                Self::add_outer(&mut self.sums, prev, &feature);
                *prev = feature;
            }
            None => {
                self.first = Some(feature.clone());
                self.last = Some(feature);
            }
        }
        self.len += 1;
    }

    fn merge(&mut self, next: &PairAverager) {
        assert_eq!(self.n, next.n);
        self.sums += &next.sums;
        if let (Some(l), Some(f)) = (&self.last, &next.first) {
            Self::add_outer(&mut self.sums, l, f);
        }
        if self.first.is_none() {
            self.first = next.first.clone();
        }
        if next.last.is_some() {
            self.last = next.last.clone();
        }
        self.len += next.len;
    }

    fn finish(&self) -> Result<DMatrix<f64>> {
        if self.len < 2 {
            return Err(Error::SequenceTooShort {
                len: self.len as usize,
                needed: 2,
            });
        }
        Ok(&self.sums / (self.len - 1) as f64)
    }
}

/// Streaming `eta_hat_kk' = 1/(T-1) sum_t P(k | y_{t-1}) P(k' | y_t)`.
#[derive(Debug, Clone)]
pub struct EtaAccumulator<'a> {
    posterior: Posterior<'a>,
    pairs: PairAverager,
}

impl<'a> EtaAccumulator<'a> {
    pub fn new(outputs: &'a GaussianOutputModel, pi_hat: &DVector<f64>) -> Self {
        Self {
            posterior: Posterior::new(outputs, pi_hat),
            pairs: PairAverager::new(outputs.n()),
        }
    }

    pub fn push(&mut self, y: f64) {
        let mut p = vec![0.0; self.pairs.n];
        self.posterior.eval_into(y, &mut p);
        self.pairs.push(p);
    }

    pub fn merge(&mut self, next: &EtaAccumulator<'_>) {
        self.pairs.merge(&next.pairs);
    }

    pub fn finish(&self) -> Result<DMatrix<f64>> {
        self.pairs.finish()
    }
}

/// Streaming `eta'_hat_kk' = 1/(T-1) sum_t f_k(y_{t-1}) f_k'(y_t)`.
#[derive(Debug, Clone)]
pub struct EtaPrimeAccumulator<'a> {
    outputs: &'a GaussianOutputModel,
    pairs: PairAverager,
}

impl<'a> EtaPrimeAccumulator<'a> {
    pub fn new(outputs: &'a GaussianOutputModel) -> Self {
        Self {
            outputs,
            pairs: PairAverager::new(outputs.n()),
        }
    }

    pub fn push(&mut self, y: f64) {
        let mut f = vec![0.0; self.pairs.n];
        self.outputs.densities_into(y, &mut f);
        self.pairs.push(f);
    }

    pub fn merge(&mut self, next: &EtaPrimeAccumulator<'_>) {
        self.pairs.merge(&next.pairs);
    }

    pub fn finish(&self) -> Result<DMatrix<f64>> {
        self.pairs.finish()
    }
}

pub fn empirical_xi<I>(y: I, outputs: &GaussianOutputModel) -> Result<DVector<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut acc = XiAccumulator::new(outputs);
    y.into_iter().for_each(|v| acc.push(v));
    acc.finish()
}

pub fn empirical_eta<I>(
    y: I,
    outputs: &GaussianOutputModel,
    pi_hat: &DVector<f64>,
) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut acc = EtaAccumulator::new(outputs, pi_hat);
    y.into_iter().for_each(|v| acc.push(v));
    acc.finish()
}

pub fn empirical_eta_prime<I>(y: I, outputs: &GaussianOutputModel) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut acc = EtaPrimeAccumulator::new(outputs);
    y.into_iter().for_each(|v| acc.push(v));
    acc.finish()
}

// --------------------------------------------------------- kernel matrices

/// Closed-form Gaussian overlap `K_ij = int f_i(y) f_j(y) dy`.
pub fn gaussian_k(outputs: &GaussianOutputModel) -> DMatrix<f64> {
    let c = outputs.components();
    let n = c.len();
    DMatrix::from_fn(n, n, |i, j| {
        let s = c[i].sigma2 + c[j].sigma2;
        let d = c[i].mu - c[j].mu;
        (-0.5 * d * d / s).exp() / (2.0 * PI * s).sqrt()
    })
}

/// Integration window `[min(mu - 12 sd), max(mu + 12 sd)]` and the panel width.
fn integration_window(outputs: &GaussianOutputModel) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut min_sd = f64::INFINITY;
    for c in outputs.components() {
        let sd = c.sigma2.sqrt();
        lo = lo.min(c.mu - 12.0 * sd);
        hi = hi.max(c.mu + 12.0 * sd);
        min_sd = min_sd.min(sd);
    }
    (lo, hi, 0.5 * min_sd)
}

/// `K` by adaptive quadrature of the defining integral.
pub fn quadrature_k(outputs: &GaussianOutputModel) -> Result<DMatrix<f64>> {
    let n = outputs.n();
    let (lo, hi, panel) = integration_window(outputs);
    let mut dens = vec![0.0; n];
    let flat = quadrature::integrate(
        |y, out| {
            outputs.densities_into(y, &mut dens);
            for j in 0..n {
                for i in 0..n {
                    out[i + j * n] = dens[i] * dens[j];
                }
            }
        },
        n * n,
        lo,
        hi,
        panel,
        QUAD_TOL,
    )?;
    Ok(DMatrix::from_column_slice(n, n, &flat))
}

/// Effective observation matrix `F_kj = int P(k | y) f_j(y) dy` under weights `pi`.
///
/// Weights below [`PI_FLOOR`] are clamped to it inside the posterior; entries
/// are clipped to `[0, 1]` to absorb quadrature rounding.
pub fn compute_f(outputs: &GaussianOutputModel, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = outputs.n();
    if pi.len() != n {
        return Err(Error::Dimension(format!(
            "pi has length {}, outputs have {n} components",
            pi.len()
        )));
    }
    if n == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0));
    }
    let posterior = Posterior::new(outputs, pi);
    let (lo, hi, panel) = integration_window(outputs);
    let mut post = vec![0.0; n];
    let mut dens = vec![0.0; n];
    let flat = quadrature::integrate(
        |y, out| {
            posterior.eval_into(y, &mut post);
            outputs.densities_into(y, &mut dens);
            for j in 0..n {
                for k in 0..n {
                    out[k + j * n] = post[k] * dens[j];
                }
            }
        },
        n * n,
        lo,
        hi,
        panel,
        QUAD_TOL,
    )?;
    Ok(DMatrix::from_iterator(n, n, flat.into_iter().map(|v| v.clamp(0.0, 1.0))))
}

// ------------------------------------------------------- population oracle

/// `out_kk' = sum_ij pi_j A_ij E_kj E_k'i`, i.e. `E diag(pi) A^T E^T`.
pub fn pair_moment(e: &DMatrix<f64>, a: &DMatrix<f64>, pi: &DVector<f64>) -> DMatrix<f64> {
    e * DMatrix::from_diagonal(pi) * a.transpose() * e.transpose()
}

/// Exact moments of a spec.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticMoments {
    Discrete(DiscreteMoments),
    /// `eta_prime` is always populated.
    Continuous(ContinuousMoments),
}

pub fn analytic_discrete(a: &TransitionMatrix, outputs: &DiscreteOutputModel) -> Result<DiscreteMoments> {
    let pi = stationary_distribution(a)?;
    Ok(DiscreteMoments {
        rho: outputs.b() * &pi,
        sigma: pair_moment(outputs.b(), a.matrix(), &pi),
        samples: None,
    })
}

pub fn analytic_continuous(
    a: &TransitionMatrix,
    outputs: &GaussianOutputModel,
) -> Result<ContinuousMoments> {
    let pi = stationary_distribution(a)?;
    let k = gaussian_k(outputs);
    let f = compute_f(outputs, &pi)?;
    Ok(ContinuousMoments {
        xi: &k * &pi,
        eta: pair_moment(&f, a.matrix(), &pi),
        eta_prime: Some(pair_moment(&k, a.matrix(), &pi)),
        samples: None,
    })
}

pub fn analytic_moments(spec: &HmmSpec) -> Result<AnalyticMoments> {
    match &spec.outputs {
        OutputModel::Discrete(d) => analytic_discrete(&spec.a, d).map(AnalyticMoments::Discrete),
        OutputModel::Gaussian(g) => {
            analytic_continuous(&spec.a, g).map(AnalyticMoments::Continuous)
        }
    }
}
