//! EM for univariate Gaussian mixtures, applied to the (dependent) output sequence.
//!
//! Restarts follow a short-run/long-run schedule: every restart is iterated
//! `short_iters` times on an evenly strided subsample of at most
//! `short_sample` points, and only the best candidate is then run to
//! convergence on the full sequence. The first restart seeds the means at
//! evenly spread quantiles, later ones use k-means++ seeding. Runs are
//! accelerated by squared extrapolation (SQUAREM), accepted only when it
//! raises the likelihood, so the trace stays monotone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{seeded_rng, GaussianComponent, GaussianOutputModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    pub max_iters: usize,
    /// Stop once the mean per-sample log-likelihood gain drops below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub short_iters: usize,
    /// Convergence tolerance of the short runs.
    pub short_tol: f64,
    pub short_sample: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            restarts: 10,
            seed: 0,
            short_iters: 50,
            short_tol: 1e-5,
            short_sample: 10_000,
        }
    }
}

/// Fitted stationary mixture.
///
/// Serialises as a Gaussian outputs file with extra fields, so it can be
/// passed wherever an output model is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    #[serde(rename = "type")]
    pub kind: String,
    pub components: Vec<GaussianComponent>,
    pub weights: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Total log-likelihood of each accepted iterate of the final run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loglik_trace: Vec<f64>,
}

impl MixtureFit {
    pub fn outputs(&self) -> Result<GaussianOutputModel> {
        GaussianOutputModel::new(self.components.clone())
    }
}

#[derive(Debug, Clone)]
struct Params {
    w: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

struct Run {
    params: Params,
    loglik: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// Responsibility-weighted sums, centred at the current means.
struct Stats {
    n: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

fn e_step(y: &[f64], p: &Params, logp: &mut [f64]) -> (Stats, f64) {
    let k = p.w.len();
    let consts: Vec<f64> = (0..k)
        .map(|i| p.w[i].ln() - 0.5 * (2.0 * std::f64::consts::PI * p.var[i]).ln())
        .collect();
    let inv: Vec<f64> = p.var.iter().map(|v| -0.5 / v).collect();
    let mut st = Stats {
        n: vec![0.0; k],
        s1: vec![0.0; k],
        s2: vec![0.0; k],
    };
    let mut ll = 0.0;
    // Product of per-sample normalisers, folded into `ll` before it can
    // leave the normal range; saves one logarithm per sample.
    let mut prod = 1.0;
    for &v in y {
        let mut top = f64::NEG_INFINITY;
        let mut arg = 0;
        for i in 0..k {
            let d = v - p.mu[i];
            logp[i] = consts[i] + inv[i] * d * d;
            if logp[i] > top {
                top = logp[i];
                arg = i;
            }
        }
        let mut z = 0.0;
        for (i, l) in logp.iter_mut().enumerate() {
            *l = if i == arg { 1.0 } else { (*l - top).exp() };
            z += *l;
        }
        ll += top;
        prod *= z;
        if prod > 1e280 {
            ll += prod.ln();
            prod = 1.0;
        }
        let rz = 1.0 / z;
        for i in 0..k {
            let r = logp[i] * rz;
            let d = v - p.mu[i];
            st.n[i] += r;
            st.s1[i] += r * d;
            st.s2[i] += r * d * d;
        }
    }
    ll += prod.ln();
    (st, ll)
}

/// Closed-form update; `None` if a component collapses or empties.
fn m_step(st: &Stats, p: &Params, t: f64, floor: f64) -> Option<Params> {
    let k = p.w.len();
    let mut next = Params {
        w: vec![0.0; k],
        mu: vec![0.0; k],
        var: vec![0.0; k],
    };
    for i in 0..k {
        if !(st.n[i] > 0.0) {
            return None;
        }
        let shift = st.s1[i] / st.n[i];
        let var = st.s2[i] / st.n[i] - shift * shift;
        if !(var > floor) {
            return None;
        }
        next.w[i] = st.n[i] / t;
        next.mu[i] = p.mu[i] + shift;
        next.var[i] = var;
    }
    Some(next)
}

fn run_em(y: &[f64], init: Params, max_iters: usize, tol: f64, floor: f64) -> Option<Run> {
    let t = y.len() as f64;
    let mut logp = vec![0.0; init.w.len()];
    let mut eval = |p: &Params| e_step(y, p, &mut logp);
    let done = |params: Params, trace: Vec<f64>, iterations: usize| {
        Some(Run {
            loglik: *trace.last().expect("at least one E-step"),
            params,
            iterations,
            trace,
        })
    };
    let mut p0 = init;
    let (mut st0, ll0) = eval(&p0);
    if !ll0.is_finite() {
        return None;
    }
    let mut trace = vec![ll0];
    let mut iterations = 0;
    // Each cycle takes two EM steps, then tries a squared extrapolation
    // through them and keeps it only if it beats the second step.
    loop {
        if iterations + 2 > max_iters {
            while iterations < max_iters {
                p0 = m_step(&st0, &p0, t, floor)?;
                let (st, ll) = eval(&p0);
                iterations += 1;
                trace.push(ll);
                st0 = st;
            }
            return done(p0, trace, iterations);
        }
        let prev = *trace.last().expect("nonempty");
        let p1 = m_step(&st0, &p0, t, floor)?;
        let (st1, ll1) = eval(&p1);
        let p2 = m_step(&st1, &p1, t, floor)?;
        let (st2, ll2) = eval(&p2);
        if !ll1.is_finite() || !ll2.is_finite() {
            return None;
        }
        debug_assert!(ll1 >= prev - 1e-10 * t && ll2 >= ll1 - 1e-10 * t);
        trace.extend([ll1, ll2]);
        iterations += 2;
        let mut next = (p2, st2, ll2);
        if let Some(px) = extrapolate(&p0, &p1, &next.0, floor) {
            let (stx, llx) = eval(&px);
            if llx.is_finite() && llx > ll2 {
                trace.push(llx);
                next = (px, stx, llx);
            }
        }
        let gain = next.2 - prev;
        (p0, st0) = (next.0, next.1);
        if gain / t < tol || iterations >= max_iters {
            return done(p0, trace, iterations);
        }
    }
}

/// Squared-extrapolation point from three successive EM iterates, in
/// `(w, mu, ln var)` coordinates; `None` if it leaves the parameter space.
fn extrapolate(p0: &Params, p1: &Params, p2: &Params, floor: f64) -> Option<Params> {
    let flat = |p: &Params| -> Vec<f64> {
        p.w.iter()
            .chain(&p.mu)
            .copied()
            .chain(p.var.iter().map(|v| v.ln()))
            .collect()
    };
    let (x0, x1, x2) = (flat(p0), flat(p1), flat(p2));
    let r: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = x2
        .iter()
        .zip(&x1)
        .zip(&r)
        .map(|((a, b), r)| a - b - r)
        .collect();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(nv > 0.0) {
        return None;
    }
    let alpha = (-r.iter().map(|x| x * x).sum::<f64>().sqrt() / nv).min(-1.0);
    let x: Vec<f64> = (0..x0.len())
        .map(|i| x0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i])
        .collect();
    let k = p0.w.len();
    let total: f64 = x[..k].iter().sum();
    if x[..k].iter().any(|w| !(*w > 0.0)) || !total.is_finite() {
        return None;
    }
    let var: Vec<f64> = x[2 * k..].iter().map(|l| l.exp()).collect();
    if var.iter().any(|v| !(*v > floor) || !v.is_finite()) {
        return None;
    }
    Some(Params {
        w: x[..k].iter().map(|w| w / total).collect(),
        mu: x[k..2 * k].to_vec(),
        var,
    })
}

fn mean_var(y: &[f64]) -> (f64, f64) {
    let t = y.len() as f64;
    let mean = y.iter().sum::<f64>() / t;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
    (mean, var)
}

fn quantile_init(sorted: &[f64], k: usize, var: f64) -> Params {
    let t = sorted.len();
    let mu = (0..k)
        .map(|i| {
            let q = (i as f64 + 0.5) / k as f64;
            sorted[((q * t as f64) as usize).min(t - 1)]
        })
        .collect();
    Params {
        w: vec![1.0 / k as f64; k],
        mu,
        var: vec![var / k as f64; k],
    }
}

fn kmeanspp_init<R: Rng>(y: &[f64], k: usize, var: f64, rng: &mut R) -> Params {
    let mut mu = vec![y[rng.random_range(0..y.len())]];
    let mut d2: Vec<f64> = y.iter().map(|v| (v - mu[0]).powi(2)).collect();
    while mu.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = y.len() - 1;
            for (idx, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = idx;
                    break;
                }
                u -= d;
            }
            y[pick]
        } else {
            y[rng.random_range(0..y.len())]
        };
        for (d, v) in d2.iter_mut().zip(y) {
            *d = d.min((v - next).powi(2));
        }
        mu.push(next);
    }
    Params {
        w: vec![1.0 / k as f64; k],
        mu,
        var: vec![var / k as f64; k],
    }
}

/// Fits an `n`-component Gaussian mixture by EM with restarts.
///
/// Fails with `DegenerateComponent` only if every candidate collapses a
/// variance onto `1e-6 var(y)` or empties a component.
pub fn em_fit(y: &[f64], n: usize, config: &MixtureConfig) -> Result<MixtureFit> {
    if n == 0 {
        return Err(Error::InvalidModel("mixture needs at least one component".into()));
    }
    if y.len() < 10 * n {
        return Err(Error::SequenceTooShort {
            len: y.len(),
            needed: 10 * n,
        });
    }
    let (_, var) = mean_var(y);
    let floor = 1e-6 * var;
    let stride = y.len().div_ceil(config.short_sample.max(1)).max(1);
    let sub: Vec<f64> = y.iter().step_by(stride).copied().collect();
    let mut sorted = sub.clone();
    sorted.sort_by(f64::total_cmp);
    let sub_var = mean_var(&sub).1;

    let mut rng = seeded_rng(config.seed);
    let restarts = config.restarts.max(1);
    let mut candidates: Vec<(f64, usize, Params)> = Vec::new();
    for r in 0..restarts {
        let init = if r == 0 {
            quantile_init(&sorted, n, sub_var)
        } else {
            kmeanspp_init(&sub, n, sub_var, &mut rng)
        };
        if let Some(run) = run_em(&sub, init, config.short_iters, config.short_tol, floor) {
            candidates.push((run.loglik, r, run.params));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, _, init) in candidates {
        if let Some(run) = run_em(y, init, config.max_iters, config.tol, floor) {
            return Ok(finish(run, restarts));
        }
    }
    Err(Error::DegenerateComponent)
}

fn finish(run: Run, restarts: usize) -> MixtureFit {
    MixtureFit {
        kind: "gaussian".into(),
        components: run
            .params
            .mu
            .iter()
            .zip(&run.params.var)
            .map(|(&m, &v)| GaussianComponent::new(m, v))
            .collect(),
        weights: run.params.w,
        loglik: run.loglik,
        iterations: run.iterations,
        restarts_used: restarts,
        loglik_trace: run.trace,
    }
}

/// Permutation `p` minimising `sum_i |mu_hat[p[i]] - mu[i]| + |s2_hat[p[i]] - s2[i]|`.
///
/// `p[i]` is the estimated component matched to true component `i`; ties go to
/// the lexicographically smallest permutation.
pub fn align_components(estimated: &[GaussianComponent], truth: &[GaussianComponent]) -> Vec<usize> {
    assert_eq!(estimated.len(), truth.len(), "component counts differ");
    best_permutation(truth.len(), |i, j| {
        (estimated[j].mu - truth[i].mu).abs() + (estimated[j].sigma2 - truth[i].sigma2).abs()
    })
}

/// Brute-force assignment minimising `sum_i cost(i, p[i])` over permutations of `0..n`.
///
/// Ties go to the lexicographically smallest permutation.
pub fn best_permutation(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    assert!(n <= 10, "brute-force alignment is limited to 10 components");
    let total = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum() };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    while next_permutation(&mut perm) {
        let c = total(&perm);
        if c < best_cost {
            best_cost = c;
            best.clone_from(&perm);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn normal_draws(params: &[(f64, f64)], t: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..t)
            .map(|i| {
                let (m, v) = params[i % params.len()];
                m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let y = normal_draws(&[(3.0, 2.0)], 5_000, 1);
        let fit = em_fit(&y, 1, &MixtureConfig::default()).unwrap();
        let (m, v) = mean_var(&y);
        assert!((fit.components[0].mu - m).abs() < 1e-12);
        assert!((fit.components[0].sigma2 - v).abs() < 1e-10 * v);
        assert_eq!(fit.weights, vec![1.0]);
    }

    #[test]
    fn well_separated_pair() {
        let y = normal_draws(&[(-10.0, 1.0), (10.0, 1.0)], 10_000, 2);
        let fit = em_fit(&y, 2, &MixtureConfig::default()).unwrap();
        let truth = [GaussianComponent::new(-10.0, 1.0), GaussianComponent::new(10.0, 1.0)];
        let p = align_components(&fit.components, &truth);
        for i in 0..2 {
            assert!((fit.components[p[i]].mu - truth[i].mu).abs() < 0.05);
            assert!((fit.components[p[i]].sigma2 - truth[i].sigma2).abs() < 0.05);
            assert!((fit.weights[p[i]] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn trace_is_nondecreasing_and_weights_normalised() {
        let y = normal_draws(&[(-4.0, 4.0), (0.0, 1.0), (2.0, 36.0), (4.0, 1.0)], 20_000, 3);
        let fit = em_fit(&y, 4, &MixtureConfig::default()).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert_eq!(fit.loglik, *fit.loglik_trace.last().unwrap());
        let again = em_fit(&y, 4, &MixtureConfig::default()).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(
            em_fit(&[0.0; 15], 2, &MixtureConfig::default()),
            Err(Error::SequenceTooShort { len: 15, needed: 20 })
        ));
    }

    #[test]
    fn constant_data_is_degenerate() {
        let y = vec![1.0; 100];
        assert!(matches!(
            em_fit(&y, 3, &MixtureConfig::default()),
            Err(Error::DegenerateComponent)
        ));
    }

    #[test]
    fn alignment_identity_and_swap() {
        let truth = [
            GaussianComponent::new(-4.0, 4.0),
            GaussianComponent::new(0.0, 1.0),
            GaussianComponent::new(2.0, 36.0),
        ];
        assert_eq!(align_components(&truth, &truth), vec![0, 1, 2]);
        let swapped = [truth[1], truth[0], truth[2]];
        assert_eq!(align_components(&swapped, &truth), vec![1, 0, 2]);
        let cycled = [truth[2], truth[0], truth[1]];
        let p = align_components(&cycled, &truth);
        for i in 0..3 {
            assert_eq!(cycled[p[i]], truth[i]);
        }
    }

    #[test]
    fn alignment_ties_pick_first_permutation() {
        let c = GaussianComponent::new(0.0, 1.0);
        assert_eq!(align_components(&[c, c], &[c, c]), vec![0, 1]);
    }

    #[test]
    fn fit_reads_back_as_outputs() {
        let y = normal_draws(&[(-10.0, 1.0), (10.0, 1.0)], 1_000, 4);
        let fit = em_fit(&y, 2, &MixtureConfig::default()).unwrap();
        let text = serde_json::to_string(&fit).unwrap();
        let outputs: crate::model::OutputModel = serde_json::from_str(&text).unwrap();
        assert_eq!(outputs.n(), 2);
        let back: MixtureFit = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fit);
    }
}
