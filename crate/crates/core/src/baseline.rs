//! Baum-Welch with per-step scaled forward-backward recursions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    seeded_rng, DiscreteOutputModel, GaussianComponent, GaussianOutputModel, HmmSpec,
    Observations, OutputModel, TransitionMatrix,
};

/// Starting point for [`baum_welch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchInit {
    pub a0: TransitionMatrix,
    pub outputs0: OutputModel,
    /// Initial-state distribution; uniform when `None`.
    pub initial0: Option<DVector<f64>>,
    /// Hold the output model at `outputs0` and update only the chain.
    pub fix_outputs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchResult {
    pub a_hat: TransitionMatrix,
    pub outputs_hat: OutputModel,
    pub initial_hat: DVector<f64>,
    /// Log-likelihood of the parameters entering each iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Serialize)]
struct ResultFile<'a> {
    #[serde(flatten)]
    model: &'a HmmSpec,
    loglik_trace: &'a [f64],
    iterations: usize,
}

impl BaumWelchResult {
    pub fn spec(&self) -> HmmSpec {
        HmmSpec {
            a: self.a_hat.clone(),
            outputs: self.outputs_hat.clone(),
            initial: Some(self.initial_hat.clone()),
        }
    }

    /// Model-file JSON with `loglik_trace` and `iterations` added.
    pub fn to_json(&self) -> String {
        let spec = self.spec();
        serde_json::to_string_pretty(&ResultFile {
            model: &spec,
            loglik_trace: &self.loglik_trace,
            iterations: self.iterations,
        })
        .expect("result serialisation cannot fail")
    }
}

/// Column-stochastic matrix with independent flat-Dirichlet columns.
pub fn random_transition_matrix(n: usize, seed: u64) -> TransitionMatrix {
    let mut rng = seeded_rng(seed);
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(Exp1));
    for mut c in a.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    TransitionMatrix::new(a).expect("normalised Dirichlet draw")
}

/// Random Gaussian outputs for `y`: means uniform between the 5% and 95%
/// sample quantiles, variances uniform in `[0.25, 1] var(y)`.
pub fn random_gaussian_outputs(y: &[f64], n: usize, seed: u64) -> Result<GaussianOutputModel> {
    if y.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: y.len(),
            needed: 2,
        });
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round()) as usize];
    let (lo, hi) = (q(0.05), q(0.95));
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateComponent);
    }
    let mut rng = seeded_rng(seed);
    let comps = (0..n)
        .map(|_| {
            let mu = lo + (hi - lo) * rng.random::<f64>();
            GaussianComponent::new(mu, var * (0.25 + 0.75 * rng.random::<f64>()))
        })
        .collect();
    GaussianOutputModel::new(comps)
}

/// `m x n` emission matrix with flat-Dirichlet columns.
pub fn random_discrete_outputs(m: usize, n: usize, seed: u64) -> Result<DiscreteOutputModel> {
    let mut rng = seeded_rng(seed);
    let mut b = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(Exp1));
    for mut c in b.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    DiscreteOutputModel::new(b)
}

/// Emission likelihoods rescaled per time step so the largest is 1.
///
/// Returns the `n x T` column-major buffer and the per-step log scale.
fn emissions(y: &Observations, outputs: &OutputModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = outputs.n();
    match (y, outputs) {
        (Observations::Discrete(seq), OutputModel::Discrete(b)) => {
            let b = b.b();
            let mut e = Vec::with_capacity(n * seq.len());
            for (pos, &k) in seq.iter().enumerate() {
                if k >= b.nrows() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: k,
                        position: pos,
                        alphabet: b.nrows(),
                    });
                }
                e.extend(b.row(k).iter());
            }
            Ok((e, vec![0.0; seq.len()]))
        }
        (Observations::Continuous(seq), OutputModel::Gaussian(g)) => {
            let comps = g.components();
            let mut e = vec![0.0; n * seq.len()];
            let mut scale = vec![0.0; seq.len()];
            for (t, &v) in seq.iter().enumerate() {
                let col = &mut e[t * n..(t + 1) * n];
                let mut top = f64::NEG_INFINITY;
                for (o, c) in col.iter_mut().zip(comps) {
                    *o = c.log_density(v);
                    top = top.max(*o);
                }
                col.iter_mut().for_each(|o| *o = (*o - top).exp());
                scale[t] = top;
            }
            Ok((e, scale))
        }
        _ => Err(Error::Dimension(
            "observation type does not match the output model".into(),
        )),
    }
}

/// Sufficient statistics from one forward-backward sweep.
struct Sweep {
    loglik: f64,
    /// `trans[(i, j)] = sum_t P(X_t = j, X_{t+1} = i | y)`.
    trans: DMatrix<f64>,
    /// `sum_{t < T-1} gamma_t`.
    occupancy_head: DVector<f64>,
    gamma0: DVector<f64>,
    /// `n x T` state posteriors, column-major.
    gamma: Vec<f64>,
}

fn forward_backward(
    e: &[f64],
    scale: &[f64],
    a: &DMatrix<f64>,
    p0: &DVector<f64>,
) -> Result<Sweep> {
    let n = a.nrows();
    let t_len = scale.len();
    let mut alpha = vec![0.0; n * t_len];
    let mut c = vec![0.0; t_len];
    let mut loglik = 0.0;
    for t in 0..t_len {
        let (prev, cur) = alpha.split_at_mut(t * n);
        let cur = &mut cur[..n];
        let et = &e[t * n..(t + 1) * n];
        if t == 0 {
            for i in 0..n {
                cur[i] = p0[i] * et[i];
            }
        } else {
            let prev = &prev[(t - 1) * n..];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += a[(i, j)] * prev[j];
                }
                cur[i] = s * et[i];
            }
        }
        let ct: f64 = cur.iter().sum();
        if !(ct > 0.0 && ct.is_finite()) {
            return Err(Error::NumericalUnderflow(t));
        }
        cur.iter_mut().for_each(|v| *v /= ct);
        c[t] = ct;
        loglik += ct.ln() + scale[t];
    }

    let mut trans = DMatrix::zeros(n, n);
    let mut occupancy_head = DVector::zeros(n);
    let mut gamma = alpha;
    let mut beta = vec![1.0; n];
    let mut weighted = vec![0.0; n];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let et1 = &e[(t + 1) * n..(t + 2) * n];
        for i in 0..n {
            weighted[i] = et1[i] * beta[i] / c[t + 1];
        }
        let (head, tail) = gamma.split_at_mut((t + 1) * n);
        let at = &head[t * n..];
        for j in 0..n {
            for i in 0..n {
                trans[(i, j)] += at[j] * a[(i, j)] * weighted[i];
            }
        }
        // gamma_{t+1} = alpha_{t+1} * beta_{t+1}
        for i in 0..n {
            tail[i] *= beta[i];
        }
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += a[(i, j)] * weighted[i];
            }
            beta[j] = s;
        }
        for j in 0..n {
            occupancy_head[j] += at[j] * beta[j];
        }
    }
    for i in 0..n {
        gamma[i] *= beta[i];
    }
    let gamma0 = DVector::from_column_slice(&gamma[..n]);
    Ok(Sweep {
        loglik,
        trans,
        occupancy_head,
        gamma0,
        gamma,
    })
}

fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

/// Posterior state marginals `P(X_t = i | y)` as an `n x T` matrix, plus the log-likelihood.
pub fn state_posteriors(
    y: &Observations,
    spec: &HmmSpec,
) -> Result<(DMatrix<f64>, f64)> {
    let n = spec.n();
    let p0 = spec.initial.clone().unwrap_or_else(|| uniform(n));
    let (e, scale) = emissions(y, &spec.outputs)?;
    let sweep = forward_backward(&e, &scale, spec.a.matrix(), &p0)?;
    Ok((
        DMatrix::from_vec(n, scale.len(), sweep.gamma),
        sweep.loglik,
    ))
}

fn update_outputs(
    y: &Observations,
    outputs: &OutputModel,
    gamma: &[f64],
    var_floor: f64,
) -> Result<OutputModel> {
    let n = outputs.n();
    match (y, outputs) {
        (Observations::Discrete(seq), OutputModel::Discrete(b)) => {
            let mut counts = DMatrix::zeros(b.m(), n);
            for (t, &k) in seq.iter().enumerate() {
                for i in 0..n {
                    counts[(k, i)] += gamma[t * n + i];
                }
            }
            for mut col in counts.column_iter_mut() {
                let s = col.sum();
                if s > 0.0 {
                    col /= s;
                } else {
                    col.fill(1.0 / col.len() as f64);
                }
            }
            Ok(OutputModel::Discrete(DiscreteOutputModel::new(counts)?))
        }
        (Observations::Continuous(seq), OutputModel::Gaussian(g)) => {
            let old = g.components();
            let mut w = vec![0.0; n];
            let mut s1 = vec![0.0; n];
            let mut s2 = vec![0.0; n];
            for (t, &v) in seq.iter().enumerate() {
                for i in 0..n {
                    let r = gamma[t * n + i];
                    let d = v - old[i].mu;
                    w[i] += r;
                    s1[i] += r * d;
                    s2[i] += r * d * d;
                }
            }
            let comps = (0..n)
                .map(|i| {
                    if w[i] > 0.0 {
                        let shift = s1[i] / w[i];
                        let var = (s2[i] / w[i] - shift * shift).max(var_floor);
                        GaussianComponent::new(old[i].mu + shift, var)
                    } else {
                        old[i]
                    }
                })
                .collect();
            Ok(OutputModel::Gaussian(GaussianOutputModel::new(comps)?))
        }
        _ => unreachable!("checked by emissions()"),
    }
}

fn data_variance(y: &Observations) -> f64 {
    match y {
        Observations::Continuous(v) => {
            let t = v.len() as f64;
            let m = v.iter().sum::<f64>() / t;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t
        }
        Observations::Discrete(_) => 0.0,
    }
}

/// Runs `max_iters` EM iterations from `init`.
pub fn baum_welch(
    y: &Observations,
    init: &BaumWelchInit,
    max_iters: usize,
) -> Result<BaumWelchResult> {
    baum_welch_observed(y, init, max_iters, |_, _, _| {})
}

/// [`baum_welch`] calling `observer(iteration, a, outputs)` after every update.
///
/// Gaussian variances are floored at `1e-6 var(y)`.
pub fn baum_welch_observed<F>(
    y: &Observations,
    init: &BaumWelchInit,
    max_iters: usize,
    mut observer: F,
) -> Result<BaumWelchResult>
where
    F: FnMut(usize, &TransitionMatrix, &OutputModel),
{
    let n = init.a0.n();
    if init.outputs0.n() != n {
        return Err(Error::InvalidModel(format!(
            "initial transition matrix has {n} states, outputs have {}",
            init.outputs0.n()
        )));
    }
    if y.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: y.len(),
            needed: 2,
        });
    }
    let var_floor = 1e-6 * data_variance(y);
    let mut a = init.a0.clone();
    let mut outputs = init.outputs0.clone();
    let mut p0 = init.initial0.clone().unwrap_or_else(|| uniform(n));
    let mut trace = Vec::with_capacity(max_iters);
    let (mut e, mut scale) = emissions(y, &outputs)?;
    for it in 0..max_iters {
        let sweep = forward_backward(&e, &scale, a.matrix(), &p0)?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            debug_assert!(
                sweep.loglik >= prev - 1e-8 * prev.abs().max(1.0),
                "Baum-Welch log-likelihood decreased from {prev} to {}",
                sweep.loglik
            );
        }
        trace.push(sweep.loglik);
        let mut next = sweep.trans.clone();
        for j in 0..n {
            let occ = sweep.occupancy_head[j];
            if occ > 0.0 {
                let s = next.column(j).sum();
                next.column_mut(j).unscale_mut(s);
            } else {
                next.set_column(j, &a.matrix().column(j));
            }
        }
        a = TransitionMatrix::new(next)?;
        p0 = sweep.gamma0.clone() / sweep.gamma0.sum();
        if !init.fix_outputs {
            outputs = update_outputs(y, &outputs, &sweep.gamma, var_floor)?;
            (e, scale) = emissions(y, &outputs)?;
        }
        observer(it + 1, &a, &outputs);
    }
    Ok(BaumWelchResult {
        a_hat: a,
        outputs_hat: outputs,
        initial_hat: p0,
        loglik_trace: trace,
        iterations: max_iters,
    })
}
