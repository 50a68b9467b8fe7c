//! Generators, brute-force oracles and property bodies shared by the
//! integration tests. The acceptance target in the bench crate includes this
//! file as a module too.
#![allow(dead_code)]

use decouple_hmm::baseline::state_posteriors;
use decouple_hmm::estimators::{full_pipeline, population_pipeline, PipelineOptions};
use decouple_hmm::mixture::{em_fit, MixtureConfig};
use decouple_hmm::model::{
    relabel_square, relabel_vector, sample, seeded_rng, stationary_distribution, SeededRng,
};
use decouple_hmm::moments::{analytic_moments, compute_f, empirical_eta, AnalyticMoments};
use decouple_hmm::qp::SimplexQp;
use decouple_hmm::{
    DiscreteOutputModel, Error, GaussianComponent, GaussianOutputModel, HmmSpec, Observations,
    OutputModel, TransitionMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::test_runner::TestCaseError;
use proptest::{prop_assert, prop_assume};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

// ---------------------------------------------------------------- generators

pub fn rng(seed: u64) -> SeededRng {
    seeded_rng(seed)
}

pub fn dirichlet(rng: &mut SeededRng, k: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Columns drawn from a flat Dirichlet.
pub fn random_transition(rng: &mut SeededRng, n: usize) -> TransitionMatrix {
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for (i, v) in dirichlet(rng, n).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    TransitionMatrix::new(a).expect("Dirichlet columns are stochastic")
}

/// `B = 0.6 [k = i] + 0.4 D` with Dirichlet columns `D`; well conditioned for any `m >= n`.
pub fn random_emissions(rng: &mut SeededRng, m: usize, n: usize) -> DiscreteOutputModel {
    let mut b = DMatrix::zeros(m, n);
    for i in 0..n {
        for (k, v) in dirichlet(rng, m).into_iter().enumerate() {
            b[(k, i)] = 0.4 * v + if k == i { 0.6 } else { 0.0 };
        }
    }
    DiscreteOutputModel::new(b).expect("valid emissions")
}

/// Means about 4 apart, variances in `[0.5, 2]`.
pub fn random_components(rng: &mut SeededRng, n: usize) -> GaussianOutputModel {
    let comps = (0..n)
        .map(|i| {
            GaussianComponent::new(
                4.0 * i as f64 + rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
            )
        })
        .collect();
    GaussianOutputModel::new(comps).expect("valid components")
}

pub fn random_discrete_spec(rng: &mut SeededRng, n: usize, m: usize) -> HmmSpec {
    let a = random_transition(rng, n);
    let b = random_emissions(rng, m, n);
    HmmSpec::new(a, OutputModel::Discrete(b), None).expect("coherent spec")
}

pub fn random_gaussian_spec(rng: &mut SeededRng, n: usize) -> HmmSpec {
    let a = random_transition(rng, n);
    let g = random_components(rng, n);
    HmmSpec::new(a, OutputModel::Gaussian(g), None).expect("coherent spec")
}

pub fn random_permutation(rng: &mut SeededRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

pub fn gaussian_matrix(rng: &mut SeededRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut SeededRng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Random feasible QP with `d <= 6`: a simplex row, sometimes a second random
/// row, sometimes a dependent copy. `M = G^T G + delta I`.
pub fn random_qp(rng: &mut SeededRng) -> SimplexQp {
    let d = rng.random_range(1..=6);
    let k = rng.random_range(1..=d);
    let g = gaussian_matrix(rng, k, d);
    let delta = rng.random_range(0.05..1.0);
    let m = g.transpose() * g + DMatrix::identity(d, d) * delta;
    let h = gaussian_vector(rng, d) * 2.0;
    let mut rows = vec![vec![1.0; d]];
    if d > 2 && rng.random_bool(0.5) {
        rows.push((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    if rng.random_bool(0.25) {
        rows.push(rows[0].iter().map(|v| 2.0 * v).collect());
    }
    let x0 = DVector::from_vec(dirichlet(rng, d));
    let e = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    let rhs = &e * x0;
    SimplexQp::new(m, h, e, rhs).expect("coherent QP")
}

// ------------------------------------------------------------------- oracles

/// Minimiser by enumerating every active set: solve the equality-constrained
/// KKT system on each free set, keep primal/dual feasible points, return the
/// lowest objective. Exponential in the dimension; fine for `d <= 8`.
pub fn brute_force_qp(qp: &SimplexQp) -> Option<DVector<f64>> {
    let (m, h, e, rhs) = (qp.m(), qp.h(), qp.e(), qp.rhs());
    let d = h.len();
    let p = e.nrows();
    let scale = 1.0 + m.amax() + h.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << d) {
        let free: Vec<usize> = (0..d).filter(|i| mask >> i & 1 == 1).collect();
        let nf = free.len();
        let mut kkt = DMatrix::zeros(nf + p, nf + p);
        let mut r = DVector::zeros(nf + p);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = m[(i, j)];
            }
            for q in 0..p {
                kkt[(a, nf + q)] = -e[(q, i)];
                kkt[(nf + q, a)] = e[(q, i)];
            }
            r[a] = h[i];
        }
        for q in 0..p {
            r[nf + q] = rhs[q];
        }
        let Ok(z) = kkt.clone().svd(true, true).solve(&r, 1e-12) else {
            continue;
        };
        if (&kkt * &z - &r).amax() > 1e-9 * scale {
            continue;
        }
        let mut x = DVector::zeros(d);
        for (a, &i) in free.iter().enumerate() {
            x[i] = z[a];
        }
        if x.iter().any(|&v| v < -1e-10) {
            continue;
        }
        let lambda = z.rows(nf, p).into_owned();
        let mu = m * &x - h - e.transpose() * lambda;
        if (0..d).any(|i| mask >> i & 1 == 0 && mu[i] < -1e-8 * scale) {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Symmetric matrix with spectral norm exactly `norm`.
pub fn symmetric_with_norm(rng: &mut SeededRng, d: usize, norm: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, d, d);
    let s = &g + g.transpose();
    let top = s.clone().symmetric_eigen().eigenvalues.amax();
    s * (norm / top)
}

pub fn vector_with_norm(rng: &mut SeededRng, d: usize, norm: f64) -> DVector<f64> {
    let v = gaussian_vector(rng, d);
    let n = v.norm();
    v * (norm / n)
}

// --------------------------------------------------------- property bodies

type PropResult = Result<(), TestCaseError>;

fn spec_for(seed: u64, n: usize, m: usize, gaussian: bool) -> HmmSpec {
    let mut r = rng(seed);
    if gaussian {
        random_gaussian_spec(&mut r, n)
    } else {
        random_discrete_spec(&mut r, n, m.max(n))
    }
}

fn column_stochastic(a: &DMatrix<f64>, tol: f64) -> bool {
    a.iter().all(|&v| v >= -1e-12) && a.column_iter().all(|c| (c.sum() - 1.0).abs() <= tol)
}

/// Generated and estimated transition matrices are column stochastic, the
/// stationary vector is a probability vector fixed by `A`, and Â satisfies
/// the stationarity constraint.
pub fn prop_stochasticity(seed: u64, n: usize, m: usize, gaussian: bool) -> PropResult {
    let spec = spec_for(seed, n, m, gaussian);
    prop_assert!(column_stochastic(spec.a.matrix(), 1e-12));
    let pi = stationary_distribution(&spec.a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(pi.iter().all(|&p| p >= 0.0) && (pi.sum() - 1.0).abs() < 1e-12);
    prop_assert!((spec.a.matrix() * &pi - &pi).amax() < 1e-10);
    let path = sample(&spec, 800, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(path.states.iter().all(|&s| s < n));
    let rep = match full_pipeline(&path.observations, &spec.outputs, PipelineOptions::default()) {
        Ok(r) => r,
        // A state estimated to have zero weight leaves F singular; reported, not hidden.
        Err(Error::RankDeficientF(_)) => {
            prop_assume!(false);
            unreachable!()
        }
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    let a_hat = rep.a_hat().into_inner();
    let pi_hat = rep.pi_hat();
    prop_assert!(column_stochastic(&a_hat, 1e-9), "A_hat {a_hat}");
    prop_assert!(pi_hat.iter().all(|&p| p >= 0.0) && (pi_hat.sum() - 1.0).abs() < 1e-9);
    prop_assert!((&a_hat * &pi_hat - &pi_hat).amax() <= 1e-8);
    Ok(())
}

/// Counting identities of the empirical moments and marginal identities of
/// the analytic ones.
pub fn prop_moment_normalisation(seed: u64, n: usize, m: usize, t: usize) -> PropResult {
    let spec = spec_for(seed, n, m, false);
    let m = m.max(n);
    let Observations::Discrete(y) = sample(&spec, t, seed).unwrap().observations else {
        unreachable!()
    };
    let mom = decouple_hmm::moments::empirical_rho_sigma(y.iter().copied(), m).unwrap();
    prop_assert!((mom.rho.sum() - 1.0).abs() < 1e-12);
    prop_assert!((mom.sigma.sum() - 1.0).abs() < 1e-12);
    // Row k of sigma_hat counts pairs starting at k: the first T-1 symbols.
    let mut first = vec![0.0; m];
    for &s in &y[..t - 1] {
        first[s] += 1.0 / (t - 1) as f64;
    }
    for k in 0..m {
        prop_assert!((mom.sigma.row(k).sum() - first[k]).abs() < 1e-12);
        prop_assert!((mom.rho[k] - y.iter().filter(|&&s| s == k).count() as f64 / t as f64).abs() < 1e-15);
    }
    let AnalyticMoments::Discrete(exact) = analytic_moments(&spec).unwrap() else {
        unreachable!()
    };
    for k in 0..m {
        prop_assert!((exact.sigma.row(k).sum() - exact.rho[k]).abs() < 1e-12);
        prop_assert!((exact.sigma.column(k).sum() - exact.rho[k]).abs() < 1e-12);
    }
    let g = spec_for(seed, n, m, true);
    let OutputModel::Gaussian(outs) = &g.outputs else {
        unreachable!()
    };
    let Observations::Continuous(yc) = sample(&g, t, seed).unwrap().observations else {
        unreachable!()
    };
    let pi = stationary_distribution(&g.a).unwrap();
    let eta = empirical_eta(yc.iter().copied(), outs, &pi).unwrap();
    prop_assert!((eta.sum() - 1.0).abs() < 1e-12);
    prop_assert!(eta.iter().all(|&v| v >= 0.0));
    Ok(())
}

/// `F` is column stochastic with entries in `[0, 1]`, for any positive weights.
pub fn prop_f_columns(seed: u64, n: usize) -> PropResult {
    let mut r = rng(seed);
    let comps: Vec<GaussianComponent> = (0..n)
        .map(|_| GaussianComponent::new(r.random_range(-20.0..20.0), r.random_range(0.1..25.0)))
        .collect();
    let outs = GaussianOutputModel::new(comps).unwrap();
    let pi = DVector::from_vec(dirichlet(&mut r, n));
    let f = compute_f(&outs, &pi).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for c in f.column_iter() {
        prop_assert!((c.sum() - 1.0).abs() < 1e-8, "column sum {}", c.sum());
    }
    prop_assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
    Ok(())
}

/// The EM log-likelihood never drops by more than rounding.
pub fn prop_em_monotone(seed: u64, n: usize, t: usize) -> PropResult {
    let spec = spec_for(seed, n, n, true);
    let Observations::Continuous(y) = sample(&spec, t, seed).unwrap().observations else {
        unreachable!()
    };
    let cfg = MixtureConfig {
        restarts: 2,
        seed,
        max_iters: 200,
        ..Default::default()
    };
    let fit = match em_fit(&y, n, &cfg) {
        Ok(f) => f,
        Err(Error::DegenerateComponent) => {
            prop_assume!(false);
            unreachable!()
        }
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    for w in fit.loglik_trace.windows(2) {
        prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
    }
    prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(())
}

/// Forward-backward state marginals sum to one at every step.
pub fn prop_posterior_normalisation(seed: u64, n: usize, t: usize, gaussian: bool) -> PropResult {
    let spec = spec_for(seed, n, n + 1, gaussian);
    let path = sample(&spec, t, seed).unwrap();
    let (gamma, ll) = state_posteriors(&path.observations, &spec)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(ll.is_finite());
    for c in gamma.column_iter() {
        prop_assert!((c.sum() - 1.0).abs() < 1e-10);
        prop_assert!(c.iter().all(|&v| v >= 0.0));
    }
    Ok(())
}

/// Renaming states permutes `pi_hat` and conjugates `A_hat`; the stationary
/// vector permutes the same way.
pub fn prop_label_equivariance(seed: u64, n: usize, gaussian: bool) -> PropResult {
    let spec = spec_for(seed, n, n + 1, gaussian);
    let perm = random_permutation(&mut rng(seed ^ 0x5eed), n);
    let moved = spec.relabel(&perm);
    let pi = stationary_distribution(&spec.a).unwrap();
    let pi_moved = stationary_distribution(&moved.a).unwrap();
    prop_assert!((relabel_vector(&pi, &perm) - pi_moved).amax() < 1e-10);
    let base = population_pipeline(&spec, PipelineOptions::default()).unwrap();
    let other = population_pipeline(&moved, PipelineOptions::default()).unwrap();
    prop_assert!((relabel_vector(&base.pi_hat(), &perm) - other.pi_hat()).amax() < 1e-8);
    let a0 = relabel_square(base.a_hat().matrix(), &perm);
    prop_assert!((a0 - other.a_hat().into_inner()).amax() < 1e-7);
    if !gaussian {
        // Same observations, relabelled emission columns.
        let y = sample(&spec, 5_000, seed).unwrap().observations;
        let options = PipelineOptions::unweighted();
        let (Ok(r0), Ok(r1)) = (
            full_pipeline(&y, &spec.outputs, options),
            full_pipeline(&y, &moved.outputs, options),
        ) else {
            return Ok(());
        };
        prop_assert!((relabel_vector(&r0.pi_hat(), &perm) - r1.pi_hat()).amax() < 1e-8);
        let a0 = relabel_square(r0.a_hat().matrix(), &perm);
        prop_assert!((a0 - r1.a_hat().into_inner()).amax() < 1e-7);
    }
    Ok(())
}
