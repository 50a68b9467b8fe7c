//! Sampling and moment-estimator behaviour on the reference models.

mod common;

use std::path::PathBuf;

use decouple_hmm::model::{builtin, ergodicity_diagnostics, sample, stationary_distribution};
use decouple_hmm::moments::{
    analytic_moments, compute_f, empirical_eta, gaussian_k, empirical_eta_prime, empirical_rho_sigma, empirical_xi,
    AnalyticMoments,
};
use decouple_hmm::{HmmSpec, Observations, OutputModel};
use nalgebra::DMatrix;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    sxy / sxx
}

fn continuous(spec: &HmmSpec, t: usize, seed: u64) -> Vec<f64> {
    match sample(spec, t, seed).unwrap().observations {
        Observations::Continuous(y) => y,
        Observations::Discrete(_) => unreachable!(),
    }
}

fn discrete(spec: &HmmSpec, t: usize, seed: u64) -> Vec<usize> {
    match sample(spec, t, seed).unwrap().observations {
        Observations::Discrete(y) => y,
        Observations::Continuous(_) => unreachable!(),
    }
}

fn toy_outputs() -> decouple_hmm::GaussianOutputModel {
    match builtin::toy_gaussian().outputs {
        OutputModel::Gaussian(g) => g,
        OutputModel::Discrete(_) => unreachable!(),
    }
}

#[test]
fn builtin_toy_matches_model_file() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models/toy.json");
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(HmmSpec::from_json(&text).unwrap(), builtin::toy_gaussian());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models/two-state.json");
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(HmmSpec::from_json(&text).unwrap(), builtin::two_state_discrete());
}

#[test]
fn toy_min_stationary_weight() {
    let d = ergodicity_diagnostics(&builtin::toy_gaussian()).unwrap();
    assert!((d.min_pi - 0.1176).abs() < 5e-5);
}

#[test]
fn state_frequencies_follow_pi() {
    let spec = builtin::toy_gaussian();
    let pi = stationary_distribution(&spec.a).unwrap();
    let path = sample(&spec, 100_000, 7).unwrap();
    let mut freq = vec![0.0; 4];
    for &s in &path.states {
        freq[s] += 1e-5;
    }
    for (f, p) in freq.iter().zip(pi.iter()) {
        assert!((f - p).abs() < 0.01, "{f} vs {p}");
    }
}

#[test]
fn transition_counts_converge_to_a() {
    let spec = builtin::toy_gaussian();
    for seed in 0..10 {
        let path = sample(&spec, 1_000_000, seed).unwrap();
        let mut counts = DMatrix::<f64>::zeros(4, 4);
        for w in path.states.windows(2) {
            counts[(w[1], w[0])] += 1.0;
        }
        for j in 0..4 {
            let s = counts.column(j).sum();
            counts.column_mut(j).unscale_mut(s);
        }
        let err = (counts - spec.a.matrix()).amax();
        assert!(err < 5e-3, "seed {seed}: sup error {err}");
    }
}

#[test]
fn stationary_start_keeps_marginals() {
    // 2000 independent chains of length 50 started from pi; chi-square on X_t.
    let base = builtin::toy_gaussian();
    let pi = stationary_distribution(&base.a).unwrap();
    let spec = HmmSpec::new(base.a.clone(), base.outputs.clone(), Some(pi.clone())).unwrap();
    let chains = 2_000;
    let mut counts = vec![[0.0f64; 4]; 50];
    for c in 0..chains {
        let path = sample(&spec, 50, 1_000 + c).unwrap();
        for (t, &s) in path.states.iter().enumerate() {
            counts[t][s] += 1.0;
        }
    }
    // Upper 1e-3 point of chi-square with 3 degrees of freedom.
    let critical = 16.266;
    for t in [0, 1, 2, 10, 49] {
        let stat: f64 = (0..4)
            .map(|k| {
                let e = chains as f64 * pi[k];
                (counts[t][k] - e).powi(2) / e
            })
            .sum();
        assert!(stat < critical, "t = {t}: chi-square {stat}");
    }
}

#[test]
fn rho_error_shrinks_by_root_ten_per_decade() {
    let spec = builtin::toy_discrete();
    let AnalyticMoments::Discrete(exact) = analytic_moments(&spec).unwrap() else {
        unreachable!()
    };
    let med = |t: usize| {
        median(
            (0..20)
                .map(|s| {
                    let m = empirical_rho_sigma(discrete(&spec, t, s), 6).unwrap();
                    (m.rho - &exact.rho).norm()
                })
                .collect(),
        )
    };
    let e = [med(10_000), med(100_000), med(1_000_000)];
    for w in e.windows(2) {
        let factor = w[0] / w[1];
        assert!((2.5..=4.5).contains(&factor), "decade factor {factor}");
    }
    let g = e[0] * 100.0;
    assert!(e[2] < 3.0 * g / 1000.0);
}

#[test]
fn xi_error_decays_at_root_t() {
    let spec = builtin::toy_gaussian();
    let outputs = toy_outputs();
    let AnalyticMoments::Continuous(exact) = analytic_moments(&spec).unwrap() else {
        unreachable!()
    };
    let points: Vec<(f64, f64)> = [1_000, 10_000, 100_000, 1_000_000]
        .iter()
        .map(|&t| {
            let errs = (0..20)
                .map(|s| (empirical_xi(continuous(&spec, t, s), &outputs).unwrap() - &exact.xi).norm())
                .collect();
            (t as f64, median(errs))
        })
        .collect();
    let b = slope(&points);
    assert!((b + 0.5).abs() <= 0.15, "slope {b}");
}

#[test]
fn eta_close_at_1e5_and_eta_prime_noisier() {
    let spec = builtin::toy_gaussian();
    let outputs = toy_outputs();
    let pi = stationary_distribution(&spec.a).unwrap();
    let AnalyticMoments::Continuous(exact) = analytic_moments(&spec).unwrap() else {
        unreachable!()
    };
    let eta_errs: Vec<f64> = (0..20)
        .map(|s| {
            let y = continuous(&spec, 100_000, s);
            (empirical_eta(y, &outputs, &pi).unwrap() - &exact.eta).norm()
        })
        .collect();
    assert!(median(eta_errs) < 0.02);

    // The two moments live in different units; compare their errors pulled
    // back through the operators that map A to them, `E diag(pi) A^T E^T`.
    let etap = exact.eta_prime.unwrap();
    let f = compute_f(&outputs, &pi).unwrap();
    let k = gaussian_k(&outputs);
    let pull = |e: &DMatrix<f64>, d: DMatrix<f64>| {
        let inv = e.clone().try_inverse().unwrap();
        (&inv * d * inv.transpose()).norm()
    };
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    for s in 0..20 {
        let y = continuous(&spec, 1_000_000, 100 + s);
        e1.push(pull(&f, empirical_eta(y.iter().copied(), &outputs, &pi).unwrap() - &exact.eta));
        e2.push(pull(&k, empirical_eta_prime(y, &outputs).unwrap() - &etap));
    }
    let (m1, m2) = (median(e1), median(e2));
    assert!(m2 > m1, "eta' {m2} vs eta {m1}");
}
