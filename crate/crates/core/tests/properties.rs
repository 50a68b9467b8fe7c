mod common;

use decouple_hmm::moments::{gaussian_k, quadrature_k};
use decouple_hmm::{GaussianComponent, GaussianOutputModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stochasticity(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=6, gaussian in any::<bool>()) {
        common::prop_stochasticity(seed, n, m, gaussian)?;
    }

    #[test]
    fn moment_normalisation(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=6, t in 2usize..400) {
        common::prop_moment_normalisation(seed, n, m, t)?;
    }

    #[test]
    fn f_columns(seed in any::<u64>(), n in 1usize..=5) {
        common::prop_f_columns(seed, n)?;
    }

    #[test]
    fn em_monotone(seed in any::<u64>(), n in 1usize..=3, t in 200usize..1_000) {
        common::prop_em_monotone(seed, n, t)?;
    }

    #[test]
    fn posterior_normalisation(seed in any::<u64>(), n in 1usize..=4, t in 1usize..300, gaussian in any::<bool>()) {
        common::prop_posterior_normalisation(seed, n, t, gaussian)?;
    }

    #[test]
    fn label_equivariance(seed in any::<u64>(), n in 1usize..=4, gaussian in any::<bool>()) {
        common::prop_label_equivariance(seed, n, gaussian)?;
    }

    #[test]
    fn closed_form_kernel_matches_quadrature(
        params in prop::collection::vec((-50.0f64..50.0, 0.1f64..100.0), 1..=4),
    ) {
        let g = GaussianOutputModel::new(
            params.iter().map(|&(mu, s2)| GaussianComponent::new(mu, s2)).collect(),
        )
        .unwrap();
        let gap = (gaussian_k(&g) - quadrature_k(&g).unwrap()).amax();
        prop_assert!(gap <= 1e-8, "gap {gap:e}");
    }
}
