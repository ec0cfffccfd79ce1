use imfbo_core::acquisition::{expected_improvement, mf_acquisition, AcquisitionConfig};
use imfbo_core::campaign::{
    apply_policy_change, candidate_grid, config_diff, initialize, replay_policy_log, CampaignConfig, CampaignMode,
    CampaignState, PolicyChange, PolicyKind,
};
use imfbo_core::gp::{predict_draw, Dataset, PosteriorDraw};
use imfbo_core::kernel::{
    covariance_matrix, fidelity_kernel, Fidelity, FidelityCoupling, FidelityPoint, KernelHyperParams, SpatialFamily,
};
use imfbo_core::mean::MeanModelSpec;
use imfbo_core::objectives::ising::{kawasaki_sweep, metropolis_sweep, LatticeKind, SpinLattice};
use imfbo_core::rng::{derive_seed, stream, Stage};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn fidelity() -> impl Strategy<Value = Fidelity> {
    prop_oneof![Just(Fidelity::Low), Just(Fidelity::High)]
}

fn family() -> impl Strategy<Value = SpatialFamily> {
    prop_oneof![Just(SpatialFamily::Rbf), Just(SpatialFamily::Matern52)]
}

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<FidelityPoint>> {
    prop::collection::vec((prop::collection::vec(-5.0..5.0f64, dim), fidelity()), 1..=max)
        .prop_map(|v| v.into_iter().map(|(x, f)| FidelityPoint::new(x, f)).collect())
}

fn hyper(dim: usize) -> impl Strategy<Value = KernelHyperParams> {
    (0.1..5.0f64, prop::collection::vec(0.1..3.0f64, dim), 0.01..5.0f64, 0.0..0.5f64, family()).prop_map(
        |(sigma2, length_scales, delta, noise2, spatial_family)| KernelHyperParams {
            sigma2,
            length_scales,
            delta,
            noise2,
            spatial_family,
            coupling: FidelityCoupling::Exponential,
        },
    )
}

fn lattice_kind() -> impl Strategy<Value = LatticeKind> {
    prop_oneof![Just(LatticeKind::Square), Just(LatticeKind::Triangular)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_psd((pts, hp) in (1usize..=3).prop_flat_map(|d| (points(d, 15), hyper(d)))) {
        let k = covariance_matrix(&pts, &hp, false).unwrap();
        prop_assert_eq!(&k, &k.transpose());
        for i in 0..pts.len() {
            prop_assert!((k[(i, i)] - hp.sigma2).abs() <= 1e-12 * hp.sigma2);
        }
        let min = SymmetricEigen::new(k).eigenvalues.min();
        prop_assert!(min >= -1e-8 * hp.sigma2.max(1.0), "min eigenvalue {}", min);
    }

    #[test]
    fn fidelity_correlation_bounds(delta in 1e-3..50.0f64) {
        prop_assert_eq!(fidelity_kernel(Fidelity::Low, Fidelity::Low, delta).unwrap(), 1.0);
        prop_assert_eq!(fidelity_kernel(Fidelity::High, Fidelity::High, delta).unwrap(), 1.0);
        let cross = fidelity_kernel(Fidelity::Low, Fidelity::High, delta).unwrap();
        prop_assert!(cross > 0.0 && cross < 1.0);
        prop_assert_eq!(cross, fidelity_kernel(Fidelity::High, Fidelity::Low, delta).unwrap());
    }

    #[test]
    fn expected_improvement_is_nonnegative_and_monotone(
        mu in -10.0..10.0f64, sigma in 0.0..5.0f64, best in -10.0..10.0f64, xi in 0.0..0.1f64, bump in 0.0..2.0f64
    ) {
        let a = expected_improvement(mu, sigma, best, xi).unwrap();
        let b = expected_improvement(mu + bump, sigma, best, xi).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a - 1e-12);
        prop_assert!(a >= (mu - best - xi).max(0.0) - 1e-9);
        if sigma == 0.0 {
            prop_assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn posterior_variance_is_bounded(
        (pts, hp) in (points(1, 8), hyper(1)),
        ys in prop::collection::vec(-5.0..5.0f64, 8),
        c in 0.5..8.0f64,
    ) {
        let data = Dataset::new(pts.clone(), ys[..pts.len()].to_vec()).unwrap();
        let grid: Vec<Vec<f64>> = (0..21).map(|i| vec![-5.0 + 0.5 * i as f64]).collect();
        let draw = PosteriorDraw { hp: hp.clone(), mean: None };
        let (mu_hf, var_hf, mu_lf, var_lf) = predict_draw(&data, &draw, &MeanModelSpec::Zero, &grid).unwrap();
        for v in var_hf.iter().chain(&var_lf) {
            prop_assert!(*v >= 0.0 && *v <= hp.sigma2 * (1.0 + 1e-12));
        }
        let pred = imfbo_core::gp::PosteriorPrediction { grid, mu_hf, var_hf, mu_lf, var_lf };
        let curves = mf_acquisition(&pred, 0.0, &AcquisitionConfig::with_cost_ratio(c)).unwrap();
        for i in 0..curves.len() {
            prop_assert!((curves.u_hf[i] * c - curves.ei_hf[i]).abs() <= 1e-12 * (1.0 + curves.ei_hf[i]));
            prop_assert_eq!(curves.u_lf[i], (curves.ei_hf[i] - curves.ei_lf[i]).abs());
        }
    }

    #[test]
    fn kawasaki_conserves_and_metropolis_tracks_bonds(
        kind in lattice_kind(), n in 3usize..10, seed in any::<u64>(), m in -0.8..0.8f64, t in 0.5..5.0f64
    ) {
        let mut rng = stream(seed, Stage::Objective, 0);
        let mut lat = SpinLattice::with_magnetization(n, kind, m, &mut rng);
        let mag = lat.magnetization();
        let mut bond = lat.bond_sum();
        for _ in 0..5 {
            bond += kawasaki_sweep(&mut lat, 1.0, t, &mut rng).bond_delta;
            prop_assert_eq!(lat.magnetization(), mag);
        }
        prop_assert_eq!(bond, lat.bond_sum());
        for _ in 0..5 {
            bond += metropolis_sweep(&mut lat, 1.0, t, &mut rng).bond_delta;
        }
        prop_assert_eq!(bond, lat.bond_sum());
    }

    #[test]
    fn grid_is_lexicographic(res in 2usize..8, d in 1usize..4) {
        let domain: Vec<(f64, f64)> = (0..d).map(|i| (i as f64, i as f64 + 1.0)).collect();
        let g = candidate_grid(&domain, res);
        prop_assert_eq!(g.len(), res.pow(d as u32));
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(g.first().unwrap().clone(), domain.iter().map(|b| b.0).collect::<Vec<_>>());
        prop_assert_eq!(g.last().unwrap().clone(), domain.iter().map(|b| b.1).collect::<Vec<_>>());
    }

    #[test]
    fn seed_streams_are_distinct(seed in any::<u64>(), i in 0u64..1000) {
        let stages = [Stage::Init, Stage::Fit, Stage::Fallback, Stage::Objective, Stage::FinalFit, Stage::GroundTruth, Stage::Chain];
        let mut seen: Vec<u64> = stages.iter().map(|&s| derive_seed(seed, s, i)).collect();
        seen.push(derive_seed(seed, Stage::Fit, i + 1));
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), stages.len() + 1);
    }
}

fn initialized(seed: u64) -> CampaignState {
    let mut cfg = CampaignConfig::problem1().with_seed(seed);
    cfg.mode = CampaignMode::Interactive;
    initialize(cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn documents_round_trip(seed in any::<u64>()) {
        let s = initialized(seed);
        let text = s.to_json().unwrap();
        let back = CampaignState::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        prop_assert_eq!(back, s);
    }

    #[test]
    fn policy_log_explains_config(ops in prop::collection::vec((0u8..4, 0.1..10.0f64), 0..8)) {
        let mut s = initialized(1);
        for (op, v) in ops {
            let kind = match op {
                0 => PolicyKind::CostRatio { cost_ratio: v },
                1 => PolicyKind::Convergence { max_iterations: 16 + v as usize },
                2 => PolicyKind::ParameterSpace { bounds: vec![(0.0, 10.0 - v / 2.0)] },
                _ => PolicyKind::Surrogate { mean: Some(MeanModelSpec::gaussian_peak()), spatial_family: Some(SpatialFamily::Matern52) },
            };
            apply_policy_change(&mut s, PolicyChange::human(kind)).unwrap();
        }
        prop_assert_eq!(replay_policy_log(&s.initial_config, &s.policy_log), s.config.clone());
        let touched: Vec<&str> = s.policy_log.iter().flat_map(|c| c.kind.touched_fields()).collect();
        for field in config_diff(&s.initial_config, &s.config) {
            prop_assert!(touched.contains(&field), "{} unexplained", field);
        }
    }
}
