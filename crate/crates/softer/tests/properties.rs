//! Property tests for the structural invariants: layout bijections,
//! calibration round trips, composition symmetry, metric bounds, and
//! serialization identity under randomized inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softer::calibrate::{
    additional_variance, calibrate, prior_variance, CalibrationFixed, CalibrationTarget,
};
use softer::diagnostics::psrf;
use softer::model::{SofterConfig, Symmetry};
use softer::simbench::selection_metrics;
use softer::symmetric::SymmetricState;
use softer::tensor::{index_from_offset, strides_of, DenseTensor};

fn small_dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=5, 1..=4)
}

proptest! {
    /// The canonical layout's offset and multi-index maps are inverse
    /// bijections over the whole tensor.
    #[test]
    fn offset_and_index_are_inverse(dims in small_dims()) {
        let len: usize = dims.iter().product();
        let strides = strides_of(&dims);
        for off in 0..len {
            let idx = index_from_offset(&dims, off);
            prop_assert_eq!(idx.len(), dims.len());
            for (i, d) in idx.iter().zip(&dims) {
                prop_assert!(1 <= *i && i <= d);
            }
            let back: usize = idx.iter().zip(&strides).map(|(i, s)| (i - 1) * s).sum();
            prop_assert_eq!(back, off);
        }
    }

    /// Tensor CSV encoding is lossless for arbitrary finite entries.
    #[test]
    fn tensor_csv_round_trips(values in prop::collection::vec(-1e6f64..1e6, 6), n in 1usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let tensors: Vec<DenseTensor> = (0..n)
            .map(|i| {
                let shifted: Vec<f64> = values.iter().map(|v| v + i as f64).collect();
                DenseTensor::new(vec![2, 3], shifted).unwrap()
            })
            .collect();
        softer::io::write_tensors_csv(&path, &tensors).unwrap();
        let back = softer::io::read_tensors_csv(&path).unwrap();
        prop_assert_eq!(back, tensors);
    }

    /// Solving the two calibration conditions and evaluating the induced
    /// prior moments recovers the requested targets.
    #[test]
    fn calibration_round_trips_the_targets(
        v_star in 0.2f64..5.0,
        av_star in 0.01f64..0.5,
        alpha in 0.5f64..2.0,
        d in 1usize..6,
    ) {
        let fixed = CalibrationFixed {
            a_taugamma: 3.0,
            a_sigma: 0.5,
            a_lambda: 3.0,
            b_lambda: 3f64.powf(0.25),
            alpha,
            d,
        };
        let h = calibrate(CalibrationTarget { v_star, av_star }, fixed, 2).unwrap();
        let v = prior_variance(&h, 2).unwrap();
        let av = additional_variance(&h, 2).unwrap();
        prop_assert!((v - v_star).abs() < 1e-9 * v_star, "variance {} vs {}", v, v_star);
        prop_assert!((av - av_star).abs() < 1e-9, "softening share {} vs {}", av, av_star);
    }

    /// Every composed symmetric draw is bitwise equal to its transpose
    /// regardless of the state the sampler visits.
    #[test]
    fn symmetric_composition_is_exactly_symmetric(seed in 0u64..500, r in 2usize..6, d in 1usize..4) {
        let mut cfg = SofterConfig::default_for(vec![r, r], d).unwrap();
        cfg.symmetry = Symmetry::Symmetric;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = SymmetricState::draw_prior(&cfg, 0, &mut rng).unwrap();
        let b = state.compose_b(&cfg).unwrap();
        for i in 0..r {
            prop_assert_eq!(b.values()[i * r + i].to_bits(), 0f64.to_bits());
            for j in 0..r {
                prop_assert_eq!(b.values()[i * r + j].to_bits(), b.values()[j * r + i].to_bits());
            }
        }
    }

    /// Selection rates stay inside [0, 1] and the confusion counts
    /// partition the entries.
    #[test]
    fn selection_rates_are_rates(
        truth_vals in prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 12),
        sel in prop::collection::vec(any::<bool>(), 12),
        zero_tol in 0.0f64..0.5,
    ) {
        let truth = DenseTensor::new(vec![3, 4], truth_vals).unwrap();
        let m = selection_metrics(&truth, &sel, zero_tol).unwrap();
        for rate in [m.sensitivity, m.specificity, m.fpr, m.fnr].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }

    /// Scale reduction is invariant under a shared affine map of all
    /// chains and never below its algebraic floor sqrt((n-1)/n).
    #[test]
    fn psrf_affine_invariant_and_bounded_below(
        seed in 0u64..1000,
        scale in prop_oneof![Just(-3.0f64), Just(0.5), Just(2.0)],
        shift in -10.0f64..10.0,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..40).map(|_| rng.random::<f64>()).collect())
            .collect();
        let r = psrf(&chains).unwrap();
        prop_assert!(r >= (39.0f64 / 40.0).sqrt() - 1e-12, "{}", r);
        let mapped: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|v| scale * v + shift).collect())
            .collect();
        let rm = psrf(&mapped).unwrap();
        prop_assert!((r - rm).abs() < 1e-9, "{} vs {}", r, rm);
    }

    /// Prior draws keep the component shares on the simplex and every
    /// variance positive, for any supported structure.
    #[test]
    fn prior_draws_satisfy_support_constraints(seed in 0u64..300, which in 0usize..3) {
        let (dims, sym) = match which {
            0 => (vec![3, 4], Symmetry::None),
            1 => (vec![4, 4], Symmetry::Symmetric),
            _ => (vec![3, 3, 2], Symmetry::SemiSymmetric),
        };
        let mut cfg = SofterConfig::default_for(dims, 2).unwrap();
        cfg.symmetry = sym;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sym {
            Symmetry::None => {
                let st = softer::model::ParameterState::draw_prior(&cfg, 1, &mut rng).unwrap();
                let total: f64 = st.zeta.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(st.zeta.iter().all(|&z| z > 0.0));
                prop_assert!(st.tau2 > 0.0 && st.tau_gamma > 0.0);
                prop_assert!(st.sigma2.iter().all(|&s| s > 0.0));
            }
            _ => {
                let st = SymmetricState::draw_prior(&cfg, 1, &mut rng).unwrap();
                let total: f64 = st.zeta.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(st.zeta.iter().all(|&z| z > 0.0));
                prop_assert!(st.tau2 > 0.0 && st.tau_gamma > 0.0);
                prop_assert!(st.sigma2.iter().all(|&s| s > 0.0));
            }
        }
    }
}
