use dchain::drift::{eval_mixed_drift, DriftKernel, MeanFieldHandle, MixtureWeight};
use dchain::measures::{bounded_lipschitz_distance, wasserstein1_1d, EmpiricalMeasure, TestFunctionFamily};
use dchain::oracle;
use dchain::paths::{read_container, write_container, ContainerHeader, ContainerKind, PathSet};
use proptest::prelude::*;

fn cloud(xs: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn w1_is_a_metric_on_samples(a in sample(), b in sample(), c in sample(), truncate in any::<bool>()) {
        let (a, b, c) = (cloud(&a), cloud(&b), cloud(&c));
        let ab = wasserstein1_1d(&a, &b, truncate).unwrap();
        let ba = wasserstein1_1d(&b, &a, truncate).unwrap();
        let ac = wasserstein1_1d(&a, &c, truncate).unwrap();
        let cb = wasserstein1_1d(&c, &b, truncate).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert_eq!(wasserstein1_1d(&a, &a, truncate).unwrap(), 0.0);
        if !truncate {
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn w1_of_a_shift_is_the_shift(a in sample(), h in -3.0f64..3.0) {
        let shifted: Vec<f64> = a.iter().map(|x| x + h).collect();
        let d = wasserstein1_1d(&cloud(&a), &cloud(&shifted), false).unwrap();
        prop_assert!((d - h.abs()).abs() <= 1e-12 * (1.0 + h.abs()) * 10.0);
    }

    #[test]
    fn bounded_lipschitz_below_truncated_w1(a in sample(), b in sample()) {
        let fam = TestFunctionFamily::standard(1);
        let (a, b) = (cloud(&a), cloud(&b));
        let bl = bounded_lipschitz_distance(&a, &b, &fam).unwrap();
        let w = wasserstein1_1d(&a, &b, false).unwrap();
        prop_assert!(bl >= 0.0);
        prop_assert!(bl <= w.min(2.0) + 1e-12);
    }

    #[test]
    fn joint_marginals_agree_under_projection(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..12), k in 1usize..3) {
        use dchain::chain::PathEnsemble;
        use dchain::measures::empirical_joint;
        let n = rows.len();
        let paths = PathSet::from_rows(rows, 0.5).unwrap();
        let ens = PathEnsemble { paths, seed: 0, wraparound: true };
        let k = k.min(n);
        let joint = empirical_joint(&ens, 0.5, k).unwrap();
        let one = empirical_joint(&ens, 0.5, 1).unwrap();
        for c in 0..k {
            let m = joint.marginal(c).unwrap();
            prop_assert_eq!(wasserstein1_1d(&m, &one, false).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_mixed_drift_is_explicit(x in -5.0f64..5.0, y in -5.0f64..5.0, u in 0.0f64..=1.0, cloud_pts in sample()) {
        let k = DriftKernel::linear_mean_revert();
        let m = cloud(&cloud_pts);
        let mean = m.mean(0);
        let law = MeanFieldHandle::sample_cloud(m, "prop").unwrap();
        let v = eval_mixed_drift(&k, 0.0, x, y, &law, MixtureWeight::new(u).unwrap()).unwrap();
        let expect = -(x - (u * y + (1.0 - u) * mean));
        prop_assert!((v - expect).abs() <= 1e-12 * (1.0 + expect.abs()) * 10.0);
        let chain = eval_mixed_drift(&k, 0.0, x, y, &law, MixtureWeight::new(1.0).unwrap()).unwrap();
        let field = eval_mixed_drift(&k, 0.0, x, y, &law, MixtureWeight::new(0.0).unwrap()).unwrap();
        prop_assert_eq!(chain, k.eval(0.0, x, y).unwrap());
        prop_assert!(v >= chain.min(field) - 1e-12 && v <= chain.max(field) + 1e-12);
    }

    #[test]
    fn kernels_respect_their_lipschitz_constant(
        ax in -2.0f64..2.0, ay in -2.0f64..2.0, c in -1.0f64..1.0,
        x0 in -4.0f64..4.0, y0 in -4.0f64..4.0, x1 in -4.0f64..4.0, y1 in -4.0f64..4.0,
    ) {
        for k in [DriftKernel::linear_mean_revert(), DriftKernel::linear_repulsive(), DriftKernel::affine(ax, ay, c).unwrap()] {
            let d = (k.eval(0.0, x0, y0).unwrap() - k.eval(0.0, x1, y1).unwrap()).abs();
            prop_assert!(d <= k.lipschitz_constant() * ((x0 - x1).abs() + (y0 - y1).abs()) * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn container_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..6), seed in any::<u64>()) {
        let paths = PathSet::from_rows(rows, 0.25).unwrap();
        let header = ContainerHeader { kind: ContainerKind::Law, seed, wraparound: false, generation: 3, closure: "bm".into() };
        let mut buf = Vec::new();
        write_container(&mut buf, &header, &paths).unwrap();
        let (h, p) = read_container(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(p.data(), paths.data());
    }

    #[test]
    fn variance_u_nondecreasing_in_time(u in 0.0f64..=1.0, t in 0.0f64..8.0, h in 0.01f64..2.0) {
        let a = oracle::variance_u(t, u).unwrap().value;
        let b = oracle::variance_u(t + h, u).unwrap().value;
        prop_assert!(b >= a - 1e-9);
    }

    #[test]
    fn bessel_bounds(x in 0.0f64..60.0) {
        let i0 = oracle::bessel_i_scaled(0, x).unwrap();
        let i1 = oracle::bessel_i_scaled(1, x).unwrap();
        prop_assert!(i0 * x.exp() >= 1.0 - 1e-12 || x > 700.0);
        prop_assert!(i1 >= 0.0 && i1 <= i0);
    }

    #[test]
    fn taboo_mass_is_exponential(u in 0.0f64..=1.0, t in 0.0f64..10.0) {
        let total: f64 = (0..200).map(|k| oracle::taboo_kernel(k, t, u).unwrap()).sum();
        prop_assert!((total - (-(1.0 - u) * t).exp()).abs() <= 1e-12);
    }

    #[test]
    fn discrete_routes_agree(n in 0u64..40, a in 0.05f64..0.95, u in 0.0f64..=1.0) {
        let e = oracle::discrete_second_moment(n, a, u).unwrap();
        let h = oracle::discrete_second_moment_hypergeometric(n, a, u).unwrap();
        prop_assert!((e - h).abs() <= 1e-9 * e.max(1.0));
    }
}
