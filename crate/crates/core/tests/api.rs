use matern::analytics::{covariance_interference, interference_stats, poisson_baseline_correlation};
use matern::config::KeyValues;
use matern::pointprocess::{matern_thin, paired_thinnings, sample_ppp, Window};
use matern::retention::{hardcore_for_p1, p1, p11, p12, p12r};
use matern::{AnalyticsOptions, CurveSpec, ModelParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn thinning_is_hard_core_and_exact(seed in any::<u64>(), lambda in 0.2f64..3.0, d in 0.0f64..1.5) {
        let w = Window::new(5.0, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = sample_ppp(lambda, w, &mut rng).unwrap();
        let t = matern_thin(&pattern, d, pattern.marks()).unwrap();
        let (pts, marks) = (pattern.points(), pattern.marks());
        for i in 0..pts.len() {
            let killer = (0..pts.len()).any(|j| j != i && dist(pts[i], pts[j]) <= d && marks[j] < marks[i]);
            prop_assert_eq!(t.retained[i], !killer);
        }
        let kept: Vec<_> = t.retained_points().collect();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(d == 0.0 || dist(*a, *b) > d);
            }
        }
    }

    #[test]
    fn paired_thinnings_share_positions(seed in any::<u64>(), d in 0.1f64..1.0) {
        let w = Window::new(4.0, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = sample_ppp(1.0, w, &mut rng).unwrap();
        let (a, b) = paired_thinnings(&pattern, d, &mut rng).unwrap();
        prop_assert_eq!(a.parent.points(), b.parent.points());
        prop_assert_eq!(a.retained.len(), b.retained.len());
    }

    #[test]
    fn retention_ordering(lambda in 0.1f64..3.0, d in 0.05f64..2.0, k in 1.0f64..3.0) {
        let q = p1(lambda, d).unwrap();
        prop_assert!(q > 0.0 && q <= 1.0);
        prop_assert!(p1(lambda, d * 1.1).unwrap() < q);
        let both = p12(lambda, d).unwrap();
        prop_assert!(both > 0.0 && both <= q);
        let r = k * d;
        // Both probabilities may exceed p1² between d and 2d.
        let pair = p11(r, lambda, d).unwrap();
        prop_assert!((0.0..=q).contains(&pair));
        let cross = p12r(r, lambda, d).unwrap();
        prop_assert!((0.0..=q).contains(&cross));
    }

    #[test]
    fn hardcore_inverts_p1(lambda in 0.1f64..3.0, target in 0.05f64..0.99) {
        let d = hardcore_for_p1(lambda, target).unwrap();
        prop_assert!((p1(lambda, d).unwrap() - target).abs() < 1e-10);
    }

    #[test]
    fn poisson_baseline_is_bounded(q in 0.01f64..1.0, m in 0.5f64..100.0) {
        let rho = poisson_baseline_correlation(q, m).unwrap();
        prop_assert!(rho > 0.0 && rho < q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn correlation_is_a_correlation(lambda in 0.3f64..2.0, d in 0.2f64..1.5, alpha in 2.5f64..5.0, m in 0.5f64..10.0) {
        let p = ModelParams::new(lambda, d, alpha, m).unwrap();
        let s = interference_stats(&p, &AnalyticsOptions::default()).unwrap();
        prop_assert!(s.correlation.value > 0.0 && s.correlation.value < 1.0);
        prop_assert!(s.covariance.value < s.variance.value);
        let other = ModelParams::new(lambda, d, alpha, m + 1.0).unwrap();
        let opts = AnalyticsOptions::default();
        prop_assert_eq!(
            covariance_interference(&p, &opts).unwrap().value,
            covariance_interference(&other, &opts).unwrap().value
        );
    }
}

#[test]
fn presets_round_trip_through_csv_headers() {
    for name in ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6"] {
        let spec = CurveSpec::preset(name).unwrap();
        let data = matern::curve::evaluate(&spec).unwrap();
        assert!(data.failures.is_empty(), "{name}: {:?}", data.failures);
        let back = CurveSpec::from_config(&KeyValues::parse_header(&data.to_csv()).unwrap()).unwrap();
        assert_eq!(back, spec, "{name}");
    }
}
