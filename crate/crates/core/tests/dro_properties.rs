use drsf_core::dro::{
    solve_bounds, solve_bounds_mip, validate_bounds, worst_case_box_probability, ErrorSampleSet,
    SampleKind, WassersteinBall,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn scalar(v: &[f64]) -> ErrorSampleSet {
    ErrorSampleSet::scalar(SampleKind::Substation, v).unwrap()
}

#[test]
fn mip_and_enumeration_agree_on_random_scalar_instances() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for case in 0..100 {
        let n = rng.gen_range(1..=12);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps = if case % 4 == 0 {
            0.0
        } else {
            rng.gen_range(0.0..0.1)
        };
        let alpha = rng.gen_range(0.05..0.5);
        let ball = WassersteinBall::new(eps, alpha).unwrap();
        let s = scalar(&v);
        let exact = solve_bounds(&s, &ball).unwrap();
        let mip = solve_bounds_mip(&s, &ball).unwrap();
        assert!(
            (exact.width() - mip.width()).abs() < 1e-9,
            "case {case}: n {n}, eps {eps}, alpha {alpha}: {} vs {}",
            exact.width(),
            mip.width()
        );
        assert!(validate_bounds(&mip, &s, &ball).unwrap().pass);
    }
}

fn samples_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_never_rises_with_radius(
        v in samples_strategy(),
        lo in -1.2f64..0.0,
        hi in 0.0f64..1.2,
        e1 in 0.0f64..0.2,
        e2 in 0.0f64..0.2,
    ) {
        let s = scalar(&v);
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let p_small = worst_case_box_probability(&s, &WassersteinBall::new(small, 0.1).unwrap(), &[lo], &[hi]).unwrap();
        let p_large = worst_case_box_probability(&s, &WassersteinBall::new(large, 0.1).unwrap(), &[lo], &[hi]).unwrap();
        prop_assert!(p_large <= p_small + 1e-15);
    }

    #[test]
    fn scalar_width_grows_with_radius(v in samples_strategy(), e1 in 0.0f64..0.1, e2 in 0.0f64..0.1, alpha in 0.05f64..0.5) {
        let s = scalar(&v);
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let w_small = solve_bounds(&s, &WassersteinBall::new(small, alpha).unwrap()).unwrap().width();
        let w_large = solve_bounds(&s, &WassersteinBall::new(large, alpha).unwrap()).unwrap().width();
        prop_assert!(w_large >= w_small - 1e-12, "{} < {}", w_large, w_small);
    }

    #[test]
    fn scalar_width_shrinks_with_alpha(v in samples_strategy(), eps in 0.0f64..0.1, a1 in 0.05f64..0.6, a2 in 0.05f64..0.6) {
        let s = scalar(&v);
        let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let w_small = solve_bounds(&s, &WassersteinBall::new(eps, small).unwrap()).unwrap().width();
        let w_large = solve_bounds(&s, &WassersteinBall::new(eps, large).unwrap()).unwrap().width();
        prop_assert!(w_large <= w_small + 1e-12);
    }

    #[test]
    fn translation_leaves_coverage_unchanged(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..20),
        shift in prop::collection::vec(-2.0f64..2.0, 3),
        eps in 0.0f64..0.1,
    ) {
        let set = ErrorSampleSet::new(SampleKind::Voltage, rows).unwrap();
        let ball = WassersteinBall::new(eps, 0.2).unwrap();
        let lo = [-0.5, -0.7, -0.3];
        let hi = [0.6, 0.4, 0.9];
        let p = worst_case_box_probability(&set, &ball, &lo, &hi).unwrap();
        let moved = set.translated(&shift).unwrap();
        let lo2: Vec<f64> = lo.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let hi2: Vec<f64> = hi.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let q = worst_case_box_probability(&moved, &ball, &lo2, &hi2).unwrap();
        prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
    }

    #[test]
    fn solved_bounds_always_certify(v in samples_strategy(), eps in 0.0f64..0.1, alpha in 0.05f64..0.5) {
        let s = scalar(&v);
        let ball = WassersteinBall::new(eps, alpha).unwrap();
        let b = solve_bounds(&s, &ball).unwrap();
        prop_assert!(b.lower[0] <= 0.0 && b.upper[0] >= 0.0);
        prop_assert!(validate_bounds(&b, &s, &ball).unwrap().pass);
    }
}
