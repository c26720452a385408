use defer_core::dm::constant_loss_predictions;
use defer_core::metrics::{deferral_rates, disparate_impact_hard, disparate_impact_soft, error_rate};
use defer_core::models::{
    apply_thresholds, loss_defer, loss_fair_binary, loss_fair_punt, loss_punt, loss_reject, ordinal_outputs, DiForm,
    Decision, ThresholdSet,
};
use proptest::prelude::*;

/// `(Y, A)` pairs with all four cells present, plus per-example probabilities.
fn instance(max: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<f64>, Vec<f64>)> {
    (4..max).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0.001f64..0.999, n),
            prop::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(|(mut y, mut a, p, g)| {
                y[..4].copy_from_slice(&[0, 0, 1, 1]);
                a[..4].copy_from_slice(&[0, 1, 0, 1]);
                (y, a, p, g)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn constant_loss_dm_makes_defer_equal_reject(
        (y, a, p, g) in instance(40),
        alpha in -3.0f64..-1e-3,
        gamma_reject in -2.0f64..2.0,
    ) {
        let dm = constant_loss_predictions(&y, alpha).unwrap();
        let reject = loss_reject(&y, &a, &p, &g, gamma_reject, 0.0).unwrap();
        let defer = loss_defer(&y, &a, &p, Some(&dm), &g, gamma_reject - alpha, 0.0, DiForm::SoftMean).unwrap();
        prop_assert!((defer - reject).abs() < 1e-9, "{defer} vs {reject}");
    }

    #[test]
    fn di_is_bounded_and_symmetric_in_groups((y, a, p, _) in instance(40)) {
        let di = disparate_impact_soft(&y, &a, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&di.di));
        let flipped: Vec<u8> = a.iter().map(|v| 1 - v).collect();
        let di2 = disparate_impact_soft(&y, &flipped, &p).unwrap();
        prop_assert!((di.di - di2.di).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_have_no_error_or_di((y, a, _, _) in instance(40)) {
        let p: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        prop_assert_eq!(error_rate(&y, &p).unwrap(), 0.0);
        prop_assert_eq!(disparate_impact_hard(&y, &a, &y).unwrap().di, 0.0);
    }

    #[test]
    fn fair_binary_loss_grows_with_alpha((y, a, p, _) in instance(40), lo in 0.0f64..2.0, step in 0.0f64..2.0) {
        let l0 = loss_fair_binary(&y, &a, &p, lo).unwrap();
        let l1 = loss_fair_binary(&y, &a, &p, lo + step).unwrap();
        prop_assert!(l1 >= l0 - 1e-12);
        prop_assert!(loss_fair_binary(&y, &a, &p, 0.0).unwrap() >= 0.0);
    }

    #[test]
    fn reject_loss_is_linear_in_gamma((y, a, p, g) in instance(30), g0 in -2.0f64..2.0, dg in -1.0f64..1.0) {
        let l0 = loss_reject(&y, &a, &p, &g, g0, 0.5).unwrap();
        let l1 = loss_reject(&y, &a, &p, &g, g0 + dg, 0.5).unwrap();
        let pass: f64 = g.iter().sum();
        prop_assert!((l1 - l0 + dg * pass).abs() < 1e-9);
    }

    #[test]
    fn ordinal_outputs_form_a_distribution(x in -20.0f64..20.0, t0 in -5.0f64..5.0, w in 0.0f64..5.0) {
        let o = ordinal_outputs(x, t0, t0 + w).unwrap();
        prop_assert!(o.p >= 0.0 && o.i >= 0.0 && o.n >= 0.0);
        prop_assert!((o.p + o.i + o.n - 1.0).abs() < 1e-12);
        let c = ordinal_outputs(x, t0, t0).unwrap();
        prop_assert_eq!(c.i, 0.0);
    }

    #[test]
    fn punt_loss_moves_monotonically_in_gamma(
        (y, a, _, _) in instance(20),
        xs in prop::collection::vec(-3.0f64..3.0, 20),
        g0 in 0.0f64..2.0,
        dg in 0.01f64..2.0,
    ) {
        let outs: Vec<_> = y.iter().zip(&xs).map(|(_, &x)| ordinal_outputs(x, -0.5, 0.5).unwrap()).collect();
        let lo = loss_punt(&y, &outs, g0).unwrap();
        let hi = loss_punt(&y, &outs, g0 + dg).unwrap();
        // Every band has I above the clamp floor, and the IDK term carries -ln I > 0.
        prop_assert!(hi < lo);
        let fair = loss_fair_punt(&y, &a, &outs, g0, 1.0).unwrap();
        prop_assert!(fair >= lo - 1e-12);
    }

    #[test]
    fn thresholds_partition_the_score_line(score in -3.0f64..3.0, t0 in -2.0f64..2.0, w in 0.0f64..2.0) {
        let set = ThresholdSet::shared(t0, t0 + w);
        let d = apply_thresholds(score, &set, 0).unwrap();
        let expected = if score <= t0 {
            Decision::Predict0
        } else if score >= t0 + w {
            Decision::Predict1
        } else {
            Decision::Pass
        };
        prop_assert_eq!(d, expected);
    }

    #[test]
    fn deferral_rate_is_the_mean_indicator((_, a, _, g) in instance(40)) {
        let s: Vec<u8> = g.iter().map(|&v| u8::from(v > 0.5)).collect();
        let r = deferral_rates(&s, &a, None).unwrap();
        let mean = s.iter().map(|&v| f64::from(v)).sum::<f64>() / s.len() as f64;
        prop_assert!((r.overall - mean).abs() < 1e-12);
        prop_assert!(r.per_group.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
