use proptest::prelude::*;
use sace_core::estimands::{hpd_interval, strata_proportions};
use sace_core::math::{expit, log1pexp, log_sum_exp};
use sace_core::model::StratumLabel;
use sace_core::oracle::{hpd_exhaustive, interval_mass};
use sace_core::simulate::{correlations_from_variances, variances_from_correlations};

proptest! {
    #[test]
    fn hpd_matches_exhaustive_search(
        draws in proptest::collection::vec(-50.0f64..50.0, 50..300),
        mass in 0.5f64..0.99,
    ) {
        let got = hpd_interval(&draws, mass).unwrap();
        let want = hpd_exhaustive(&draws, mass);
        prop_assert_eq!(got, want);
        prop_assert!(interval_mass(&draws, got) >= mass - 1e-12);
    }

    #[test]
    fn hpd_with_heavy_ties(
        draws in proptest::collection::vec(0u8..5, 50..200),
    ) {
        let draws: Vec<f64> = draws.into_iter().map(f64::from).collect();
        prop_assert_eq!(hpd_interval(&draws, 0.9).unwrap(), hpd_exhaustive(&draws, 0.9));
    }

    #[test]
    fn hpd_is_translation_equivariant(
        draws in proptest::collection::vec(-1.0f64..1.0, 60..120),
        shift in -4.0f64..4.0,
    ) {
        let shift = shift.round();
        let (lo, hi) = hpd_interval(&draws, 0.8).unwrap();
        let moved: Vec<f64> = draws.iter().map(|x| x + shift).collect();
        let (lo2, hi2) = hpd_interval(&moved, 0.8).unwrap();
        prop_assert!((lo2 - lo - shift).abs() < 1e-12 && (hi2 - hi - shift).abs() < 1e-12);
    }

    #[test]
    fn correlation_algebra_round_trips(
        err in 0.1f64..5.0,
        bpc in 0.0f64..0.5,
        extra in 0.0f64..0.4,
    ) {
        let wpc = bpc + extra;
        let (c, cp) = variances_from_correlations(err, bpc, wpc).unwrap();
        let (b2, w2) = correlations_from_variances(c, cp, err);
        prop_assert!((b2 - bpc).abs() < 1e-12 && (w2 - wpc).abs() < 1e-12);
    }

    #[test]
    fn proportions_are_a_simplex(labels in proptest::collection::vec(0u8..3, 1..500)) {
        let labels: Vec<StratumLabel> = labels
            .into_iter()
            .map(|k| match k {
                0 => StratumLabel::NeverSurvivor,
                1 => StratumLabel::Protected,
                _ => StratumLabel::AlwaysSurvivor,
            })
            .collect();
        let p = strata_proportions(&labels);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn logistic_identities(x in -700.0f64..700.0) {
        prop_assert!(log1pexp(x) >= x.max(0.0));
        prop_assert!((log1pexp(x) - log1pexp(-x) - x).abs() <= 1e-12 * x.abs().max(1.0));
        let e = expit(x);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((e + expit(-x) - 1.0).abs() < 1e-15);
        prop_assert!((log_sum_exp(&[x, 0.0]) - log1pexp(x)).abs() <= 1e-12 * x.abs().max(1.0));
    }
}
