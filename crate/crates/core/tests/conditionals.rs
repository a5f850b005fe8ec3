use proptest::prelude::*;
use sace_core::design::build_designs;
use sace_core::model::{admissible_labels, ModelConfig, ModelVariant, StratumLabel};
use sace_core::oracle::{check_conditionals, tiny_instance, zero_disabled_effects, CheckKind};

const VARIANTS: [ModelVariant; 5] = [
    ModelVariant::M1,
    ModelVariant::M2,
    ModelVariant::M3,
    ModelVariant::M4,
    ModelVariant::A,
];

#[test]
fn every_variant_matches_oracle_on_fixed_instance() {
    let (data, full_state) = tiny_instance();
    let dm = build_designs(&data).unwrap();
    for v in VARIANTS {
        let config = ModelConfig::for_variant(v);
        let mut state = full_state.clone();
        zero_disabled_effects(&config, &mut state);
        let checks = check_conditionals(&dm, &config, &state).unwrap();
        let (p_c, p_cp, o_cp) = v.toggles();
        let expected_gauss = 6 + 2 * o_cp as usize + 2 * p_c as usize + 2 * p_cp as usize;
        let n_gauss = checks
            .iter()
            .filter(|c| c.kind == CheckKind::Gaussian)
            .count();
        assert_eq!(n_gauss, expected_gauss, "{v}");
        for c in &checks {
            assert!(c.rel_error < 1e-6, "{v}: {c:?}");
            if c.kind == CheckKind::InverseGamma {
                assert_eq!(c.formula_match, Some(true), "{v}: {c:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditionals_match_at_random_states(
        scale in 0.1f64..3.0,
        shift in -2.0f64..2.0,
        var_scale in 0.05f64..5.0,
        flips in proptest::collection::vec(any::<bool>(), 12),
        omega in proptest::collection::vec(0.01f64..2.0, 24),
    ) {
        let (data, mut state) = tiny_instance();
        let dm = build_designs(&data).unwrap();
        for v in [&mut state.theta_always, &mut state.theta_protected, &mut state.theta_z, &mut state.theta_w] {
            for (k, x) in v.iter_mut().enumerate() {
                *x = *x * scale + shift / (k + 1) as f64;
            }
        }
        for x in state.eta_z.iter_mut().chain(state.nu_w.iter_mut()).chain(state.xi_always.iter_mut()) {
            *x *= scale;
        }
        let vs = &mut state.variances;
        for x in [&mut vs.sigma2_always, &mut vs.sigma2_c_protected, &mut vs.tau2_cp_z, &mut vs.tau2_c_w] {
            *x *= var_scale;
        }
        state.omega_z.copy_from_slice(&omega[..12]);
        state.omega_w.copy_from_slice(&omega[12..]);
        for (r, ind) in data.individuals.iter().enumerate() {
            let (first, second) = admissible_labels(ind.treatment, ind.survived);
            state.labels[r] = match second {
                Some(s) if flips[r] => s,
                _ => first,
            };
        }
        let config = ModelConfig::for_variant(ModelVariant::A);
        for c in check_conditionals(&dm, &config, &state).unwrap() {
            prop_assert!(c.rel_error < 1e-6, "{:?}", c);
            prop_assert!(c.formula_match != Some(false), "{:?}", c);
        }
    }
}

#[test]
fn fixed_instance_has_both_outcome_strata() {
    let (_, state) = tiny_instance();
    assert!(state.labels.contains(&StratumLabel::AlwaysSurvivor));
    assert!(state.labels.contains(&StratumLabel::Protected));
    assert!(state.labels.contains(&StratumLabel::NeverSurvivor));
}
