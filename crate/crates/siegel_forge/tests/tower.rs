mod common;

use proptest::prelude::*;
use siegel_forge::chains::{is_circular_chain, winding_number, JordanPolyline};
use siegel_forge::tower::*;
use siegel_forge::C64;
use std::sync::OnceLock;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn tower() -> &'static TowerState {
    static T: OnceLock<TowerState> = OnceLock::new();
    T.get_or_init(common::best_effort_tower)
}

fn identity(qs: &[u64]) -> TowerState {
    let mut s = init_tower(1.0, qs[0]).unwrap();
    for q in &qs[1..] {
        s = append_level(&s, RenormLevel::identity(*q)).unwrap();
    }
    s
}

#[test]
fn identity_towers_are_translations() {
    let s = identity(&[5, 5, 7]);
    assert!(s.passed() || s.ledger.iter().skip(1).all(|l| l.failed() == vec![2]));
    for z in [c(0.2, -1.9), c(3.7, 0.0), c(-1.0, 4.0)] {
        assert!((eval_f(&s, 3, z).unwrap() - z - s.theta_partials[2]).norm() < 1e-11);
        assert!((vector_field(&s, 3, z).unwrap() - 1.0 / 175.0).norm() < 1e-15);
        assert!(conjugacy_residual(&s, 3, z).unwrap().norm() < 1e-11);
    }
    // straight chains are never crooked in one another
    assert!(!s.ledger[1].get(2).unwrap().passed);
}

#[test]
fn strict_advance_stops_at_choose_epsilon() {
    let base = init_tower(1.0, 5).unwrap();
    match advance_level(&base, None) {
        Err(TowerError::Stage { level: 2, stage, .. }) => assert_eq!(stage, "choose_epsilon"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn composition_derivative_matches_finite_differences() {
    let s = tower();
    for z in [c(0.13, 0.45), c(0.71, 0.9), c(-0.4, 1.6)] {
        let (_, d) = eval_s(s, 2, z).unwrap();
        let h = 1e-5;
        let fd = (eval_s(s, 2, z + h).unwrap().0 - eval_s(s, 2, z - h).unwrap().0) / (2.0 * h);
        assert!((fd - d).norm() <= 1e-6 * d.norm(), "{z}: {fd} vs {d}");
    }
    assert!(matches!(eval_s(s, 2, c(0.0, -1.0)), Err(TowerError::OutOfValidityStrip { level: 2, .. })));
    assert!(matches!(eval_s(s, 3, c(0.0, 1.0)), Err(TowerError::NoSuchLevel(3))));
}

#[test]
fn asymptotics_at_the_upper_end() {
    let s = tower();
    for x in [0.0, 0.3, 0.77] {
        let z = c(x, 10.0);
        assert!((vector_field(s, 2, z).unwrap() - 1.0 / 25.0).norm() < 1e-8);
        assert!((eval_f(s, 2, z).unwrap() - z - s.theta_partials[1]).norm() < 1e-6);
    }
}

#[test]
fn flow_escapes_below_the_certified_strip() {
    let s = tower();
    match flow_time1(s, 2, c(0.3, -1.5)) {
        Err(TowerError::DomainEscape { level: 2, t, .. }) => assert_eq!(t, 0.0),
        other => panic!("{other:?}"),
    }
    assert!(s.safety_floor[1] > 0.0 && s.safety_floor[1] < 0.3);
}

#[test]
fn pulled_back_chain_is_a_chain_with_winding_one() {
    let s = tower();
    let q2 = &s.chains[1];
    assert_eq!(q2.len(), 25);
    assert!(is_circular_chain(q2).0);
    // the curve Im S_2 = 1/2, pulled back
    let pts: Vec<C64> = (0..200).map(|i| inverse_s(s, 2, c(i as f64 / 8.0, 0.5)).unwrap()).collect();
    let curve = JordanPolyline::new(1, pts);
    assert_eq!(winding_number(&curve, q2).unwrap(), 1);
}

#[test]
fn state_json_round_trip_is_exact() {
    let s = tower();
    let text = s.to_json().unwrap();
    let back = TowerState::from_json(&text).unwrap();
    assert_eq!(&back, s);
    assert_eq!(back.to_json().unwrap(), text);
    assert!(TowerState::from_json("").is_err());
    assert!(TowerState::from_json(&text.replacen("\"version\": 1", "\"version\": 9", 1)).is_err());
}

#[test]
fn pipeline_record() {
    let s = tower();
    let st = &s.stages[0];
    assert_eq!(st.eps, 1.0);
    let errs: Vec<f64> = st.ladder.iter().map(|l| l.validation_error).collect();
    assert!(errs.windows(2).take(4).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(st.probe_residual <= 1e-10);
    assert!(s.ledger[1].provisional);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn deck_relations_on_the_certified_region(x in -3.0f64..3.0, y in 0.3f64..2.0) {
        let s = tower();
        let z = c(x, y);
        // B_2 acts on S_1(z) = 5z
        let w = 5.0 * z;
        let b = &s.levels[1].b;
        prop_assert!((b.eval_map(w + 1.0).unwrap() - b.eval_map(w).unwrap() - 1.0).norm() <= 1e-9);
        let (r1, _) = s.levels[1].eval(w + 1.0).unwrap();
        let (r0, _) = s.levels[1].eval(w).unwrap();
        prop_assert!((r1 - r0 - 5.0).norm() <= 1e-9);
        prop_assert!((vector_field(s, 2, z + 1.0).unwrap() - vector_field(s, 2, z).unwrap()).norm() <= 1e-12);
        let g = flow_time1(s, 2, z).unwrap();
        prop_assert!((flow_time1(s, 2, z + 1.0).unwrap() - g - 1.0).norm() <= 1e-10);
        prop_assert!((conjugated_translation(s, 2, z).unwrap() - g).norm() <= 1e-8);
    }
}
