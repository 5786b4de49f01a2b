//! Reruns with the same configuration must produce identical bytes, and the
//! configuration hash must follow content rather than formatting.

use dualem::output::scenario_csv;
use dualem::scenarios::{run_scenario, ScenarioKind};
use dualem::RunConfig;
use proptest::prelude::*;

#[test]
fn scenario_csv_is_bit_identical_across_reruns() {
    let cfg = RunConfig::default();
    for kind in [ScenarioKind::PlasticStack, ScenarioKind::CopperStack] {
        let a = scenario_csv(&run_scenario(kind, &cfg).unwrap()).unwrap();
        let b = scenario_csv(&run_scenario(kind, &cfg).unwrap()).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn scenario_csv_carries_provenance_and_a_fixed_header() {
    let cfg = RunConfig::default();
    let csv = scenario_csv(&run_scenario(ScenarioKind::PlasticStack, &cfg).unwrap()).unwrap();
    assert!(csv.contains(&format!("# config_sha256: {}", cfg.hash())));
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        body[0],
        "sweep_value,mode,re_V,im_V,C_m_F,V_normalized,flags"
    );
    assert_eq!(body.len(), 6);
}

#[test]
fn hash_ignores_formatting_but_not_values() {
    let a = RunConfig::from_toml("[geometry]\nw = 0.041\n", &[]).unwrap();
    let b = RunConfig::from_toml("# comment\n[geometry]\n  w   =   4.1e-2\n", &[]).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = RunConfig::from_toml("", &["geometry.w=0.042".to_string()]).unwrap();
    assert_ne!(a.hash(), c.hash());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_survives_a_toml_round_trip(w in 0.037f64..0.1, n in 1u32..20, eps in 1.0f64..100.0) {
        let overrides = vec![
            format!("geometry.w={w:e}"),
            format!("geometry.n1={n}"),
            format!("scenarios.plastic_stack.eps_r={eps:e}"),
        ];
        let cfg = RunConfig::from_toml("", &overrides).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        prop_assert_eq!(&cfg, &back);
        prop_assert_eq!(cfg.hash(), back.hash());
    }
}
