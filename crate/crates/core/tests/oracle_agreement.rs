use cvtp_core::ensemble::{conditional_moments, heralding_mutual_information};
use cvtp_core::model::{FilterSpec, PriorSpec, SurrogateParams};
use cvtp_core::oracle::{mc_ensemble, mc_point, mc_success_flag_mi, Estimator, OracleConfig};
use cvtp_core::profile::{evaluate_point, Protocol};
use cvtp_core::quadrature::QuadConfig;

fn protocol(g: f64, m_c: f64) -> Protocol {
    Protocol::new(SurrogateParams::reference(), FilterSpec::mbnla(g, m_c).unwrap()).unwrap()
}

/// Closed forms at the origin for (g, m_c) = (1.2, 3.0).
const P0: f64 = 0.0754558182020394;
const F0: f64 = 0.7619287255604367;

#[test]
fn point_at_origin_within_three_standard_errors() {
    let cfg = OracleConfig {
        seed: 2024,
        n_inner: 1_000_000,
        ..OracleConfig::default()
    };
    let est = mc_point(0.0, &protocol(1.2, 3.0), &cfg).unwrap();
    assert!((est.p_succ - P0).abs() < 3.0 * est.p_err, "{est:?}");
    assert!((est.f - F0).abs() < 3.0 * est.f_err, "{est:?}");
}

#[test]
fn ratio_bias_below_standard_error() {
    let proto = protocol(1.2, 3.0);
    for n_inner in [100_000, 1_000_000] {
        let est = mc_point(0.0, &proto, &OracleConfig { seed: 77, n_inner, ..OracleConfig::default() }).unwrap();
        assert!((est.f - F0).abs() < 3.0 * est.f_err, "n_inner = {n_inner}: {est:?}");
    }
}

#[test]
fn estimators_agree_and_brute_is_noisier() {
    let proto = protocol(1.4, 2.2);
    let quad = QuadConfig::default();
    for r in [0.0, 1.5, 2.5] {
        let base = OracleConfig { seed: 31, n_inner: 200_000, ..OracleConfig::default() };
        let rb = mc_point(r, &proto, &base).unwrap();
        let fb = mc_point(r, &proto, &OracleConfig { estimator: Estimator::FullBrute, ..base }).unwrap();
        let combined = rb.f_err.hypot(fb.f_err);
        assert!((rb.f - fb.f).abs() < 3.0 * combined, "r = {r}: {rb:?} vs {fb:?}");
        assert!(fb.f_err > rb.f_err && fb.p_err > rb.p_err);
        let exact = evaluate_point(r, &proto, &quad);
        assert!((rb.f - exact.fidelity()).abs() < 3.0 * rb.f_err);
        assert!((rb.p_succ - exact.p_succ()).abs() < 3.0 * rb.p_err);
    }
}

#[test]
fn ensemble_triple_matches_quadrature() {
    let proto = protocol(1.2, 3.0);
    let prior = PriorSpec::default();
    let cfg = OracleConfig { seed: 4242, ..OracleConfig::default() };
    let mc = mc_ensemble(&proto, &prior, &cfg).unwrap();
    let quad = conditional_moments(&proto, &prior, &QuadConfig::default()).unwrap();
    assert!((mc.merit.f - quad.f).abs() < 3.0 * mc.errors.f, "{mc:?} vs {quad:?}");
    assert!((mc.merit.p_succ - quad.p_succ).abs() < 3.0 * mc.errors.p_succ, "{mc:?} vs {quad:?}");
    assert!((mc.merit.d - quad.d).abs() < 3.0 * mc.errors.d, "{mc:?} vs {quad:?}");
}

#[test]
fn accept_all_ensemble_is_flat() {
    let proto = Protocol::accept_all(SurrogateParams::reference());
    let cfg = OracleConfig { seed: 8, n_outer: 500, n_inner: 4000, ..OracleConfig::default() };
    let mc = mc_ensemble(&proto, &PriorSpec::default(), &cfg).unwrap();
    assert_eq!(mc.merit.p_succ, 1.0);
    assert!((mc.merit.f - 0.78125).abs() < 3.0 * mc.errors.f);
    assert!(mc.merit.d < 1.5 * mc.inner_noise_floor, "{mc:?}");
}

#[test]
fn bootstrap_coverage_over_seeds() {
    let proto = protocol(1.4, 2.2);
    let prior = PriorSpec::default();
    let truth = conditional_moments(&proto, &prior, &QuadConfig::default()).unwrap();
    let mut covered_f = 0;
    let mut covered_p = 0;
    for seed in 0..20 {
        let cfg = OracleConfig { seed, n_outer: 300, n_inner: 2000, bootstrap_resamples: 100, ..OracleConfig::default() };
        let mc = mc_ensemble(&proto, &prior, &cfg).unwrap();
        covered_f += usize::from((mc.merit.f - truth.f).abs() < 3.0 * mc.errors.f);
        covered_p += usize::from((mc.merit.p_succ - truth.p_succ).abs() < 3.0 * mc.errors.p_succ);
    }
    assert!(covered_f >= 18 && covered_p >= 18, "coverage F {covered_f}/20, P {covered_p}/20");
}

#[test]
fn flag_information_matches_quadrature() {
    let proto = protocol(1.6, 1.8);
    let prior = PriorSpec::default();
    let quad = heralding_mutual_information(&proto, &prior, &QuadConfig::default()).unwrap();
    let cfg = OracleConfig { seed: 5, n_outer: 400_000, ..OracleConfig::default() };
    let mc = mc_success_flag_mi(&proto, &prior, &cfg, 40).unwrap();
    assert!(mc > 0.0);
    assert!((mc / quad - 1.0).abs() < 0.2, "mc {mc} vs quadrature {quad}");

    let control = Protocol::accept_all(SurrogateParams::reference());
    let none = mc_success_flag_mi(&control, &prior, &cfg, 40).unwrap();
    assert_eq!(none, 0.0);
}
