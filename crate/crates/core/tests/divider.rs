mod common;

use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use powerdiv::divider::{
    approximation_report, dc_flow_from_alpha, dc_power_flow, divider_coefficients, exact_flow_pair, line_flow_divider,
    ApproxTier, Tier,
};
use powerdiv::network::LineRef;
use powerdiv::{NetworkCase, OperatingPoint, SensitivityCache};
use proptest::prelude::*;

use common::*;

fn flows(cache: &SensitivityCache, op: &OperatingPoint, m: usize, n: usize, tier: Tier) -> (f64, f64) {
    let s = cache.get_pair(m, n).unwrap();
    line_flow_divider(op, &divider_coefficients(op, &s, tier).unwrap()).unwrap()
}

#[test]
fn example1_exact_and_approximate_flows() {
    let case = example1();
    let op = solved(&case);
    let cache = SensitivityCache::new(case).unwrap();
    let (p, q) = flows(&cache, &op, 1, 3, Tier::Exact);
    assert_abs_diff_eq!(p, 1.54, epsilon = 5e-3);
    assert_abs_diff_eq!(q, 0.370, epsilon = 5e-3);
    let (p, q) = flows(&cache, &op, 1, 2, Tier::Lossless);
    assert_abs_diff_eq!(p, 0.0515, epsilon = 5e-4);
    assert_abs_diff_eq!(q, 0.0894, epsilon = 5e-4);
    let (p, q) = flows(&cache, &op, 2, 3, Tier::UnityMag);
    assert_abs_diff_eq!(p, 0.847, epsilon = 5e-4);
    assert_abs_diff_eq!(q, -0.0051, epsilon = 5e-4);
}

#[test]
fn example1_lossless_beats_dc_on_active_flow() {
    let case = example1();
    let op = solved(&case);
    let cache = SensitivityCache::new(case).unwrap();
    let rows = approximation_report(&cache, &op, &[ApproxTier::Divider(Tier::Lossless), ApproxTier::Dc]).unwrap();
    for pair in rows.chunks(2) {
        assert_eq!((pair[0].from, pair[0].to), (pair[1].from, pair[1].to));
        assert!(pair[0].p_abs_err <= pair[1].p_abs_err);
    }
}

#[test]
fn exact_only_report_has_zero_error() {
    let case = ieee14();
    let op = solved(&case);
    let cache = SensitivityCache::new(case).unwrap();
    let rows = approximation_report(&cache, &op, &[ApproxTier::Divider(Tier::Exact)]).unwrap();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert_eq!(r.p_abs_err, 0.0);
        assert_eq!(r.q_abs_err, Some(0.0));
    }
}

#[test]
fn dc_of_zero_injection_is_flat() {
    let case = example1();
    let dc = dc_power_flow(&case, &[0.0; 3]).unwrap();
    assert!(dc.theta_tilde.iter().all(|t| *t == 0.0));
    assert!(dc.flows.iter().all(|(_, f)| *f == 0.0));
}

/// Decoupled active flows stay within 10% where both line ends inject at a
/// power factor above 0.95.
#[test]
fn ieee14_decoupled_tier_at_high_power_factor() {
    let case = ieee14();
    let op = solved(&case);
    let cache = SensitivityCache::new(case).unwrap();
    let rows = approximation_report(&cache, &op, &[ApproxTier::Divider(Tier::Decoupled)]).unwrap();
    let checked: Vec<_> = rows.iter().filter(|r| r.end_power_factor.is_some_and(|pf| pf > 0.95)).collect();
    assert!(!checked.is_empty());
    for r in checked {
        assert!(r.p_rel_err < 0.10, "line ({},{}) error {:.3}", r.from, r.to, r.p_rel_err);
    }
}

fn lossless_shunt_free(case: &NetworkCase) -> NetworkCase {
    let mut out = case.lossless();
    for l in &mut out.lines {
        l.end_shunt = Complex64::new(0.0, 0.0);
    }
    for b in &mut out.buses {
        b.shunt = Complex64::new(0.0, 0.0);
    }
    out
}

fn scalar_exact(op: &OperatingPoint, alpha: &[f64], beta: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; alpha.len()];
    let mut v = vec![0.0; alpha.len()];
    for i in 0..alpha.len() {
        let t = op.theta[m - 1] - op.theta[i];
        let xi = t.cos() / op.v_mag[i];
        let psi = t.sin() / op.v_mag[i];
        u[i] = xi * alpha[i] + psi * beta[i];
        v[i] = psi * alpha[i] - xi * beta[i];
    }
    (u, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn exact_divider_equals_direct_flow((case, op) in arb_solved(10, SHUNTED)) {
        let cache = SensitivityCache::new(case.clone()).unwrap();
        for line in case.line_refs() {
            for r in [line, line.reversed()] {
                let ((dp, dq), (p, q)) = exact_flow_pair(&case, &op, &cache.get(&r).unwrap()).unwrap();
                prop_assert!((dp - p).abs() <= 1e-9 && (dq - q).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn exact_coefficients_match_scalar_construction((case, op) in arb_solved(8, SHUNTED)) {
        let cache = SensitivityCache::new(case.clone()).unwrap();
        for line in case.line_refs() {
            let s = cache.get(&line).unwrap();
            let c = divider_coefficients(&op, &s, Tier::Exact).unwrap();
            let (u, v) = scalar_exact(&op, &s.alpha, &s.beta, line.from);
            for i in 0..u.len() {
                prop_assert!((c.u[i] - u[i]).abs() <= 1e-12 && (c.v[i] - v[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn slack_angle_shift_leaves_flows(
        (case, op) in arb_solved(10, SHUNTED),
        shift in -3.0..3.0f64,
    ) {
        let cache = SensitivityCache::new(case.clone()).unwrap();
        let mut shifted = op.clone();
        for t in &mut shifted.theta {
            *t += shift;
        }
        for line in case.line_refs() {
            let s = cache.get(&line).unwrap();
            let a = line_flow_divider(&op, &divider_coefficients(&op, &s, Tier::Exact).unwrap()).unwrap();
            let b = line_flow_divider(&shifted, &divider_coefficients(&shifted, &s, Tier::Exact).unwrap()).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-10 && (a.1 - b.1).abs() <= 1e-10);
        }
    }

    #[test]
    fn unity_and_decoupled_tiers_by_scalar_loop((case, op) in arb_solved(8, SHUNTED)) {
        let cache = SensitivityCache::new(case.clone()).unwrap();
        for line in case.line_refs() {
            let s = cache.get(&line).unwrap();
            let unity = divider_coefficients(&op, &s, Tier::UnityMag).unwrap();
            let mut q_dec = 0.0;
            for i in 0..s.alpha.len() {
                let t = op.theta[line.from - 1] - op.theta[i];
                prop_assert!((unity.u[i] - s.alpha[i]).abs() <= 1e-12);
                prop_assert!((unity.v[i] - t * s.alpha[i]).abs() <= 1e-12);
                q_dec += s.alpha[i] * op.q[i];
            }
            let dec = divider_coefficients(&op, &s, Tier::Decoupled).unwrap();
            prop_assert_eq!(&dec.u, &s.alpha);
            prop_assert!(dec.v.iter().all(|v| *v == 0.0));
            let (_, q) = line_flow_divider(&op, &dec).unwrap();
            prop_assert!((q - q_dec).abs() <= 1e-14);
        }
    }

    #[test]
    fn dc_flows_from_alpha_chain(
        case in arb_case(10, SHUNT_FREE),
        injections in proptest::collection::vec(-1.0..1.0f64, 10),
    ) {
        let dc_case = lossless_shunt_free(&case);
        let n = dc_case.n_buses();
        let mut p: Vec<f64> = injections.into_iter().take(n).collect();
        p[0] = -p[1..].iter().sum::<f64>();
        let dc = dc_power_flow(&dc_case, &p).unwrap();
        let cache = SensitivityCache::new(dc_case).unwrap();
        for (line, flow) in &dc.flows {
            let s = cache.get(line).unwrap();
            prop_assert!((dc_flow_from_alpha(&s.alpha, &p) - flow).abs() <= 1e-9);
            let full: f64 = s.alpha.iter().zip(&p).map(|(a, pk)| a * pk).sum();
            prop_assert!((full - flow).abs() <= 1e-9);
        }
    }
}

#[test]
fn radial_dc_flow_is_injection_downstream() {
    let case = lossless_shunt_free(&example1());
    let mut radial = case.clone();
    radial.lines.retain(|l| !(l.from == 1 && l.to == 3));
    let dc = dc_power_flow(&radial, &[0.8, 0.2, -1.0]).unwrap();
    let flow = |m, n| dc.flows.iter().find(|(r, _)| *r == LineRef { from: m, to: n, index: r.index }).unwrap().1;
    assert_abs_diff_eq!(flow(1, 2), 0.8, epsilon = 1e-12);
    assert_abs_diff_eq!(flow(2, 3), 1.0, epsilon = 1e-12);
}
