mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use powerdiv::network::{bus_total_shunt, to_native_json};
use powerdiv::{build_admittance, parse_case, parse_matpower, NetworkCase};
use proptest::prelude::*;

use common::*;

/// Element-wise stamping oracle, written independently of `build_admittance`.
fn stamp_oracle(case: &NetworkCase) -> DMatrix<Complex64> {
    let n = case.n_buses();
    DMatrix::from_fn(n, n, |r, c| {
        let (m, k) = (r + 1, c + 1);
        if m == k {
            let mut acc = case.buses[r].shunt;
            for l in &case.lines {
                if l.from == m {
                    acc += (l.series + l.end_shunt) / (l.tap * l.tap);
                } else if l.to == m {
                    acc += l.series + l.end_shunt;
                }
            }
            acc
        } else {
            case.lines
                .iter()
                .filter(|l| (l.from == m && l.to == k) || (l.from == k && l.to == m))
                .map(|l| -l.series / l.tap)
                .sum()
        }
    })
}

fn shunt_oracle(case: &NetworkCase, m: usize) -> Complex64 {
    let mut total = case.buses[m - 1].shunt;
    for l in case.lines.iter().filter(|l| l.from == m || l.to == m) {
        total += l.end_shunt;
    }
    total
}

#[test]
fn example1_parses_with_expected_admittances() {
    let case = example1();
    assert_eq!(case.n_buses(), 3);
    assert_eq!(case.lines.len(), 3);
    let l12 = case.line(&case.line_ref(1, 2).unwrap());
    assert_eq!(l12.series, Complex64::new(1.3652, -11.6041));
    let y = build_admittance(&case);
    assert_eq!(y.y[(0, 1)], -Complex64::new(1.3652, -11.6041));
    assert!(y.has_shunts);
}

#[test]
fn example1_bus1_total_shunt() {
    let case = example1();
    let y1 = bus_total_shunt(&case, 1).unwrap();
    assert_abs_diff_eq!(y1.re, 0.0);
    assert_abs_diff_eq!(y1.im, 0.167, epsilon = 1e-12);
    assert!(bus_total_shunt(&case, 4).is_err());
}

#[test]
fn ieee14_native_and_matpower_agree() {
    let native = ieee14();
    let mp = fixture("ieee14.m");
    assert_eq!(native.n_buses(), 14);
    assert_eq!(native.lines.len(), 20);
    assert_eq!(mp.n_buses(), 14);
    assert_eq!(mp.lines.len(), 20);
    for (a, b) in native.buses.iter().zip(&mp.buses) {
        assert_eq!(a.kind, b.kind);
        assert_abs_diff_eq!(a.p_sched, b.p_sched, epsilon = 1e-12);
        assert_abs_diff_eq!(a.shunt.im, b.shunt.im, epsilon = 1e-12);
        assert_eq!(a.v_setpoint, b.v_setpoint);
    }
    for (a, b) in native.lines.iter().zip(&mp.lines) {
        assert_eq!((a.from, a.to, a.tap), (b.from, b.to, b.tap));
        assert!((a.series - b.series).norm() < 1e-9);
        assert!((a.end_shunt - b.end_shunt).norm() < 1e-12);
    }
}

#[test]
fn ieee14_admittance_matches_stamping_oracle() {
    let case = ieee14();
    let y = build_admittance(&case);
    let oracle = stamp_oracle(&case);
    assert!((&y.y - &oracle).norm() < 1e-12);
}

#[test]
fn shunt_free_two_bus_row_sums_vanish() {
    let case = parse_case(
        r#"{"base_mva": 100, "buses": [
            {"id": 1, "kind": "slack", "p": 0, "q": 0, "vm": 1.0},
            {"id": 2, "kind": "pq", "p": 0, "q": 0}],
        "lines": [{"from": 1, "to": 2, "g": 3.1, "b": -9.4}]}"#,
    )
    .unwrap();
    let y = build_admittance(&case);
    assert!(!y.has_shunts);
    for r in 0..2 {
        assert_eq!(y.y.row(r).sum(), Complex64::new(0.0, 0.0));
    }
}

#[test]
fn matpower_rejects_phase_shifter_in_fixture_text() {
    let text = std::fs::read_to_string(fixture_path("ieee14.m")).unwrap();
    let shifted = text.replacen("0.978\t0\t1", "0.978\t-3\t1", 1);
    assert_ne!(text, shifted);
    assert!(parse_matpower(&shifted).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn admittance_matches_stamping_oracle(case in arb_case(6, SHUNTED)) {
        let y = build_admittance(&case);
        prop_assert!((&y.y - stamp_oracle(&case)).norm() < 1e-12);
        prop_assert_eq!(&y.g, &y.y.map(|z| z.re));
        prop_assert_eq!(&y.b, &y.y.map(|z| z.im));
    }

    #[test]
    fn admittance_is_exactly_symmetric(case in arb_case(10, SHUNTED)) {
        let y = build_admittance(&case);
        prop_assert_eq!(&y.y, &y.y.transpose());
    }

    #[test]
    fn bus_total_shunt_matches_summation(case in arb_case(5, SHUNTED)) {
        for m in 1..=case.n_buses() {
            let got = bus_total_shunt(&case, m).unwrap();
            prop_assert!((got - shunt_oracle(&case, m)).norm() < 1e-14);
        }
    }

    #[test]
    fn shunt_free_rows_sum_to_zero(case in arb_case(10, SHUNT_FREE)) {
        let y = build_admittance(&case);
        prop_assert!(!y.has_shunts);
        let ones = DVector::from_element(case.n_buses(), Complex64::new(1.0, 0.0));
        let r = &y.y * ones;
        prop_assert!(r.iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn shunted_admittance_is_invertible(
        case in arb_case(10, SHUNTED),
        seed in proptest::collection::vec(arb_complex(1.0), 10),
    ) {
        let y = build_admittance(&case);
        prop_assert!(y.has_shunts);
        let rhs = DVector::from_iterator(case.n_buses(), seed.into_iter().take(case.n_buses()));
        let x = y.y.clone().lu().solve(&rhs).expect("nonsingular");
        prop_assert!((&y.y * x - rhs).camax() <= 1e-9);
    }

    #[test]
    fn native_round_trip(case in arb_case(10, SHUNTED)) {
        let text = to_native_json(&case);
        let back = parse_case(&text).unwrap();
        prop_assert_eq!(back, case);
    }
}
