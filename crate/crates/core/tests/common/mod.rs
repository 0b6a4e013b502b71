#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use powerdiv::network::{Bus, BusKind, LinePi, NetworkCase};
use powerdiv::{parse_case, parse_matpower, solve_power_flow, OperatingPoint, SolveOptions};
use proptest::prelude::*;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> NetworkCase {
    let text = std::fs::read_to_string(fixture_path(name)).expect("fixture readable");
    if name.ends_with(".m") {
        parse_matpower(&text).expect("fixture parses")
    } else {
        parse_case(&text).expect("fixture parses")
    }
}

pub fn example1() -> NetworkCase {
    fixture("example1.json")
}

pub fn ieee14() -> NetworkCase {
    fixture("ieee14.json")
}

pub fn solved(case: &NetworkCase) -> OperatingPoint {
    solve_power_flow(case, &SolveOptions::default()).expect("fixture solves")
}

#[derive(Debug, Clone, Copy)]
pub struct ShuntMode {
    pub line_shunts: bool,
    pub bus_shunts: bool,
    pub lossless: bool,
}

pub const SHUNTED: ShuntMode = ShuntMode { line_shunts: true, bus_shunts: true, lossless: false };
pub const SHUNT_FREE: ShuntMode = ShuntMode { line_shunts: false, bus_shunts: false, lossless: false };

/// Random connected case: a spanning tree plus a few chords, bus 1 slack,
/// light loading so the flat-start Newton solve converges.
pub fn arb_case(max_n: usize, mode: ShuntMode) -> impl Strategy<Value = NetworkCase> {
    (2..=max_n).prop_flat_map(move |n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let chords = proptest::collection::vec((0..n, 0..n), 0..n);
        let line_params = proptest::collection::vec((0.2..4.0f64, -25.0..-3.0f64, 0.0..0.15f64), 2 * n);
        let bus_params = proptest::collection::vec(
            (-0.4..0.4f64, -0.2..0.2f64, 0.97..1.05f64, 0..3u8, -0.05..0.2f64),
            n,
        );
        (Just(n), parents, chords, line_params, bus_params).prop_map(move |(n, parents, chords, lp, bp)| {
            let mut pairs: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (p, i + 1)).collect();
            for (a, b) in chords {
                let key = (a.min(b), a.max(b));
                if a != b && !pairs.iter().any(|&(x, y)| (x.min(y), x.max(y)) == key) {
                    pairs.push((a, b));
                }
            }
            let lines = pairs
                .iter()
                .zip(&lp)
                .map(|(&(a, b), &(g, bs, sh))| LinePi {
                    from: a + 1,
                    to: b + 1,
                    series: Complex64::new(if mode.lossless { 0.0 } else { g }, bs),
                    end_shunt: Complex64::new(0.0, if mode.line_shunts { sh } else { 0.0 }),
                    tap: 1.0,
                })
                .collect();
            let buses = bp
                .iter()
                .enumerate()
                .map(|(i, &(p, q, vm, kind, bsh))| {
                    let kind = match (i, kind) {
                        (0, _) => BusKind::Slack,
                        (_, 0) => BusKind::PV,
                        _ => BusKind::PQ,
                    };
                    Bus {
                        id: i + 1,
                        kind,
                        p_sched: p,
                        q_sched: q,
                        v_setpoint: (kind != BusKind::PQ).then_some(vm),
                        shunt: Complex64::new(0.0, if mode.bus_shunts { bsh } else { 0.0 }),
                    }
                })
                .collect();
            NetworkCase { base_mva: 100.0, buses, lines, external_ids: (1..=n as i64).collect() }
        })
    })
}

/// Random case together with its solved operating point; cases whose Newton
/// solve fails are rejected.
pub fn arb_solved(max_n: usize, mode: ShuntMode) -> impl Strategy<Value = (NetworkCase, OperatingPoint)> {
    arb_case(max_n, mode).prop_filter_map("power flow did not converge", |case| {
        let op = solve_power_flow(&case, &SolveOptions::default()).ok()?;
        Some((case, op))
    })
}

pub fn arb_complex(scale: f64) -> impl Strategy<Value = Complex64> {
    (-scale..scale, -scale..scale).prop_map(|(re, im)| Complex64::new(re, im))
}
