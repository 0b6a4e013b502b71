//! Full Newton–Raphson AC power flow in polar coordinates, plus direct line
//! current and flow evaluation at a solved operating point.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_admittance, AdmittanceMatrix, BusKind, LineRef, NetworkCase};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Infinity-norm bound on the P/Q mismatch, per-unit.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tolerance: 1e-8, max_iterations: 50 }
    }
}

/// Solved voltage profile with the injections it implies.
///
/// `p` and `q` are evaluated from the solved voltages, so
/// `diag(V) (Y V)* = P + jQ` holds to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v_mag: Vec<f64>,
    /// Radians, slack bus at zero.
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl OperatingPoint {
    pub fn n_buses(&self) -> usize {
        self.v_mag.len()
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.theta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    /// Builds an operating point from voltages, computing the injections.
    pub fn from_voltages(y: &AdmittanceMatrix, v: &[Complex64]) -> Self {
        let s = injections(&y.y, v);
        OperatingPoint {
            v_mag: v.iter().map(|z| z.norm()).collect(),
            theta: v.iter().map(|z| z.arg()).collect(),
            p: s.iter().map(|z| z.re).collect(),
            q: s.iter().map(|z| z.im).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFlowRecord {
    pub line: LineRef,
    pub current: Complex64,
    /// `S_(m,n) = V_m I_(m,n)*`, measured at the `from` end of `line`.
    pub complex_flow: Complex64,
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter().zip(i.iter()).map(|(vk, ik)| vk * ik.conj()).collect()
}

/// `S = diag(V) (Y V)*`.
pub fn bus_injections(y: &AdmittanceMatrix, op: &OperatingPoint) -> Result<Vec<Complex64>> {
    if op.n_buses() != y.dim() {
        return Err(Error::DimensionMismatch { expected: y.dim(), actual: op.n_buses() });
    }
    Ok(injections(&y.y, &op.voltages()))
}

pub fn solve_power_flow(case: &NetworkCase, options: &SolveOptions) -> Result<OperatingPoint> {
    let y = build_admittance(case);
    solve_with_admittance(case, &y, options)
}

pub fn solve_with_admittance(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    options: &SolveOptions,
) -> Result<OperatingPoint> {
    let n = case.n_buses();
    let pv_pq: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.kind != BusKind::Slack)
        .map(|b| b.id - 1)
        .collect();
    let pq: Vec<usize> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::PQ)
        .map(|b| b.id - 1)
        .collect();
    let p_sched: Vec<f64> = case.buses.iter().map(|b| b.p_sched).collect();
    let q_sched: Vec<f64> = case.buses.iter().map(|b| b.q_sched).collect();

    let mut vm: Vec<f64> = case.buses.iter().map(|b| b.v_setpoint.unwrap_or(1.0)).collect();
    let mut va = vec![0.0; n];
    let (npv_pq, npq) = (pv_pq.len(), pq.len());
    let dim = npv_pq + npq;

    let mut iteration = 0;
    loop {
        let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let s = injections(&y.y, &v);
        let mut mismatch = DVector::<f64>::zeros(dim);
        for (k, &i) in pv_pq.iter().enumerate() {
            mismatch[k] = s[i].re - p_sched[i];
        }
        for (k, &i) in pq.iter().enumerate() {
            mismatch[npv_pq + k] = s[i].im - q_sched[i];
        }
        let norm = mismatch.amax();
        if !norm.is_finite() {
            return Err(Error::NonConvergence { iterations: iteration, mismatch: norm });
        }
        if norm <= options.tolerance {
            return Ok(OperatingPoint::from_voltages(y, &v));
        }
        if iteration >= options.max_iterations {
            return Err(Error::NonConvergence { iterations: iteration, mismatch: norm });
        }
        iteration += 1;

        let jac = jacobian(&y.y, &v, &pv_pq, &pq);
        let step = jac.lu().solve(&mismatch).ok_or(Error::SingularJacobian(iteration))?;
        for (k, &i) in pv_pq.iter().enumerate() {
            va[i] -= step[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] -= step[npv_pq + k];
        }
        if vm.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::NonConvergence { iterations: iteration, mismatch: norm });
        }
    }
}

/// Polar power-flow Jacobian restricted to the unknown angles (PV and PQ
/// buses) and magnitudes (PQ buses).
fn jacobian(y: &DMatrix<Complex64>, v: &[Complex64], pv_pq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let i_bus = y * &vv;
    let j = Complex64::new(0.0, 1.0);
    let v_norm: Vec<Complex64> = v.iter().map(|z| z / z.norm()).collect();

    // dS/dθ = j diag(V) conj(diag(I) - Y diag(V))
    // dS/d|V| = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    let mut ds_da = DMatrix::<Complex64>::zeros(n, n);
    let mut ds_dm = DMatrix::<Complex64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let mut a = -y[(r, c)] * v[c];
            let mut m = v[r] * (y[(r, c)] * v_norm[c]).conj();
            if r == c {
                a += i_bus[r];
                m += i_bus[r].conj() * v_norm[r];
            }
            ds_da[(r, c)] = j * v[r] * a.conj();
            ds_dm[(r, c)] = m;
        }
    }

    let (npv_pq, npq) = (pv_pq.len(), pq.len());
    let mut jac = DMatrix::<f64>::zeros(npv_pq + npq, npv_pq + npq);
    for (r, &i) in pv_pq.iter().enumerate() {
        for (c, &k) in pv_pq.iter().enumerate() {
            jac[(r, c)] = ds_da[(i, k)].re;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(r, npv_pq + c)] = ds_dm[(i, k)].re;
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pv_pq.iter().enumerate() {
            jac[(npv_pq + r, c)] = ds_da[(i, k)].im;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(npv_pq + r, npv_pq + c)] = ds_dm[(i, k)].im;
        }
    }
    jac
}

/// Current entering line `(m,n)` at end `m`.
pub fn line_current(case: &NetworkCase, op: &OperatingPoint, line: &LineRef) -> Complex64 {
    let (cm, cn) = case.current_coefficients(line);
    let vm = Complex64::from_polar(op.v_mag[line.from - 1], op.theta[line.from - 1]);
    let vn = Complex64::from_polar(op.v_mag[line.to - 1], op.theta[line.to - 1]);
    cm * vm + cn * vn
}

pub fn line_complex_flow(case: &NetworkCase, op: &OperatingPoint, line: &LineRef) -> LineFlowRecord {
    let current = line_current(case, op, line);
    let vm = Complex64::from_polar(op.v_mag[line.from - 1], op.theta[line.from - 1]);
    LineFlowRecord { line: *line, current, complex_flow: vm * current.conj() }
}

/// Case copy whose non-slack buses carry the given active injections; the
/// slack bus absorbs whatever mismatch the solved network implies.
pub fn with_active_injections(case: &NetworkCase, p: &[f64]) -> Result<NetworkCase> {
    if p.len() != case.n_buses() {
        return Err(Error::DimensionMismatch { expected: case.n_buses(), actual: p.len() });
    }
    let mut out = case.clone();
    for (bus, &pk) in out.buses.iter_mut().zip(p) {
        bus.p_sched = pk;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_case;

    fn no_load() -> NetworkCase {
        parse_case(
            r#"{"base_mva": 100, "buses": [
                {"id": 1, "kind": "slack", "p": 0, "q": 0, "vm": 1.0},
                {"id": 2, "kind": "pq", "p": 0, "q": 0},
                {"id": 3, "kind": "pq", "p": 0, "q": 0}
            ], "lines": [
                {"from": 1, "to": 2, "g": 2, "b": -20},
                {"from": 2, "to": 3, "g": 1, "b": -8},
                {"from": 1, "to": 3, "g": 1.5, "b": -12}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn no_load_network_is_flat() {
        let case = no_load();
        let op = solve_power_flow(&case, &SolveOptions::default()).unwrap();
        for k in 0..3 {
            assert_eq!(op.theta[k], 0.0);
            assert_eq!(op.v_mag[k], 1.0);
        }
        for r in case.line_refs() {
            assert_eq!(line_complex_flow(&case, &op, &r).complex_flow, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn equal_voltages_carry_no_current() {
        let case = no_load();
        let op = OperatingPoint { v_mag: vec![1.0; 3], theta: vec![0.0; 3], p: vec![0.0; 3], q: vec![0.0; 3] };
        let r = case.line_ref(1, 2).unwrap();
        assert_eq!(line_current(&case, &op, &r), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn reports_non_convergence() {
        let mut case = no_load();
        case.buses[2].p_sched = -50.0;
        let err = solve_power_flow(&case, &SolveOptions { tolerance: 1e-8, max_iterations: 10 });
        assert!(matches!(err, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn flat_start_injections_are_zero() {
        let case = no_load();
        let y = build_admittance(&case);
        let op = OperatingPoint { v_mag: vec![1.0; 3], theta: vec![0.0; 3], p: vec![0.0; 3], q: vec![0.0; 3] };
        for s in bus_injections(&y, &op).unwrap() {
            assert_eq!(s, Complex64::new(0.0, 0.0));
        }
    }
}
