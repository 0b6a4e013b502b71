//! Attribution of line flows and line losses to bus injections.
//!
//! Each share is one scalar term of the exact divider decomposition divided
//! by the target quantity, so the `2N` shares of a line sum to one. Shares
//! are signed; a negative share is a counter-flow contribution.

use num_complex::Complex64;
use serde::Serialize;

use crate::divider::{line_flow_divider, DividerCoefficients, Tier};
use crate::error::{Error, Result};
use crate::network::{LineRef, NetworkCase};
use crate::power_flow::OperatingPoint;
use crate::sensitivity::LineSensitivity;

/// Allocation is refused when the target magnitude is below this, in p.u.
pub const MIN_TARGET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Active,
    Reactive,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusShare {
    pub bus: usize,
    /// Share from the bus's active injection (1.0 = 100%).
    pub from_p: f64,
    pub from_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowAllocation {
    #[serde(skip)]
    pub line: LineRef,
    pub target: Target,
    /// The allocated quantity: `P_(m,n)`, `Q_(m,n)` or `L_(m,n)`.
    pub value: f64,
    pub per_bus: Vec<BusShare>,
}

impl FlowAllocation {
    pub fn total_share(&self) -> f64 {
        self.per_bus.iter().map(|s| s.from_p + s.from_q).sum()
    }
}

fn require_exact(coeffs: &DividerCoefficients) -> Result<()> {
    if coeffs.tier != Tier::Exact {
        return Err(Error::Precondition(format!("allocation needs exact coefficients, got {}", coeffs.tier)));
    }
    Ok(())
}

fn refuse_if_small(value: f64, what: &str, line: &LineRef) -> Result<()> {
    if !(value.abs() >= MIN_TARGET) {
        return Err(Error::AllocationRefused(format!(
            "{what} on line ({},{}) is {value:.3e} p.u., below {MIN_TARGET:e}",
            line.from, line.to
        )));
    }
    Ok(())
}

/// Shares of `P_(m,n)` (or `Q_(m,n)`) contributed by each bus's P and Q
/// injection.
pub fn allocate_flow(op: &OperatingPoint, coeffs: &DividerCoefficients, which: Target) -> Result<FlowAllocation> {
    require_exact(coeffs)?;
    let (p_flow, q_flow) = line_flow_divider(op, coeffs)?;
    let vm = op.v_mag[coeffs.line.from - 1];
    let value = match which {
        Target::Active => p_flow,
        Target::Reactive => q_flow,
        Target::Loss => return Err(Error::Precondition("use allocate_loss for loss targets".into())),
    };
    let label = if which == Target::Active { "active flow" } else { "reactive flow" };
    refuse_if_small(value, label, &coeffs.line)?;

    let per_bus = (0..op.n_buses())
        .map(|i| {
            let (u, v, p, q) = (coeffs.u[i], coeffs.v[i], op.p[i], op.q[i]);
            let (from_p, from_q) = match which {
                Target::Active => (vm * u * p / value, -vm * v * q / value),
                _ => (vm * v * p / value, vm * u * q / value),
            };
            BusShare { bus: i + 1, from_p, from_q }
        })
        .collect();
    Ok(FlowAllocation { line: coeffs.line, target: which, value, per_bus })
}

/// Series resistive loss `Re{(V_m/t − V_n) y* (V_m/t − V_n)*}`, with `t`
/// the tap ratio at the line's stored `from` end.
pub fn line_loss(case: &NetworkCase, op: &OperatingPoint, line: &LineRef) -> f64 {
    let stored = case.line(line);
    let volt = |k: usize| Complex64::from_polar(op.v_mag[k - 1], op.theta[k - 1]);
    let drop = volt(stored.from) / stored.tap - volt(stored.to);
    (drop * stored.series.conj() * drop.conj()).re
}

/// True when the line's end shunts are purely imaginary, which is what makes
/// `L_(m,n) = P_(m,n) + P_(n,m)` hold.
pub fn loss_identity_holds(case: &NetworkCase, line: &LineRef) -> bool {
    case.line(line).end_shunt.re == 0.0
}

/// Shares of `L_(m,n)` contributed by each bus's P and Q injection, from the
/// exact coefficients of both orientations.
pub fn allocate_loss(
    case: &NetworkCase,
    op: &OperatingPoint,
    coeffs_mn: &DividerCoefficients,
    coeffs_nm: &DividerCoefficients,
) -> Result<FlowAllocation> {
    require_exact(coeffs_mn)?;
    require_exact(coeffs_nm)?;
    let line = coeffs_mn.line;
    if coeffs_nm.line != line.reversed() {
        return Err(Error::Precondition(format!(
            "coefficients are for ({},{}) and ({},{}), not opposite ends of one line",
            line.from, line.to, coeffs_nm.line.from, coeffs_nm.line.to
        )));
    }
    if !loss_identity_holds(case, &line) {
        return Err(Error::AllocationRefused(format!(
            "line ({},{}) has resistive end shunts; the loss is not P_(m,n) + P_(n,m)",
            line.from, line.to
        )));
    }
    let loss = line_loss(case, op, &line);
    refuse_if_small(loss, "loss", &line)?;

    let vm = op.v_mag[line.from - 1];
    let vn = op.v_mag[line.to - 1];
    let per_bus = (0..op.n_buses())
        .map(|i| {
            let u = vm * coeffs_mn.u[i] + vn * coeffs_nm.u[i];
            let v = vm * coeffs_mn.v[i] + vn * coeffs_nm.v[i];
            BusShare { bus: i + 1, from_p: u * op.p[i] / loss, from_q: -v * op.q[i] / loss }
        })
        .collect();
    Ok(FlowAllocation { line, target: Target::Loss, value: loss, per_bus })
}

/// Decoupled loss estimate `(α_(m,n) + α_(n,m))ᵀ P`.
pub fn decoupled_loss(sens_mn: &LineSensitivity, sens_nm: &LineSensitivity, p: &[f64]) -> Result<f64> {
    let n = p.len();
    for len in [sens_mn.alpha.len(), sens_nm.alpha.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    Ok(sens_mn.alpha.iter().zip(&sens_nm.alpha).zip(p).map(|((a, b), pk)| (a + b) * pk).sum())
}
