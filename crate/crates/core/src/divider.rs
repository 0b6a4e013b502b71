//! Power divider laws and their approximation ladder.
//!
//! For line `(m,n)` with sensitivity `κ = α + jβ` and angle reference
//! `θ^m = θ_m 𝟙 − θ`:
//!
//! ```text
//! u = diag(cos θ^m / |V|) α + diag(sin θ^m / |V|) β
//! v = diag(sin θ^m / |V|) α − diag(cos θ^m / |V|) β
//! P_(m,n) = |V_m| (uᵀP − vᵀQ)
//! Q_(m,n) = |V_m| (uᵀQ + vᵀP)
//! ```
//!
//! Each approximate tier is built from its own formulas rather than by
//! editing the previous tier's output. All tiers take α from the exact
//! sensitivity; the lossless tier drops β.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{LineRef, NetworkCase};
use crate::power_flow::{line_complex_flow, OperatingPoint};
use crate::sensitivity::{LineSensitivity, SensitivityCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Exact,
    Lossless,
    SmallAngle,
    UnityMag,
    Decoupled,
}

impl Tier {
    pub const ALL: [Tier; 5] = [Tier::Exact, Tier::Lossless, Tier::SmallAngle, Tier::UnityMag, Tier::Decoupled];

    /// Whether the flow formulas carry the `|V_m|` prefactor.
    fn scales_by_vm(self) -> bool {
        matches!(self, Tier::Exact | Tier::Lossless | Tier::SmallAngle)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Exact => "exact",
            Tier::Lossless => "lossless",
            Tier::SmallAngle => "small-angle",
            Tier::UnityMag => "unity",
            Tier::Decoupled => "decoupled",
        })
    }
}

/// `θ^m = θ_m 𝟙 − θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleReference {
    pub m: usize,
    pub theta_m_vec: Vec<f64>,
}

impl AngleReference {
    pub fn new(op: &OperatingPoint, m: usize) -> Result<Self> {
        if m == 0 || m > op.n_buses() {
            return Err(Error::UnknownBus(m));
        }
        let reference = op.theta[m - 1];
        Ok(AngleReference { m, theta_m_vec: op.theta.iter().map(|t| reference - t).collect() })
    }

    /// `θ̃^m`: the reference vector with entry `m` removed.
    pub fn reduced(&self) -> Vec<f64> {
        self.theta_m_vec
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.m - 1)
            .map(|(_, &t)| t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DividerCoefficients {
    pub line: LineRef,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub tier: Tier,
}

pub fn divider_coefficients(op: &OperatingPoint, sens: &LineSensitivity, tier: Tier) -> Result<DividerCoefficients> {
    let n = op.n_buses();
    if sens.alpha.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: sens.alpha.len() });
    }
    let reference = AngleReference::new(op, sens.line.from)?;
    let angles = &reference.theta_m_vec;
    let (alpha, beta, vm) = (&sens.alpha, &sens.beta, &op.v_mag);

    let (u, v): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let (a, b, t, mag) = (alpha[i], beta[i], angles[i], vm[i]);
            match tier {
                Tier::Exact => {
                    let (xi, psi) = (t.cos() / mag, t.sin() / mag);
                    (xi * a + psi * b, psi * a - xi * b)
                }
                Tier::Lossless => (t.cos() / mag * a, t.sin() / mag * a),
                Tier::SmallAngle => (a / mag, t / mag * a),
                Tier::UnityMag => (a, t * a),
                Tier::Decoupled => (a, 0.0),
            }
        })
        .unzip();
    Ok(DividerCoefficients { line: sens.line, u, v, tier })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Line flow `(P_(m,n), Q_(m,n))` from the divider coefficients.
pub fn line_flow_divider(op: &OperatingPoint, coeffs: &DividerCoefficients) -> Result<(f64, f64)> {
    let n = op.n_buses();
    for len in [coeffs.u.len(), coeffs.v.len(), op.p.len(), op.q.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    let scale = if coeffs.tier.scales_by_vm() { op.v_mag[coeffs.line.from - 1] } else { 1.0 };
    let (u, v) = (&coeffs.u, &coeffs.v);
    let p = scale * (dot(u, &op.p) - dot(v, &op.q));
    let q = scale * (dot(u, &op.q) + dot(v, &op.p));
    Ok((p, q))
}

/// Small-angle line flow `-b_mn (θ_m − θ_n)` evaluated at the given angles.
pub fn dc_angle_flow(case: &NetworkCase, theta: &[f64], line: &LineRef) -> f64 {
    let b = case.line(line).series.im;
    -b * (theta[line.from - 1] - theta[line.to - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// `θ̃¹`: angles of buses `2..=N` relative to bus 1.
    pub theta_tilde: Vec<f64>,
    /// Full angle vector with `θ_1 = 0`.
    pub theta: Vec<f64>,
    pub flows: Vec<(LineRef, f64)>,
}

/// Reduced susceptance matrix `B̃` of the lossless shunt-free network, with
/// the row and column of bus 1 removed.
pub fn reduced_susceptance(case: &NetworkCase) -> DMatrix<f64> {
    let n = case.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for line in &case.lines {
        let (f, t, s) = (line.from - 1, line.to - 1, line.series.im);
        b[(f, f)] += s;
        b[(t, t)] += s;
        b[(f, t)] -= s;
        b[(t, f)] -= s;
    }
    b.remove_row(0).remove_column(0)
}

/// Classical DC power flow with bus 1 as slack: `θ̃¹ = −B̃⁻¹ P̃¹`, flows
/// `-b_mn (θ_m − θ_n)`.
///
/// Only `P̃¹` enters; the slack injection is implied as `−𝟙ᵀP̃¹`. Shunts,
/// conductances and tap ratios of `case` are ignored.
pub fn dc_power_flow(case: &NetworkCase, p: &[f64]) -> Result<DcSolution> {
    let n = case.n_buses();
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: p.len() });
    }
    let b_red = reduced_susceptance(case);
    let p_red = DVector::from_column_slice(&p[1..]);
    let solved = b_red
        .lu()
        .solve(&p_red)
        .ok_or_else(|| Error::Singular("reduced susceptance matrix".into()))?;
    let theta_tilde: Vec<f64> = solved.iter().map(|x| -x).collect();
    let mut theta = Vec::with_capacity(n);
    theta.push(0.0);
    theta.extend_from_slice(&theta_tilde);
    let flows = case.line_refs().into_iter().map(|r| (r, dc_angle_flow(case, &theta, &r))).collect();
    Ok(DcSolution { theta_tilde, theta, flows })
}

/// Decoupled active flow with the slack injection eliminated:
/// `(α̃ᵀ − α_1 𝟙ᵀ) P̃¹`.
pub fn dc_flow_from_alpha(alpha: &[f64], p: &[f64]) -> f64 {
    let a1 = alpha[0];
    alpha[1..].iter().zip(&p[1..]).map(|(a, pk)| (a - a1) * pk).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxTier {
    Divider(Tier),
    /// `-b_mn (θ_m − θ_n)` at the operating point's angles.
    Dc,
}

impl fmt::Display for ApproxTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxTier::Divider(t) => t.fmt(f),
            ApproxTier::Dc => f.write_str("dc"),
        }
    }
}

impl FromStr for ApproxTier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "exact" => ApproxTier::Divider(Tier::Exact),
            "lossless" => ApproxTier::Divider(Tier::Lossless),
            "small-angle" => ApproxTier::Divider(Tier::SmallAngle),
            "unity" => ApproxTier::Divider(Tier::UnityMag),
            "decoupled" => ApproxTier::Divider(Tier::Decoupled),
            "dc" => ApproxTier::Dc,
            other => return Err(format!("unknown tier '{other}'")),
        })
    }
}

impl ApproxTier {
    pub const TABLE: [ApproxTier; 5] = [
        ApproxTier::Divider(Tier::Exact),
        ApproxTier::Divider(Tier::Lossless),
        ApproxTier::Divider(Tier::SmallAngle),
        ApproxTier::Divider(Tier::UnityMag),
        ApproxTier::Dc,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub from: usize,
    pub to: usize,
    pub tier: ApproxTier,
    pub p: f64,
    /// Absent for the DC tier.
    pub q: Option<f64>,
    pub p_abs_err: f64,
    pub p_rel_err: f64,
    pub q_abs_err: Option<f64>,
    pub q_rel_err: Option<f64>,
    /// Smaller of the injection power factors `|P|/|S|` at the two line
    /// ends; `None` when either end has no injection.
    pub end_power_factor: Option<f64>,
}

fn rel(err: f64, exact: f64) -> f64 {
    if exact == 0.0 {
        if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        err / exact.abs()
    }
}

/// Injection power factor `|P_i| / |S_i|`, or `None` for a zero injection.
pub fn injection_power_factor(op: &OperatingPoint, bus: usize) -> Option<f64> {
    let (p, q) = (op.p[bus - 1], op.q[bus - 1]);
    let s = p.hypot(q);
    (s > 1e-9).then(|| p.abs() / s)
}

/// Per-line flows for each requested tier next to the exact flow, with
/// absolute and relative errors. Rows are grouped by line (sorted by
/// `(from, to)`) in the order of `tiers`.
pub fn approximation_report(
    cache: &SensitivityCache,
    op: &OperatingPoint,
    tiers: &[ApproxTier],
) -> Result<Vec<ReportRow>> {
    let case = cache.case();
    let mut rows = Vec::new();
    for line in case.line_refs() {
        let sens = cache.get(&line)?;
        let exact = line_flow_divider(op, &divider_coefficients(op, &sens, Tier::Exact)?)?;
        let pf = match (injection_power_factor(op, line.from), injection_power_factor(op, line.to)) {
            (Some(a), Some(b)) => Some(a.min(b)),
            _ => None,
        };
        for &tier in tiers {
            let (p, q) = match tier {
                ApproxTier::Divider(t) => {
                    let (p, q) = line_flow_divider(op, &divider_coefficients(op, &sens, t)?)?;
                    (p, Some(q))
                }
                ApproxTier::Dc => (dc_angle_flow(case, &op.theta, &line), None),
            };
            let p_abs = (p - exact.0).abs();
            let q_abs = q.map(|q| (q - exact.1).abs());
            rows.push(ReportRow {
                from: line.from,
                to: line.to,
                tier,
                p,
                q,
                p_abs_err: p_abs,
                p_rel_err: rel(p_abs, exact.0),
                q_abs_err: q_abs,
                q_rel_err: q_abs.map(|e| rel(e, exact.1)),
                end_power_factor: pf,
            });
        }
    }
    Ok(rows)
}

/// Direct and divider-law flows for a line, for cross-checking.
pub fn exact_flow_pair(
    case: &NetworkCase,
    op: &OperatingPoint,
    sens: &LineSensitivity,
) -> Result<((f64, f64), (f64, f64))> {
    let divider = line_flow_divider(op, &divider_coefficients(op, sens, Tier::Exact)?)?;
    let direct = line_complex_flow(case, op, &sens.line).complex_flow;
    Ok((divider, (direct.re, direct.im)))
}
