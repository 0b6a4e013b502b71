//! Power divider laws for AC networks.
//!
//! Line active and reactive flows are written as explicit functions of bus
//! P and Q injections through current-injection sensitivity factors. On top
//! of that the crate provides flow and loss allocation to injections,
//! approximation tiers down to the DC power flow, and the inverse problem of
//! choosing injections that realize prescribed line flows.

pub mod allocation;
pub mod divider;
pub mod error;
pub mod injections;
pub mod matpower;
pub mod network;
pub mod power_flow;
pub mod sensitivity;

pub use allocation::{allocate_flow, allocate_loss, decoupled_loss, line_loss, FlowAllocation, Target};
pub use divider::{divider_coefficients, line_flow_divider, ApproxTier, DividerCoefficients, Tier};
pub use error::{Error, Result};
pub use injections::{solve_targets, solve_targets_lossy, FlowTargetSet, InjectionSolution};
pub use matpower::parse_matpower;
pub use network::{build_admittance, parse_case, AdmittanceMatrix, Bus, BusKind, LinePi, LineRef, NetworkCase};
pub use power_flow::{solve_power_flow, OperatingPoint, SolveOptions};
pub use sensitivity::{LineSensitivity, SensitivityCache};
