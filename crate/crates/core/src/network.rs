//! Grid data model: buses, Π-model lines, the native JSON case format and
//! the bus admittance matrix.
//!
//! Buses are identified by contiguous ids `1..=N` in file order. The ids used
//! in the source file are kept in [`NetworkCase::external_ids`] for reporting.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Contiguous id in `1..=N`.
    pub id: usize,
    pub kind: BusKind,
    /// Scheduled active injection, generation positive.
    pub p_sched: f64,
    pub q_sched: f64,
    /// Voltage magnitude setpoint; present on slack and PV buses only.
    pub v_setpoint: Option<f64>,
    /// Passive shunt admittance connected directly to the bus.
    pub shunt: Complex64,
}

/// Π-model line with an optional off-nominal tap ratio on the `from` side.
///
/// With `tap = t` the branch stamps `(y + y_sh)/t²` at `from`, `y + y_sh` at
/// `to` and `-y/t` off the diagonal. `t = 1` is the plain Π-model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePi {
    pub from: usize,
    pub to: usize,
    pub series: Complex64,
    /// Shunt admittance attached at each end.
    pub end_shunt: Complex64,
    pub tap: f64,
}

impl LinePi {
    pub fn has_tap(&self) -> bool {
        self.tap != 1.0
    }
}

/// A line looked up by an ordered endpoint pair. `from`/`to` follow the
/// requested orientation, which may be the reverse of the stored line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LineRef {
    pub from: usize,
    pub to: usize,
    pub index: usize,
}

impl LineRef {
    pub fn reversed(&self) -> LineRef {
        LineRef { from: self.to, to: self.from, index: self.index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<LinePi>,
    /// Bus ids as they appeared in the source file, indexed by `id - 1`.
    pub external_ids: Vec<i64>,
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .expect("validated case has a slack bus")
    }

    pub fn check_bus(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.buses.len() {
            return Err(Error::UnknownBus(m));
        }
        Ok(())
    }

    /// Resolves the ordered pair `(m, n)`; either orientation of a stored
    /// line is accepted.
    pub fn line_ref(&self, m: usize, n: usize) -> Result<LineRef> {
        self.lines
            .iter()
            .position(|l| (l.from == m && l.to == n) || (l.from == n && l.to == m))
            .map(|index| LineRef { from: m, to: n, index })
            .ok_or(Error::UnknownLine(m, n))
    }

    /// All lines in their stored orientation, sorted by `(from, to)`.
    pub fn line_refs(&self) -> Vec<LineRef> {
        let mut refs: Vec<LineRef> = self
            .lines
            .iter()
            .enumerate()
            .map(|(index, l)| LineRef { from: l.from, to: l.to, index })
            .collect();
        refs.sort();
        refs
    }

    pub fn line(&self, r: &LineRef) -> &LinePi {
        &self.lines[r.index]
    }

    /// Coefficients `(c_m, c_n)` with `I_(m,n) = c_m V_m + c_n V_n`.
    ///
    /// For a tap-free line this is `y_mn (V_m - V_n) + y_sh V_m`.
    pub fn current_coefficients(&self, r: &LineRef) -> (Complex64, Complex64) {
        let line = self.line(r);
        let (y, sh, t) = (line.series, line.end_shunt, line.tap);
        if r.from == line.from {
            ((y + sh) / (t * t), -y / t)
        } else {
            (y + sh, -y / t)
        }
    }

    /// Copy of the case with all conductances (series and shunt) removed.
    pub fn lossless(&self) -> NetworkCase {
        let mut case = self.clone();
        for bus in &mut case.buses {
            bus.shunt = Complex64::new(0.0, bus.shunt.im);
        }
        for line in &mut case.lines {
            line.series = Complex64::new(0.0, line.series.im);
            line.end_shunt = Complex64::new(0.0, line.end_shunt.im);
        }
        case
    }

    /// Copy of the case with every ground path removed: no bus or end
    /// shunts and nominal tap ratios.
    pub fn shunt_free(&self) -> NetworkCase {
        let mut case = self.clone();
        for bus in &mut case.buses {
            bus.shunt = Complex64::new(0.0, 0.0);
        }
        for line in &mut case.lines {
            line.end_shunt = Complex64::new(0.0, 0.0);
            line.tap = 1.0;
        }
        case
    }

    /// Checks the structural invariants: one slack, valid setpoints, valid
    /// lines, no parallel lines and a connected graph.
    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        if self.external_ids.len() != n {
            return Err(Error::InvalidCase("external id map does not match bus count".into()));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!("base_mva must be positive, got {}", self.base_mva)));
        }
        let ext = |i: usize| self.external_ids[i - 1];
        let mut slacks = 0;
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i + 1 {
                return Err(Error::InvalidCase(format!("bus at position {} has id {}", i + 1, bus.id)));
            }
            if !(bus.p_sched.is_finite()
                && bus.q_sched.is_finite()
                && bus.shunt.re.is_finite()
                && bus.shunt.im.is_finite())
            {
                return Err(Error::InvalidCase(format!("bus {} has non-finite data", ext(bus.id))));
            }
            match bus.kind {
                BusKind::Slack | BusKind::PV => match bus.v_setpoint {
                    Some(v) if v.is_finite() && v > 0.0 => {}
                    Some(v) => {
                        return Err(Error::InvalidCase(format!(
                            "bus {} has non-positive voltage setpoint {v}",
                            ext(bus.id)
                        )))
                    }
                    None => {
                        return Err(Error::InvalidCase(format!(
                            "bus {} needs a voltage setpoint",
                            ext(bus.id)
                        )))
                    }
                },
                BusKind::PQ => {}
            }
            if bus.kind == BusKind::Slack {
                slacks += 1;
            }
        }
        match slacks {
            0 => return Err(Error::NoSlack),
            1 => {}
            k => return Err(Error::MultipleSlack(k)),
        }

        let mut seen = HashSet::new();
        for line in &self.lines {
            for end in [line.from, line.to] {
                if end == 0 || end > n {
                    return Err(Error::UnknownBus(end));
                }
            }
            let (f, t) = (ext(line.from), ext(line.to));
            if line.from == line.to {
                return Err(Error::InvalidCase(format!("line ({f},{t}) is a self-loop")));
            }
            let finite = [line.series.re, line.series.im, line.end_shunt.re, line.end_shunt.im, line.tap]
                .iter()
                .all(|x| x.is_finite());
            if !finite {
                return Err(Error::InvalidCase(format!("line ({f},{t}) has non-finite data")));
            }
            if line.series == Complex64::new(0.0, 0.0) {
                return Err(Error::ZeroSeriesAdmittance(f, t));
            }
            if line.tap <= 0.0 {
                return Err(Error::InvalidCase(format!("line ({f},{t}) has non-positive tap {}", line.tap)));
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                return Err(Error::DuplicateLine(f, t));
            }
        }

        let mut adjacency = vec![Vec::new(); n + 1];
        for line in &self.lines {
            adjacency[line.from].push(line.to);
            adjacency[line.to].push(line.from);
        }
        let mut visited = vec![false; n + 1];
        let mut queue = VecDeque::from([1usize]);
        visited[1] = true;
        while let Some(m) = queue.pop_front() {
            for &k in &adjacency[m] {
                if !visited[k] {
                    visited[k] = true;
                    queue.push_back(k);
                }
            }
        }
        if let Some(unreached) = (1..=n).find(|&m| !visited[m]) {
            return Err(Error::Disconnected(ext(unreached), ext(1)));
        }
        Ok(())
    }
}

/// Total shunt admittance `y_m` at bus `m`: the bus's own shunt plus the end
/// shunt of every incident line (divided by `t²` at a tapped `from` end).
pub fn bus_total_shunt(case: &NetworkCase, m: usize) -> Result<Complex64> {
    case.check_bus(m)?;
    let mut total = case.buses[m - 1].shunt;
    for line in &case.lines {
        if line.from == m {
            total += line.end_shunt / (line.tap * line.tap);
        } else if line.to == m {
            total += line.end_shunt;
        }
    }
    Ok(total)
}

/// Dense bus admittance matrix `Y = G + jB`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// True iff the network has a ground path (any nonzero total shunt or an
    /// off-nominal tap), which makes `Y` invertible.
    pub has_shunts: bool,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }
}

pub fn build_admittance(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut has_shunts = false;
    for bus in &case.buses {
        y[(bus.id - 1, bus.id - 1)] += bus.shunt;
    }
    for line in &case.lines {
        let (f, t) = (line.from - 1, line.to - 1);
        let tap = line.tap;
        y[(f, f)] += (line.series + line.end_shunt) / (tap * tap);
        y[(t, t)] += line.series + line.end_shunt;
        y[(f, t)] -= line.series / tap;
        y[(t, f)] -= line.series / tap;
        has_shunts |= line.has_tap();
    }
    for m in 1..=n {
        let total = bus_total_shunt(case, m).expect("bus ids are contiguous");
        has_shunts |= total != Complex64::new(0.0, 0.0);
    }
    let g = y.map(|z| z.re);
    let b = y.map(|z| z.im);
    AdmittanceMatrix { y, g, b, has_shunts }
}

// Native JSON case format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeCase {
    base_mva: f64,
    buses: Vec<NativeBus>,
    lines: Vec<NativeLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeBus {
    id: i64,
    kind: BusKind,
    p: f64,
    q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shunt_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shunt_b: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeLine {
    from: i64,
    to: i64,
    g: f64,
    b: f64,
    #[serde(default)]
    sh_g: f64,
    #[serde(default)]
    sh_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tap: Option<f64>,
}

/// Maps source-file bus ids to contiguous ids in file order.
pub(crate) struct IdMap {
    map: HashMap<i64, usize>,
}

impl IdMap {
    pub(crate) fn new(ids: &[i64]) -> Result<Self> {
        let mut map = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if map.insert(id, i + 1).is_some() {
                return Err(Error::InvalidCase(format!("duplicate bus id {id}")));
            }
        }
        Ok(IdMap { map })
    }

    pub(crate) fn get(&self, id: i64, location: &str) -> Result<usize> {
        self.map
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidCase(format!("{location} references unknown bus {id}")))
    }
}

/// Parses a native JSON case and returns the validated, re-indexed case.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let native: NativeCase = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let external_ids: Vec<i64> = native.buses.iter().map(|b| b.id).collect();
    let ids = IdMap::new(&external_ids)?;
    let buses = native
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| Bus {
            id: i + 1,
            kind: b.kind,
            p_sched: b.p,
            q_sched: b.q,
            v_setpoint: match b.kind {
                BusKind::PQ => None,
                _ => b.vm,
            },
            shunt: Complex64::new(b.shunt_g.unwrap_or(0.0), b.shunt_b.unwrap_or(0.0)),
        })
        .collect();
    let lines = native
        .lines
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let location = format!("lines[{k}]");
            Ok(LinePi {
                from: ids.get(l.from, &location)?,
                to: ids.get(l.to, &location)?,
                series: Complex64::new(l.g, l.b),
                end_shunt: Complex64::new(l.sh_g, l.sh_b),
                tap: l.tap.unwrap_or(1.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let case = NetworkCase { base_mva: native.base_mva, buses, lines, external_ids };
    case.validate()?;
    Ok(case)
}

/// Serializes a case to the native JSON format using its external bus ids.
pub fn to_native_json(case: &NetworkCase) -> String {
    let ext = |m: usize| case.external_ids[m - 1];
    let native = NativeCase {
        base_mva: case.base_mva,
        buses: case
            .buses
            .iter()
            .map(|b| NativeBus {
                id: ext(b.id),
                kind: b.kind,
                p: b.p_sched,
                q: b.q_sched,
                vm: b.v_setpoint,
                shunt_g: (b.shunt.re != 0.0).then_some(b.shunt.re),
                shunt_b: (b.shunt.im != 0.0).then_some(b.shunt.im),
            })
            .collect(),
        lines: case
            .lines
            .iter()
            .map(|l| NativeLine {
                from: ext(l.from),
                to: ext(l.to),
                g: l.series.re,
                b: l.series.im,
                sh_g: l.end_shunt.re,
                sh_b: l.end_shunt.im,
                tap: l.has_tap().then_some(l.tap),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&native).expect("case serializes")
}
