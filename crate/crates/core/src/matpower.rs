//! Importer for MATPOWER-style `.m` case files.
//!
//! Reads `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch`; every other
//! field is ignored. Branches map onto the Π-model as `y = 1/(r + jx)` with
//! half the total line charging at each end. Off-nominal tap ratios are kept;
//! phase shifters are rejected.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{Bus, BusKind, IdMap, LinePi, NetworkCase};

const BUS_COLS: usize = 9;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

/// A numeric matrix block `mpc.<name> = [ ... ];` with the line number of
/// each row for error messages.
struct Block {
    rows: Vec<(usize, Vec<f64>)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    let value: f64 = match token {
        "Inf" | "inf" => f64::INFINITY,
        "-Inf" | "-inf" => f64::NEG_INFINITY,
        _ => token
            .parse()
            .map_err(|_| Error::parse(format!("line {line}"), format!("invalid number '{token}'")))?,
    };
    Ok(value)
}

/// Splits the file into scalar assignments and matrix blocks.
fn scan(text: &str) -> Result<(HashMap<String, f64>, HashMap<String, Block>)> {
    let mut scalars = HashMap::new();
    let mut blocks = HashMap::new();
    let mut current: Option<(String, Block)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }

        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, value)) = rest.split_once('=') else {
                return Err(Error::parse(format!("line {lineno}"), "expected assignment"));
            };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                current = Some((name, Block { rows: Vec::new() }));
                line = body;
            } else if value.starts_with('{') || value.starts_with('\'') || value.starts_with('"') {
                // cell arrays and strings (bus names, version) are not needed
                continue;
            } else {
                let value = value.trim_end_matches(';').trim();
                scalars.insert(name, parse_number(value, lineno)?);
                continue;
            }
        }

        let (name, block) = current.as_mut().expect("inside a block");
        let (body, closed) = match line.find(']') {
            Some(i) => (&line[..i], true),
            None => (line, false),
        };
        for row in body.split(';') {
            let values = row
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| parse_number(t, lineno))
                .collect::<Result<Vec<_>>>()?;
            if !values.is_empty() {
                block.rows.push((lineno, values));
            }
        }
        if closed {
            let (name, block) = current.take().expect("inside a block");
            blocks.insert(name, block);
        } else if line.contains('[') {
            return Err(Error::parse(format!("line {lineno}"), format!("nested '[' in mpc.{name}")));
        }
    }
    if let Some((name, _)) = current {
        return Err(Error::parse("end of file", format!("unterminated matrix mpc.{name}")));
    }
    Ok((scalars, blocks))
}

fn block<'a>(blocks: &'a HashMap<String, Block>, name: &str, cols: usize) -> Result<&'a Block> {
    let block = blocks
        .get(name)
        .ok_or_else(|| Error::parse("file", format!("missing mpc.{name}")))?;
    for (line, row) in &block.rows {
        if row.len() < cols {
            return Err(Error::parse(
                format!("line {line}"),
                format!("mpc.{name} row has {} columns, expected at least {cols}", row.len()),
            ));
        }
    }
    Ok(block)
}

fn as_id(value: f64, line: usize) -> Result<i64> {
    if value.fract() != 0.0 || !value.is_finite() || value.abs() > 1e15 {
        return Err(Error::parse(format!("line {line}"), format!("invalid bus number {value}")));
    }
    Ok(value as i64)
}

/// Parses a MATPOWER case file into a validated [`NetworkCase`] in per-unit.
pub fn parse_matpower(text: &str) -> Result<NetworkCase> {
    let (scalars, blocks) = scan(text)?;
    let base_mva = *scalars
        .get("baseMVA")
        .ok_or_else(|| Error::parse("file", "missing mpc.baseMVA"))?;
    if !(base_mva.is_finite() && base_mva > 0.0) {
        return Err(Error::InvalidCase(format!("baseMVA must be positive, got {base_mva}")));
    }

    let bus_block = block(&blocks, "bus", BUS_COLS)?;
    let gen_block = block(&blocks, "gen", GEN_COLS)?;
    let branch_block = block(&blocks, "branch", BRANCH_COLS)?;

    let external_ids = bus_block
        .rows
        .iter()
        .map(|(line, row)| as_id(row[0], *line))
        .collect::<Result<Vec<_>>>()?;
    let ids = IdMap::new(&external_ids)?;

    let mut buses = Vec::with_capacity(bus_block.rows.len());
    for (i, (line, row)) in bus_block.rows.iter().enumerate() {
        let kind = match row[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            4 => {
                return Err(Error::InvalidCase(format!(
                    "bus {} is isolated (type 4); remove it from the case",
                    external_ids[i]
                )))
            }
            t => return Err(Error::parse(format!("line {line}"), format!("unknown bus type {t}"))),
        };
        buses.push(Bus {
            id: i + 1,
            kind,
            p_sched: -row[2] / base_mva,
            q_sched: -row[3] / base_mva,
            v_setpoint: None,
            shunt: Complex64::new(row[4], row[5]) / base_mva,
        });
        if kind != BusKind::PQ {
            buses[i].v_setpoint = Some(row[7]);
        }
    }

    for (line, row) in &gen_block.rows {
        let status = row[7];
        if status <= 0.0 {
            continue;
        }
        let bus = ids.get(as_id(row[0], *line)?, &format!("gen at line {line}"))?;
        let b = &mut buses[bus - 1];
        b.p_sched += row[1] / base_mva;
        b.q_sched += row[2] / base_mva;
        if b.kind != BusKind::PQ {
            b.v_setpoint = Some(row[5]);
        }
    }

    let mut lines = Vec::with_capacity(branch_block.rows.len());
    for (line, row) in &branch_block.rows {
        if row[10] <= 0.0 {
            continue;
        }
        let location = format!("branch at line {line}");
        let from_ext = as_id(row[0], *line)?;
        let to_ext = as_id(row[1], *line)?;
        let (r, x, charging, ratio, shift) = (row[2], row[3], row[4], row[8], row[9]);
        if shift != 0.0 {
            return Err(Error::UnsupportedBranch {
                from: from_ext,
                to: to_ext,
                reason: format!("phase shift {shift} deg"),
            });
        }
        let impedance = Complex64::new(r, x);
        if impedance.norm() == 0.0 {
            return Err(Error::UnsupportedBranch {
                from: from_ext,
                to: to_ext,
                reason: "zero series impedance".into(),
            });
        }
        lines.push(LinePi {
            from: ids.get(from_ext, &location)?,
            to: ids.get(to_ext, &location)?,
            series: impedance.inv(),
            end_shunt: Complex64::new(0.0, charging / 2.0),
            tap: if ratio == 0.0 { 1.0 } else { ratio },
        });
    }

    let case = NetworkCase { base_mva, buses, lines, external_ids };
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE3: &str = "
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1.04\t0\t230\t1\t1.1\t0.9;
\t2\t2\t0\t0\t0\t0\t1\t1.025\t0\t230\t1\t1.1\t0.9;
\t3\t1\t235\t50\t0\t10\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t300\t-300\t1.04\t100\t1\t250\t10;
\t2\t79.1\t0\t300\t-300\t1.025\t100\t1\t300\t10;
];
mpc.branch = [
\t1\t2\t0.01\t0.085\t0.176\t250\t250\t250\t0\t0\t1\t-360\t360;
\t2\t3\t0.02\t0.16\t0.306\t250\t250\t250\t0\t0\t1\t-360\t360;
\t1\t3\t0.01\t0.092\t0.158\t250\t250\t250\t0.98\t0\t1\t-360\t360;
];
mpc.bus_name = { 'a'; 'b'; 'c' };
";

    #[test]
    fn imports_pi_model() {
        let case = parse_matpower(CASE3).unwrap();
        assert_eq!(case.n_buses(), 3);
        assert_eq!(case.lines.len(), 3);
        assert_eq!(case.buses[0].kind, BusKind::Slack);
        assert!((case.buses[1].p_sched - 0.791).abs() < 1e-15);
        assert!((case.buses[2].p_sched + 2.35).abs() < 1e-15);
        assert!((case.buses[2].shunt.im - 0.1).abs() < 1e-15);
        let y = Complex64::new(0.01, 0.085).inv();
        assert!((case.lines[0].series - y).norm() < 1e-15);
        assert_eq!(case.lines[0].end_shunt, Complex64::new(0.0, 0.088));
        assert_eq!(case.lines[0].tap, 1.0);
        assert_eq!(case.lines[2].tap, 0.98);
    }

    #[test]
    fn rejects_phase_shifter() {
        let text = CASE3.replace("0.98\t0\t1", "0.98\t5\t1");
        assert!(matches!(parse_matpower(&text), Err(Error::UnsupportedBranch { from: 1, to: 3, .. })));
    }

    #[test]
    fn skips_out_of_service_branch() {
        let text = CASE3.replace("0.01\t0.085\t0.176\t250\t250\t250\t0\t0\t1", "0.01\t0.085\t0.176\t250\t250\t250\t0\t0\t0");
        let case = parse_matpower(&text).unwrap();
        assert_eq!(case.lines.len(), 2);
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(parse_matpower("mpc.baseMVA = 100;\nmpc.bus = [\n1 3"), Err(Error::Parse { .. })));
        assert!(matches!(parse_matpower("mpc.baseMVA = abc;"), Err(Error::Parse { .. })));
        assert!(matches!(parse_matpower("mpc.baseMVA = 100;"), Err(Error::Parse { .. })));
        let short = CASE3.replace("\t1\t3\t0\t0\t0\t0\t1\t1.04\t0\t230\t1\t1.1\t0.9;", "\t1\t3\t0;");
        assert!(matches!(parse_matpower(&short), Err(Error::Parse { .. })));
    }
}
