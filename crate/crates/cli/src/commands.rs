use std::path::Path;

use log::warn;
use powerdiv::allocation::{allocate_flow, allocate_loss, line_loss, FlowAllocation, Target};
use powerdiv::divider::{approximation_report, divider_coefficients, ApproxTier, ReportRow, Tier};
use powerdiv::injections::{
    estimate_line_losses, flow_error, histogram, perturbation_experiment, realized_flows, solve_targets,
    solve_targets_lossy, ExperimentConfig, FlowTargetSet,
};
use powerdiv::network::LineRef;
use powerdiv::power_flow::line_complex_flow;
use powerdiv::sensitivity::Basis;
use powerdiv::{NetworkCase, OperatingPoint, SensitivityCache, SolveOptions};

use crate::error::CliError;
use crate::report::{Cell, Report, Table};

/// Everything a subcommand needs about the loaded case.
pub struct Context {
    pub case: NetworkCase,
    pub options: SolveOptions,
    /// Multiplier for power quantities on output: 1 for per-unit, the case
    /// base for MW/MVAr.
    pub power_scale: f64,
}

impl Context {
    fn ext(&self, bus: usize) -> i64 {
        self.case.external_ids[bus - 1]
    }

    fn internal(&self, ext: i64) -> Result<usize, CliError> {
        self.case
            .external_ids
            .iter()
            .position(|&id| id == ext)
            .map(|i| i + 1)
            .ok_or_else(|| CliError::Usage(format!("bus {ext} is not in the case")))
    }

    pub fn line(&self, pair: (i64, i64)) -> Result<LineRef, CliError> {
        let (m, n) = (self.internal(pair.0)?, self.internal(pair.1)?);
        self.case
            .line_ref(m, n)
            .map_err(|_| CliError::Usage(format!("no line between buses {} and {}", pair.0, pair.1)))
    }

    fn solve(&self) -> Result<OperatingPoint, CliError> {
        Ok(powerdiv::solve_power_flow(&self.case, &self.options)?)
    }

    fn cache(&self) -> Result<SensitivityCache, CliError> {
        Ok(SensitivityCache::new(self.case.clone())?)
    }

    fn power(&self, x: f64) -> Cell {
        Cell::Num(x * self.power_scale)
    }

    fn unit(&self) -> &'static str {
        if self.power_scale == 1.0 {
            "p.u."
        } else {
            "MW/MVAr"
        }
    }
}

pub fn solve(ctx: &Context) -> Result<Report, CliError> {
    let op = ctx.solve()?;
    let mut report = Report::new("solve");
    report.summary.push(("power_unit", ctx.unit().into()));
    report.summary.push(("total_loss", ctx.power(op.p.iter().sum())));

    let mut buses = Table::new("buses", &["bus", "vm", "theta_deg", "p", "q"]);
    for k in 0..op.n_buses() {
        buses.push(vec![
            ctx.ext(k + 1).into(),
            op.v_mag[k].into(),
            op.theta[k].to_degrees().into(),
            ctx.power(op.p[k]),
            ctx.power(op.q[k]),
        ]);
    }
    let mut lines = Table::new("lines", &["from", "to", "p_from", "q_from", "p_to", "q_to", "loss"]);
    for line in ctx.case.line_refs() {
        let fwd = line_complex_flow(&ctx.case, &op, &line).complex_flow;
        let bwd = line_complex_flow(&ctx.case, &op, &line.reversed()).complex_flow;
        lines.push(vec![
            ctx.ext(line.from).into(),
            ctx.ext(line.to).into(),
            ctx.power(fwd.re),
            ctx.power(fwd.im),
            ctx.power(bwd.re),
            ctx.power(bwd.im),
            ctx.power(line_loss(&ctx.case, &op, &line)),
        ]);
    }
    report.tables = vec![buses, lines];
    Ok(report)
}

pub enum SensitivitySelection {
    Line((i64, i64)),
    All,
}

pub fn sensitivity(ctx: &Context, selection: SensitivitySelection) -> Result<Report, CliError> {
    let cache = ctx.cache()?;
    let mut report = Report::new("sensitivity");
    match selection {
        SensitivitySelection::Line(pair) => {
            let s = cache.get(&ctx.line(pair)?)?;
            report.summary.push(("line", format!("{},{}", pair.0, pair.1).into()));
            let basis = match s.basis {
                Basis::Inverse => "inverse",
                Basis::Pseudoinverse => "pseudoinverse",
            };
            report.summary.push(("basis", basis.into()));
            let mut table = Table::new("kappa", &["bus", "alpha", "beta"]);
            for (k, z) in s.kappa.iter().enumerate() {
                table.push(vec![ctx.ext(k + 1).into(), z.re.into(), z.im.into()]);
            }
            report.tables.push(table);
        }
        SensitivitySelection::All => {
            let lines = ctx.case.line_refs();
            let a = cache.alpha_matrix(&lines)?;
            let mut table = Table::new("alpha", &["line"]);
            table.columns.extend(ctx.case.external_ids.iter().map(|id| id.to_string()));
            for (r, line) in lines.iter().enumerate() {
                let mut row: Vec<Cell> = vec![format!("{}-{}", ctx.ext(line.from), ctx.ext(line.to)).into()];
                row.extend(a.row(r).iter().map(|&x| Cell::Num(x)));
                table.push(row);
            }
            report.tables.push(table);
        }
    }
    Ok(report)
}

fn report_table(ctx: &Context, rows: &[ReportRow]) -> Table {
    let mut table = Table::new(
        "flows",
        &["from", "to", "tier", "p", "q", "p_abs_err", "p_rel_err", "q_abs_err", "q_rel_err", "end_power_factor"],
    );
    for r in rows {
        table.push(vec![
            ctx.ext(r.from).into(),
            ctx.ext(r.to).into(),
            r.tier.to_string().into(),
            ctx.power(r.p),
            r.q.map_or(Cell::Empty, |q| ctx.power(q)),
            ctx.power(r.p_abs_err),
            r.p_rel_err.into(),
            r.q_abs_err.map_or(Cell::Empty, |e| ctx.power(e)),
            r.q_rel_err.into(),
            r.end_power_factor.into(),
        ]);
    }
    table
}

pub enum DividerSelection {
    Line((i64, i64), ApproxTier),
    Table,
}

pub fn divider(ctx: &Context, selection: DividerSelection) -> Result<Report, CliError> {
    let op = ctx.solve()?;
    let cache = ctx.cache()?;
    let mut report = Report::new("divider");
    report.summary.push(("power_unit", ctx.unit().into()));
    let rows = match selection {
        DividerSelection::Table => approximation_report(&cache, &op, &ApproxTier::TABLE)?,
        DividerSelection::Line(pair, tier) => {
            let line = ctx.line(pair)?;
            let stored = ctx.case.line(&line);
            let rows = approximation_report(&cache, &op, &[tier])?;
            let mut row = rows
                .into_iter()
                .find(|r| r.from == stored.from && r.to == stored.to)
                .expect("report covers every line");
            if line.from != stored.from {
                // report rows use the stored orientation; recompute for the
                // requested one
                row = oriented_row(ctx, &op, &line, tier)?;
            }
            vec![row]
        }
    };
    report.tables.push(report_table(ctx, &rows));
    Ok(report)
}

fn oriented_row(
    ctx: &Context,
    op: &OperatingPoint,
    line: &LineRef,
    tier: ApproxTier,
) -> Result<ReportRow, CliError> {
    let mut swapped = ctx.case.clone();
    let stored = &mut swapped.lines[line.index];
    if stored.has_tap() {
        return Err(CliError::Usage(format!(
            "line ({},{}) has a tap on the other end; request it as ({},{})",
            ctx.ext(line.from),
            ctx.ext(line.to),
            ctx.ext(line.to),
            ctx.ext(line.from)
        )));
    }
    std::mem::swap(&mut stored.from, &mut stored.to);
    let swapped_cache = SensitivityCache::new(swapped)?;
    let rows = approximation_report(&swapped_cache, op, &[tier])?;
    Ok(rows.into_iter().find(|r| r.from == line.from && r.to == line.to).expect("report covers every line"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TargetArg {
    P,
    Q,
    Loss,
}

pub enum AllocateSelection {
    Line((i64, i64)),
    AllLines,
}

fn allocation(
    ctx: &Context,
    cache: &SensitivityCache,
    op: &OperatingPoint,
    line: &LineRef,
    target: TargetArg,
) -> Result<FlowAllocation, CliError> {
    let mn = divider_coefficients(op, &*cache.get(line)?, Tier::Exact)?;
    Ok(match target {
        TargetArg::P => allocate_flow(op, &mn, Target::Active)?,
        TargetArg::Q => allocate_flow(op, &mn, Target::Reactive)?,
        TargetArg::Loss => {
            let nm = divider_coefficients(op, &*cache.get(&line.reversed())?, Tier::Exact)?;
            allocate_loss(&ctx.case, op, &mn, &nm)?
        }
    })
}

pub fn allocate(ctx: &Context, selection: AllocateSelection, target: TargetArg) -> Result<Report, CliError> {
    let op = ctx.solve()?;
    let cache = ctx.cache()?;
    let mut report = Report::new("allocate");
    match selection {
        AllocateSelection::Line(pair) => {
            let line = ctx.line(pair)?;
            let alloc = allocation(ctx, &cache, &op, &line, target)?;
            report.summary.push(("line", format!("{},{}", pair.0, pair.1).into()));
            report.summary.push(("value", ctx.power(alloc.value)));
            let mut table = Table::new("shares", &["bus", "from_p_pct", "from_q_pct"]);
            for s in &alloc.per_bus {
                table.push(vec![ctx.ext(s.bus).into(), (100.0 * s.from_p).into(), (100.0 * s.from_q).into()]);
            }
            report.tables.push(table);
        }
        AllocateSelection::AllLines => {
            let mut table = Table::new("shares", &["from", "to", "value", "bus", "from_p_pct", "from_q_pct"]);
            let mut refused = Table::new("refused", &["from", "to", "reason"]);
            for line in ctx.case.line_refs() {
                match allocation(ctx, &cache, &op, &line, target) {
                    Ok(alloc) => {
                        for s in &alloc.per_bus {
                            table.push(vec![
                                ctx.ext(line.from).into(),
                                ctx.ext(line.to).into(),
                                ctx.power(alloc.value),
                                ctx.ext(s.bus).into(),
                                (100.0 * s.from_p).into(),
                                (100.0 * s.from_q).into(),
                            ]);
                        }
                    }
                    Err(CliError::Library(e @ powerdiv::Error::AllocationRefused(_))) => {
                        warn!("{e}");
                        refused.push(vec![ctx.ext(line.from).into(), ctx.ext(line.to).into(), e.to_string().into()]);
                    }
                    Err(e) => return Err(e),
                }
            }
            report.tables.push(table);
            if !refused.rows.is_empty() {
                report.tables.push(refused);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossModel {
    Lossy,
    Lossless,
}

#[derive(Debug, serde::Deserialize)]
struct TargetRecord {
    from: i64,
    to: i64,
    p_ref: f64,
}

pub fn read_targets(path: &Path) -> Result<Vec<(i64, i64, f64)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, record) in reader.deserialize::<TargetRecord>().enumerate() {
        let r = record.map_err(|e| CliError::Parse(format!("{} record {}: {e}", path.display(), k + 1)))?;
        out.push((r.from, r.to, r.p_ref));
    }
    if out.is_empty() {
        return Err(CliError::Parse(format!("{}: no targets", path.display())));
    }
    Ok(out)
}

pub fn inject_fit(
    ctx: &Context,
    targets: &[(i64, i64, f64)],
    model: LossModel,
    verify: bool,
) -> Result<Report, CliError> {
    let cache = ctx.cache()?;
    let lines = targets.iter().map(|&(m, n, _)| ctx.line((m, n))).collect::<Result<Vec<_>, _>>()?;
    let p_ref: Vec<f64> = targets.iter().map(|t| t.2).collect();
    let set = FlowTargetSet::new(&cache, lines, p_ref)?;
    let solution = match model {
        LossModel::Lossy => solve_targets_lossy(&ctx.case, &set)?,
        LossModel::Lossless => solve_targets(&set, 0.0)?,
    };
    let estimated = estimate_line_losses(&ctx.case, &set);

    let mut report = Report::new("inject-fit");
    report.summary.push(("power_unit", ctx.unit().into()));
    report.summary.push(("loss_model", if model == LossModel::Lossy { "lossy" } else { "lossless" }.into()));
    report.summary.push(("balance", ctx.power(solution.balance)));
    report.summary.push(("lambda", solution.lambda.into()));
    report.summary.push(("residual_norm", ctx.power(solution.residual_norm)));

    let mut fit = Table::new("fit", &["balance", "lambda", "residual_norm", "flow_error_norm"]);
    let mut residuals = Table::new(
        "residuals",
        &["from", "to", "p_ref", "p_fit", "residual", "estimated_loss", "p_achieved"],
    );
    let achieved = if verify {
        let (_, flows) = realized_flows(&ctx.case, &solution.p, &set.lines, &ctx.options)?;
        Some(flows)
    } else {
        None
    };
    let fitted: Vec<f64> = (0..set.lines.len())
        .map(|r| set.a.row(r).iter().zip(&solution.p).map(|(a, p)| a * p).sum())
        .collect();
    for (k, line) in set.lines.iter().enumerate() {
        residuals.push(vec![
            ctx.ext(line.from).into(),
            ctx.ext(line.to).into(),
            ctx.power(set.p_ref[k]),
            ctx.power(fitted[k]),
            ctx.power(fitted[k] - set.p_ref[k]),
            ctx.power(estimated[k]),
            achieved.as_ref().map_or(Cell::Empty, |a| ctx.power(a[k])),
        ]);
    }
    let error_norm = achieved.as_ref().map(|a| flow_error(a, &set.p_ref) * ctx.power_scale);
    if let Some(e) = error_norm {
        report.summary.push(("flow_error_norm", e.into()));
    }
    fit.push(vec![
        ctx.power(solution.balance),
        solution.lambda.into(),
        ctx.power(solution.residual_norm),
        error_norm.into(),
    ]);

    let mut injections = Table::new("injections", &["bus", "p"]);
    for (k, p) in solution.p.iter().enumerate() {
        injections.push(vec![ctx.ext(k + 1).into(), ctx.power(*p)]);
    }
    report.tables = vec![fit, injections, residuals];
    Ok(report)
}

pub fn experiment(ctx: &Context, trials: usize, seed: u64, bins: usize, sigma: f64) -> Result<Report, CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let op = ctx.solve()?;
    let cache = ctx.cache()?;
    let config = ExperimentConfig { sigma_scale: sigma, solve: ctx.options, ..ExperimentConfig::new(trials, seed) };
    let outcome = perturbation_experiment(&cache, &op, &config)?;
    let hist = histogram(&outcome, bins)?;

    let mut report = Report::new("experiment");
    report.summary.push(("trials", (trials as i64).into()));
    report.summary.push(("seed", format!("{seed}").into()));
    report.summary.push(("median_lossy", outcome.lossy.median().map(|m| m * ctx.power_scale).into()));
    report.summary.push(("median_lossless", outcome.lossless.median().map(|m| m * ctx.power_scale).into()));
    report.summary.push(("nonconvergent_lossy", (outcome.lossy.nonconvergent as i64).into()));
    report.summary.push(("nonconvergent_lossless", (outcome.lossless.nonconvergent as i64).into()));
    let mut table = Table::new("histogram", &["bin_lo", "bin_hi", "count_lossy", "count_lossless"]);
    for b in hist {
        table.push(vec![
            ctx.power(b.bin_lo),
            ctx.power(b.bin_hi),
            (b.count_lossy as i64).into(),
            (b.count_lossless as i64).into(),
        ]);
    }
    report.tables.push(table);
    Ok(report)
}
