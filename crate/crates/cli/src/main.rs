mod commands;
mod error;
mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use powerdiv::{parse_case, parse_matpower, ApproxTier, NetworkCase, SolveOptions};

use commands::{
    AllocateSelection, Context, DividerSelection, LossModel, SensitivitySelection, TargetArg,
};
use error::CliError;
use report::{OutputFormat, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseFormat {
    Native,
    Matpower,
}

#[derive(Debug, Parser)]
#[command(name = "powerdiv", version, about = "Line-flow dividers, flow allocation and injection fitting")]
struct Cli {
    /// Network case file (native JSON or MATPOWER .m).
    #[arg(long, global = true)]
    case: Option<PathBuf>,

    /// Case file format; inferred from the extension when omitted.
    #[arg(long, value_enum, global = true)]
    format: Option<CaseFormat>,

    #[arg(long, value_enum, default_value = "table", global = true)]
    out: OutputFormat,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Report powers in MW/MVAr using the case base.
    #[arg(long, global = true)]
    base_mva: bool,

    #[arg(long, default_value_t = 1e-8, global = true)]
    tolerance: f64,

    #[arg(long, default_value_t = 50, global = true)]
    max_iterations: usize,

    #[command(subcommand)]
    command: Command,
}

fn parse_pair(s: &str) -> Result<(i64, i64), String> {
    let (m, n) = s.split_once(',').ok_or_else(|| format!("expected 'm,n', got '{s}'"))?;
    let id = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("bad bus id '{t}': {e}"));
    Ok((id(m)?, id(n)?))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the AC power flow and print bus and line results.
    Solve,
    /// Current-injection sensitivities for one line or every line.
    #[command(group(ArgGroup::new("which").required(true).args(["line", "all"])))]
    Sensitivity {
        #[arg(long, value_parser = parse_pair)]
        line: Option<(i64, i64)>,
        #[arg(long)]
        all: bool,
    },
    /// Line flows from the divider law at a given approximation tier.
    #[command(group(ArgGroup::new("which").required(true).args(["line", "table"])))]
    Divider {
        #[arg(long, value_parser = parse_pair)]
        line: Option<(i64, i64)>,
        /// exact, lossless, small-angle, unity, decoupled or dc.
        #[arg(long, default_value = "exact", conflicts_with = "table")]
        tier: ApproxTier,
        /// Every line at every tier, with errors against the exact flow.
        #[arg(long)]
        table: bool,
    },
    /// Per-bus shares of a line's active flow, reactive flow or loss.
    #[command(group(ArgGroup::new("which").required(true).args(["line", "all_lines"])))]
    Allocate {
        #[arg(long, value_parser = parse_pair)]
        line: Option<(i64, i64)>,
        #[arg(long)]
        all_lines: bool,
        #[arg(long, value_enum, default_value = "p")]
        target: TargetArg,
    },
    /// Active injections that best reproduce target line flows.
    InjectFit {
        /// CSV with columns from,to,p_ref.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum, default_value = "lossy")]
        loss_model: LossModel,
        /// Re-solve the power flow with the fitted injections.
        #[arg(long)]
        verify: bool,
    },
    /// Random-target fitting experiment over every line.
    Experiment {
        #[arg(long, default_value_t = 5000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Half-width of the uniform target perturbation, per-unit.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
}

fn load_case(path: &Path, format: Option<CaseFormat>) -> Result<NetworkCase, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let format = format.unwrap_or(match path.extension().and_then(|e| e.to_str()) {
        Some("m") => CaseFormat::Matpower,
        _ => CaseFormat::Native,
    });
    Ok(match format {
        CaseFormat::Native => parse_case(&text)?,
        CaseFormat::Matpower => parse_matpower(&text)?,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.case.as_deref().ok_or_else(|| CliError::Usage("--case is required".into()))?;
    let case = load_case(path, cli.format)?;
    let power_scale = if cli.base_mva { case.base_mva } else { 1.0 };
    let ctx = Context {
        case,
        options: SolveOptions { tolerance: cli.tolerance, max_iterations: cli.max_iterations },
        power_scale,
    };
    let report: Report = match cli.command {
        Command::Solve => commands::solve(&ctx)?,
        Command::Sensitivity { line, .. } => commands::sensitivity(
            &ctx,
            line.map_or(SensitivitySelection::All, SensitivitySelection::Line),
        )?,
        Command::Divider { line, tier, .. } => commands::divider(
            &ctx,
            line.map_or(DividerSelection::Table, |l| DividerSelection::Line(l, tier)),
        )?,
        Command::Allocate { line, target, .. } => commands::allocate(
            &ctx,
            line.map_or(AllocateSelection::AllLines, AllocateSelection::Line),
            target,
        )?,
        Command::InjectFit { targets, loss_model, verify } => {
            let targets = commands::read_targets(&targets)?;
            commands::inject_fit(&ctx, &targets, loss_model, verify)?
        }
        Command::Experiment { trials, seed, bins, sigma } => commands::experiment(&ctx, trials, seed, bins, sigma)?,
    };
    let io_err = |e: io::Error| CliError::Io(e.to_string());
    match &cli.output {
        Some(p) => {
            let file = File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            report.write(cli.out, &mut w).map_err(io_err)?;
            w.flush().map_err(io_err)
        }
        None => {
            let mut w = io::stdout().lock();
            report.write(cli.out, &mut w).map_err(io_err)?;
            w.flush().map_err(io_err)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
