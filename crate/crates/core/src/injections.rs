//! Active injections that best realize prescribed line active flows.
//!
//! Solves `min ‖A P − P_D‖²  s.t.  𝟙ᵀP = L` in closed form through the KKT
//! system
//!
//! ```text
//! [ 2AᵀA  𝟙 ] [P]   [2AᵀP_D]
//! [ 𝟙ᵀ    0 ] [λ] = [  L   ]
//! ```
//!
//! where the rows of `A` are the decoupled sensitivities `α_(m,n)`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{LineRef, NetworkCase};
use crate::power_flow::{line_complex_flow, solve_power_flow, with_active_injections, OperatingPoint, SolveOptions};
use crate::sensitivity::SensitivityCache;

/// Relative singular-value threshold for the rank check.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTargetSet {
    pub lines: Vec<LineRef>,
    pub p_ref: Vec<f64>,
    /// `D × N`, row `i` is `α` of `lines[i]`.
    pub a: DMatrix<f64>,
}

impl FlowTargetSet {
    pub fn new(cache: &SensitivityCache, lines: Vec<LineRef>, p_ref: Vec<f64>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::EmptyLineSet);
        }
        if lines.len() != p_ref.len() {
            return Err(Error::DimensionMismatch { expected: lines.len(), actual: p_ref.len() });
        }
        let a = cache.alpha_matrix(&lines)?;
        let targets = FlowTargetSet { lines, p_ref, a };
        targets.check_rank()?;
        if targets.lines.len() < targets.a.ncols() {
            warn!(
                "{} flow targets for {} buses; relying on the rank of [A; 1ᵀ]",
                targets.lines.len(),
                targets.a.ncols()
            );
        }
        Ok(targets)
    }

    pub fn n_buses(&self) -> usize {
        self.a.ncols()
    }

    /// Errors with the null-space directions of `[A; 𝟙ᵀ]` when its columns
    /// are dependent.
    pub fn check_rank(&self) -> Result<()> {
        let directions = deficient_directions(&self.a);
        if directions.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient { directions })
        }
    }
}

fn deficient_directions(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (d, n) = a.shape();
    let rows = (d + 1).max(n);
    let mut stacked = DMatrix::<f64>::zeros(rows, n);
    stacked.view_mut((0, 0), (d, n)).copy_from(a);
    stacked.row_mut(d).fill(1.0);
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("v_t computed");
    let sigma_max = svd.singular_values.max();
    if !sigma_max.is_finite() {
        return vec![vec![f64::NAN; n]];
    }
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= RANK_TOL * sigma_max)
        .map(|(k, _)| v_t.row(k).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionSolution {
    pub p: Vec<f64>,
    pub lambda: f64,
    /// `‖A P − P_D‖₂`.
    pub residual_norm: f64,
    /// `𝟙ᵀP`.
    pub balance: f64,
}

impl InjectionSolution {
    /// `‖2Aᵀ(AP − P_D) + λ𝟙‖∞`.
    pub fn kkt_residual(&self, targets: &FlowTargetSet) -> f64 {
        let p = DVector::from_column_slice(&self.p);
        let r = &targets.a * p - DVector::from_column_slice(&targets.p_ref);
        let g = targets.a.transpose() * r * 2.0;
        g.iter().map(|x| (x + self.lambda).abs()).fold(0.0, f64::max)
    }
}

/// Unique minimizer of `‖A P − P_D‖²` subject to `𝟙ᵀP = total_loss`.
pub fn solve_targets(targets: &FlowTargetSet, total_loss: f64) -> Result<InjectionSolution> {
    let n = targets.n_buses();
    let a = &targets.a;
    let p_ref = DVector::from_column_slice(&targets.p_ref);

    let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(a.transpose() * a * 2.0));
    for i in 0..n {
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&(a.transpose() * &p_ref * 2.0));
    rhs[n] = total_loss;

    let rank_error = || Error::RankDeficient { directions: deficient_directions(a) };
    let x = kkt.lu().solve(&rhs).ok_or_else(rank_error)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(rank_error());
    }

    let p = x.rows(0, n).into_owned();
    let residual = a * &p - p_ref;
    Ok(InjectionSolution {
        balance: p.sum(),
        residual_norm: residual.norm(),
        lambda: x[n],
        p: p.iter().copied().collect(),
    })
}

/// Expected loss per target line, `(P^r)² Re{1/y_mn}`.
pub fn estimate_line_losses(case: &NetworkCase, targets: &FlowTargetSet) -> Vec<f64> {
    targets
        .lines
        .iter()
        .zip(&targets.p_ref)
        .map(|(line, p)| p * p * case.line(line).series.inv().re)
        .collect()
}

/// [`solve_targets`] with `L = 𝟙ᵀ L_D` from [`estimate_line_losses`].
pub fn solve_targets_lossy(case: &NetworkCase, targets: &FlowTargetSet) -> Result<InjectionSolution> {
    let total: f64 = estimate_line_losses(case, targets).iter().sum();
    solve_targets(targets, total)
}

/// Re-solves the AC power flow with the given active injections at the
/// non-slack buses and returns the active flow on each listed line.
pub fn realized_flows(
    case: &NetworkCase,
    p: &[f64],
    lines: &[LineRef],
    options: &SolveOptions,
) -> Result<(OperatingPoint, Vec<f64>)> {
    let adjusted = with_active_injections(case, p)?;
    let op = solve_power_flow(&adjusted, options)?;
    let flows = lines.iter().map(|l| line_complex_flow(&adjusted, &op, l).complex_flow.re).collect();
    Ok((op, flows))
}

pub fn flow_error(achieved: &[f64], desired: &[f64]) -> f64 {
    achieved.iter().zip(desired).map(|(a, d)| (a - d) * (a - d)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub seed: u64,
    /// `σ ~ U(−scale, scale)`; the standard experiment uses 1.
    pub sigma_scale: f64,
    pub solve: SolveOptions,
}

impl ExperimentConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        ExperimentConfig { trials, seed, sigma_scale: 1.0, solve: SolveOptions::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VariantOutcome {
    /// 2-norm flow errors of the converged trials, in trial order.
    pub errors: Vec<f64>,
    pub nonconvergent: usize,
}

impl VariantOutcome {
    pub fn median(&self) -> Option<f64> {
        median(&self.errors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub lossy: VariantOutcome,
    pub lossless: VariantOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_lossy: usize,
    pub count_lossless: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] })
}

/// Random flow-target experiment over every line of the case.
///
/// Each trial draws `σ` independently per line from its own RNG stream
/// (`seed`, stream = trial index), sets `P^r = P(1 + σ)`, solves the lossy
/// and lossless problems, re-solves the AC power flow and records the
/// 2-norm flow error. Failed re-solves are counted, not recorded.
pub fn perturbation_experiment(
    cache: &SensitivityCache,
    base: &OperatingPoint,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    let case = cache.case();
    let lines = case.line_refs();
    let base_flows: Vec<f64> = lines.iter().map(|l| line_complex_flow(case, base, l).complex_flow.re).collect();
    let template = FlowTargetSet::new(cache, lines.clone(), base_flows.clone())?;

    let run = |p_ref: &[f64], lossy: bool| -> Option<f64> {
        let targets = FlowTargetSet { p_ref: p_ref.to_vec(), ..template.clone() };
        let solution = if lossy { solve_targets_lossy(case, &targets) } else { solve_targets(&targets, 0.0) };
        let solution = solution.ok()?;
        let (_, achieved) = realized_flows(case, &solution.p, &lines, &config.solve).ok()?;
        Some(flow_error(&achieved, p_ref))
    };

    let trials: Vec<(Option<f64>, Option<f64>)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(trial as u64);
            let p_ref: Vec<f64> = base_flows
                .iter()
                .map(|f| {
                    let sigma = config.sigma_scale * rng.random_range(-1.0..=1.0);
                    f * (1.0 + sigma)
                })
                .collect();
            (run(&p_ref, true), run(&p_ref, false))
        })
        .collect();

    let mut outcome = ExperimentOutcome { lossy: VariantOutcome::default(), lossless: VariantOutcome::default() };
    for (lossy, lossless) in trials {
        for (result, variant) in [(lossy, &mut outcome.lossy), (lossless, &mut outcome.lossless)] {
            match result {
                Some(e) => variant.errors.push(e),
                None => variant.nonconvergent += 1,
            }
        }
    }
    Ok(outcome)
}

/// Equal-width bins over `[0, max error]`, shared by both variants.
pub fn histogram(outcome: &ExperimentOutcome, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Precondition("histogram needs at least one bin".into()));
    }
    let all = outcome.lossy.errors.iter().chain(&outcome.lossless.errors);
    let Some(max) = all.clone().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let upper = if max > 0.0 { max } else { 1.0 };
    let width = upper / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            bin_lo: k as f64 * width,
            bin_hi: if k + 1 == bins { upper } else { (k + 1) as f64 * width },
            count_lossy: 0,
            count_lossless: 0,
        })
        .collect();
    let index = |e: f64| ((e / width) as usize).min(bins - 1);
    for &e in &outcome.lossy.errors {
        out[index(e)].count_lossy += 1;
    }
    for &e in &outcome.lossless.errors {
        out[index(e)].count_lossless += 1;
    }
    Ok(out)
}
