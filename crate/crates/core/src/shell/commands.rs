//! The eight `timegate` subcommands.
//!
//! Each command reads its inputs, writes deterministic report files into the
//! output directory and returns a one-line summary plus an exit code.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::budget::exists_feasible;
use crate::error::{Error, Result};
use crate::gates::{boundary_proximity, GateSpec};
use crate::metering::{annualize, eval_cost_summary, write_summary_csv, EvalCostSummary};
use crate::msignal::{m_signal, sensitivity_sweep, write_grid_csv};
use crate::protocol::{
    classify_outcome, trajectory_cost, write_ledger, Counters, FullReason, LedgerEntry, Phase, ProtocolState,
};
use crate::simulator::{
    inject_drift, pareto_summary, pool_from_records, run_trajectory, sweep_sentinel_periods, synth_pool,
    write_pareto_csv, write_reports_csv, RunPool, TrajectoryReport,
};
use crate::types::{Decision, MetricSet, RunRecord};

use super::config::Config;
use super::exit;
use super::schema::ingest_metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Gate,
    Calibrate,
    Simulate,
    Sweep,
    Sensitivity,
    Energy,
    Pareto,
    Report,
}

/// Everything a command needs besides its name.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: Config,
    /// Relative `io` paths in the config resolve against this directory.
    pub base_dir: PathBuf,
    pub seed: u64,
    pub metrics: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Record to gate; may be omitted when the metrics file holds one run.
    pub run_id: Option<String>,
    /// Record whose full metrics serve as the relative-gate baseline.
    pub baseline: Option<String>,
}

impl Invocation {
    pub fn new(config: Config) -> Self {
        Self {
            config,
            base_dir: PathBuf::from("."),
            seed: 0,
            metrics: None,
            out: None,
            run_id: None,
            baseline: None,
        }
    }

    fn metrics_path(&self) -> Result<PathBuf> {
        match (&self.metrics, &self.config.io.metrics) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(p)) => Ok(self.base_dir.join(p)),
            (None, None) => Err(Error::Config(
                "no metrics file: pass --metrics or set io.metrics".into(),
            )),
        }
    }

    fn records(&self) -> Result<Vec<RunRecord>> {
        let records = ingest_metrics(&self.metrics_path()?)?;
        if records.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(records)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = match (&self.out, &self.config.io.out) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => self.base_dir.join(p),
            (None, None) => PathBuf::from("out"),
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub summary: String,
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

impl CommandOutput {
    fn ok(summary: String, files: Vec<PathBuf>) -> Self {
        Self {
            summary,
            exit_code: exit::PROMOTE,
            files,
        }
    }
}

pub fn run(command: Command, inv: &Invocation) -> Result<CommandOutput> {
    match command {
        Command::Gate => cmd_gate(inv),
        Command::Calibrate => cmd_calibrate(inv),
        Command::Simulate => cmd_simulate(inv),
        Command::Sweep => cmd_sweep(inv),
        Command::Sensitivity => cmd_sensitivity(inv),
        Command::Energy => cmd_energy(inv),
        Command::Pareto => cmd_pareto(inv),
        Command::Report => cmd_report(inv),
    }
}

/// Exit code for an error that escaped a command.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::BaselineMissing => exit::USAGE,
        _ => exit::RUNTIME_ERROR,
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn find<'a>(records: &'a [RunRecord], run_id: &str) -> Result<&'a RunRecord> {
    records
        .iter()
        .find(|r| r.run_id == run_id)
        .ok_or_else(|| Error::Config(format!("run {run_id:?} not in metrics file")))
}

fn baseline_metrics<'a>(inv: &Invocation, records: &'a [RunRecord]) -> Result<Option<&'a MetricSet>> {
    inv.baseline
        .as_deref()
        .map(|id| find(records, id)?.full_metrics())
        .transpose()
}

/// Verdict printed by `gate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateVerdict {
    pub promote: bool,
    /// Present only when both evaluations exist for the record.
    pub m: Option<u8>,
    pub reason_full: Option<FullReason>,
    pub run_id: String,
    pub feasible: bool,
    /// Partial metrics sit near a bound and no full metrics were supplied.
    pub full_required: bool,
    pub partial: Option<Decision>,
    pub full: Option<Decision>,
}

/// Stateless single-record gate at slice `alpha`.
///
/// Full metrics, when present, decide. Otherwise the partial verdict stands
/// unless it is within `epsilon` of a bound, in which case the gate holds
/// until a full evaluation is supplied.
pub fn gate_record(
    record: &RunRecord,
    spec: &GateSpec,
    baseline: Option<&MetricSet>,
    config: &Config,
) -> Result<GateVerdict> {
    let params = config.protocol_params()?;
    let feasible = config
        .cycle
        .as_ref()
        .is_none_or(|c| exists_feasible(&c.steps, c.delta_tau_h));

    let partial_metrics = record.metrics_by_slice.get(&params.alpha);
    let partial = partial_metrics
        .map(|m| spec.evaluate(m, baseline).map(Decision::from_pass))
        .transpose()?;
    let full = record
        .metrics_full
        .as_ref()
        .map(|m| spec.evaluate(m, baseline).map(Decision::from_pass))
        .transpose()?;
    let near = partial_metrics
        .map(|m| boundary_proximity(m, &spec.thresholds, params.epsilon))
        .transpose()?
        .unwrap_or(false);

    let (decision, full_required) = match (partial, full) {
        (_, Some(f)) => (f, false),
        (Some(p), None) if !near => (p, false),
        (Some(_), None) => (Decision::Hold, true),
        (None, None) => {
            return Err(Error::SliceMissing {
                run_id: record.run_id.clone(),
                slice: params.alpha,
            })
        }
    };
    Ok(GateVerdict {
        promote: feasible && decision.is_promote(),
        m: partial.zip(full).map(|(p, f)| m_signal(p, f)),
        reason_full: near.then_some(FullReason::BoundaryFallback),
        run_id: record.run_id.clone(),
        feasible,
        full_required,
        partial,
        full,
    })
}

pub fn cmd_gate(inv: &Invocation) -> Result<CommandOutput> {
    let spec = inv.config.gate_spec()?;
    let records = inv.records()?;
    let record = match (&inv.run_id, records.as_slice()) {
        (Some(id), _) => find(&records, id)?,
        (None, [only]) => only,
        (None, _) => {
            return Err(Error::Config(format!(
                "--run-id required: metrics file holds {} runs",
                records.len()
            )))
        }
    };
    let verdict = gate_record(record, &spec, baseline_metrics(inv, &records)?, &inv.config)?;
    let exit_code = match (verdict.feasible, verdict.promote) {
        (false, _) => exit::INFEASIBLE,
        (true, true) => exit::PROMOTE,
        (true, false) => exit::HOLD,
    };
    Ok(CommandOutput {
        summary: serde_json::to_string(&verdict)?,
        exit_code,
        files: Vec::new(),
    })
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    cycles: u64,
    phase: Phase,
    empirical_agreement: Option<f64>,
    units: f64,
    naive_units: f64,
    savings_pct: i64,
    counters: Counters,
    state: ProtocolState,
}

/// Replays the metrics file in order, one record per cycle, through the
/// protocol. Records the protocol sends to full evaluation must carry full
/// metrics.
pub fn cmd_calibrate(inv: &Invocation) -> Result<CommandOutput> {
    let spec = inv.config.gate_spec()?;
    let params = inv.config.protocol_params()?;
    let records = inv.records()?;
    let baseline = baseline_metrics(inv, &records)?;

    let mut state = ProtocolState::init(params.clone())?;
    let mut ledger = Vec::with_capacity(records.len());
    for record in &records {
        let action = state.step(record, &spec, baseline)?;
        let outcome = record
            .metrics_full
            .as_ref()
            .map(|m| {
                spec.evaluate(m, baseline)
                    .map(|p| classify_outcome(&action, Decision::from_pass(p)))
            })
            .transpose()?;
        if let Some(o) = outcome {
            state.record_outcome(o);
        }
        ledger.push(LedgerEntry {
            action,
            cumulative_cost: state.cost_units(),
            outcome,
        });
    }

    let actions: Vec<_> = ledger.iter().map(|e| e.action.clone()).collect();
    let cost = trajectory_cost(&actions, params.alpha_f64());
    let report = CalibrationReport {
        cycles: state.cycle_index(),
        phase: state.phase(),
        empirical_agreement: state.empirical_agreement(),
        units: cost.units,
        naive_units: cost.naive_units,
        savings_pct: cost.savings_pct,
        counters: state.counters(),
        state: state.clone(),
    };

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    write_file(&dir, "calibration.json", &to_json(&report)?, &mut files)?;
    let mut jsonl = Vec::new();
    write_ledger(&ledger, &mut jsonl)?;
    write_file(&dir, "calibration.jsonl", &jsonl, &mut files)?;

    let agreement = report
        .empirical_agreement
        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.2}"));
    let phase = serde_json::to_value(report.phase)?;
    Ok(CommandOutput::ok(
        format!(
            "calibrate: {} cycles, phase {}, agreement {agreement}, {:.1} units ({}% saved)",
            report.cycles,
            phase.as_str().unwrap_or_default(),
            report.units,
            report.savings_pct
        ),
        files,
    ))
}

/// Pool for simulation: synthetic when configured, else the metrics file.
fn simulation_pool(inv: &Invocation) -> Result<RunPool> {
    let sim = &inv.config.simulate;
    let pool = match &sim.synthetic {
        Some(syn) => synth_pool(&syn.model, &syn.labels, &syn.seeds, inv.seed)?,
        None => pool_from_records(inv.records()?)?,
    }
    .with_sampling(sim.sampling);
    Ok(match &sim.drift {
        Some(d) => inject_drift(&pool, d.clone()),
        None => pool,
    })
}

pub fn cmd_simulate(inv: &Invocation) -> Result<CommandOutput> {
    let spec = inv.config.gate_spec()?;
    let params = inv.config.protocol_params()?;
    let pool = simulation_pool(inv)?;
    let report = run_trajectory(&pool, &params, &spec, inv.config.simulate.cycles, inv.seed)?;

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    write_reports_csv(std::slice::from_ref(&report), &mut csv)?;
    write_file(&dir, "trajectory.csv", &csv, &mut files)?;
    write_file(&dir, "trajectory.json", &to_json(&report)?, &mut files)?;
    let mut jsonl = Vec::new();
    write_ledger(&report.per_cycle_log, &mut jsonl)?;
    write_file(&dir, "audit.jsonl", &jsonl, &mut files)?;

    Ok(CommandOutput::ok(
        format!(
            "simulate: {} cycles, N={}, {:.1} units vs {:.0} naive ({}% saved), {} sentinels, {} fallbacks, {} silent, {} caught",
            report.cycles,
            report.n_sentinel,
            report.units,
            report.naive_units,
            report.savings_pct,
            report.sentinels,
            report.fallbacks,
            report.silent_mispromotions,
            report.caught_disagreements
        ),
        files,
    ))
}

pub fn cmd_sweep(inv: &Invocation) -> Result<CommandOutput> {
    let spec = inv.config.gate_spec()?;
    let params = inv.config.protocol_params()?;
    let pool = simulation_pool(inv)?;
    let reports = sweep_sentinel_periods(
        &pool,
        &params,
        &spec,
        &inv.config.sweep.ns,
        inv.config.simulate.cycles,
        inv.seed,
    )?;

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    write_reports_csv(&reports, &mut csv)?;
    write_file(&dir, "sentinel_sweep.csv", &csv, &mut files)?;
    write_file(&dir, "sentinel_sweep.json", &to_json(&reports)?, &mut files)?;

    let row = |r: &TrajectoryReport| format!("N={} {}%", r.n_sentinel, r.savings_pct);
    let silent: u64 = reports.iter().map(|r| r.silent_mispromotions).sum();
    Ok(CommandOutput::ok(
        format!(
            "sweep: {} periods ({}), {silent} silent",
            reports.len(),
            reports.iter().map(row).collect::<Vec<_>>().join(", ")
        ),
        files,
    ))
}

pub fn cmd_sensitivity(inv: &Invocation) -> Result<CommandOutput> {
    let sweep = &inv.config.sweep;
    let records = inv.records()?;
    let cells = sensitivity_sweep(&records, &sweep.metric, &sweep.bounds, &sweep.slices, sweep.direction)?;

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    write_grid_csv(&cells, &mut csv)?;
    write_file(&dir, "sensitivity.csv", &csv, &mut files)?;

    let worst = cells
        .iter()
        .min_by(|a, b| a.m_rate.total_cmp(&b.m_rate))
        .expect("grid is non-empty");
    Ok(CommandOutput::ok(
        format!(
            "sensitivity: {} cells over {} runs, lowest agreement {:.2} at ({}, {})",
            cells.len(),
            records.len(),
            worst.display_rate(),
            worst.threshold_bound.unwrap_or(f64::NAN),
            worst.slice
        ),
        files,
    ))
}

#[derive(Debug, Serialize)]
struct EnergyReport {
    summary: EvalCostSummary,
    cycles_per_year: f64,
    candidates_per_cycle: f64,
    families: f64,
    gpu_hours_per_year: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kwh_per_year: Option<f64>,
}

pub fn cmd_energy(inv: &Invocation) -> Result<CommandOutput> {
    let cfg = &inv.config.energy;
    let records = inv.records()?;
    let summary = eval_cost_summary(&records, cfg.slice)?;
    // Annualize from unrounded per-cycle savings.
    let year = annualize(
        summary.per_cycle_saved_s,
        summary.per_cycle_saved_wh.unwrap_or(0.0),
        cfg.cycles_per_year,
        cfg.candidates_per_cycle,
        cfg.families,
    );
    let report = EnergyReport {
        summary: summary.rounded(),
        cycles_per_year: cfg.cycles_per_year,
        candidates_per_cycle: cfg.candidates_per_cycle,
        families: cfg.families,
        gpu_hours_per_year: year.gpu_hours_per_year,
        kwh_per_year: summary.per_cycle_saved_wh.map(|_| year.kwh_per_year),
    };

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    write_summary_csv(&summary, &mut csv)?;
    write_file(&dir, "energy.csv", &csv, &mut files)?;
    write_file(&dir, "energy.json", &to_json(&report)?, &mut files)?;

    let energy = match (summary.energy_ratio, report.kwh_per_year) {
        (Some(r), Some(k)) => format!(", energy ratio {r:.3}, {k:.1} kWh/yr"),
        _ => String::new(),
    };
    Ok(CommandOutput::ok(
        format!(
            "energy: {} runs at slice {}, wall-clock ratio {:.3}, {:.1} GPU-h/yr{energy}",
            summary.n_runs, summary.slice, summary.wallclock_ratio, year.gpu_hours_per_year
        ),
        files,
    ))
}

pub fn cmd_pareto(inv: &Invocation) -> Result<CommandOutput> {
    let records = inv.records()?;
    let rows = pareto_summary(&records, &inv.config.pareto.metric)?;

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    let mut csv = Vec::new();
    write_pareto_csv(&rows, &mut csv)?;
    write_file(&dir, "pareto.csv", &csv, &mut files)?;

    let gains: Vec<String> = rows
        .iter()
        .map(|r| r.gain_pct.map_or_else(|| "base".to_string(), |g| format!("{g}%")))
        .collect();
    Ok(CommandOutput::ok(
        format!("pareto: {} label budgets, gains {}", rows.len(), gains.join(", ")),
        files,
    ))
}

fn decision_cell(d: Option<Decision>) -> &'static str {
    match d {
        Some(Decision::Promote) => "promote",
        Some(Decision::Hold) => "hold",
        None => "",
    }
}

/// Per-record partial and full verdicts at slice `alpha`.
pub fn cmd_report(inv: &Invocation) -> Result<CommandOutput> {
    let spec = inv.config.gate_spec()?;
    let records = inv.records()?;
    let baseline = baseline_metrics(inv, &records)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "partial", "full", "m", "near_boundary", "promote"])?;
    let (mut promoted, mut disagreements) = (0, 0);
    for record in &records {
        let v = gate_record(record, &spec, baseline, &inv.config)?;
        promoted += usize::from(v.promote);
        disagreements += usize::from(v.m == Some(0));
        w.write_record([
            v.run_id.as_str(),
            decision_cell(v.partial),
            decision_cell(v.full),
            &v.m.map_or_else(String::new, |m| m.to_string()),
            if v.reason_full.is_some() { "true" } else { "false" },
            if v.promote { "true" } else { "false" },
        ])?;
    }
    let csv = w.into_inner().map_err(|e| Error::io("decisions.csv", e.into_error()))?;

    let dir = inv.out_dir()?;
    let mut files = Vec::new();
    write_file(&dir, "decisions.csv", &csv, &mut files)?;
    Ok(CommandOutput::ok(
        format!(
            "report: {} runs, {promoted} promoted, {disagreements} partial/full disagreements",
            records.len()
        ),
        files,
    ))
}
