//! The metric-availability signal M and pool-level agreement statistics.
//!
//! M is 1 when a partial-evaluation verdict matches the full-evaluation
//! verdict for the same candidate. Because it needs the full verdict it is a
//! calibration and audit statistic, not something a single cycle can certify
//! on its own.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gates::{decide, GateSpec};
use crate::types::{Decision, Direction, Evaluation, MetricSet, RunRecord, SliceFraction, ThresholdSpec};

pub fn m_signal(partial: Decision, full: Decision) -> u8 {
    u8::from(partial == full)
}

/// Agreement between partial and full verdicts over a pool, for one
/// (threshold, slice) configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementCell {
    /// Present when the gate is a single threshold.
    pub threshold_bound: Option<f64>,
    pub slice: SliceFraction,
    pub m_rate: f64,
    pub n_runs: usize,
    pub disagreeing_run_ids: Vec<String>,
}

impl AgreementCell {
    fn from_pool(
        threshold_bound: Option<f64>,
        slice: SliceFraction,
        n_runs: usize,
        disagreeing_run_ids: Vec<String>,
    ) -> Self {
        let m_rate = (n_runs - disagreeing_run_ids.len()) as f64 / n_runs as f64;
        Self {
            threshold_bound,
            slice,
            m_rate,
            n_runs,
            disagreeing_run_ids,
        }
    }

    /// Rate rounded half away from zero to two decimals, for display.
    pub fn display_rate(&self) -> f64 {
        round_to(self.m_rate, 2)
    }
}

pub(crate) fn round_to(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

pub fn agreement_rate(
    pool: &[RunRecord],
    spec: &GateSpec,
    slice: SliceFraction,
    baseline: Option<&MetricSet>,
) -> Result<AgreementCell> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut disagreeing = Vec::new();
    for record in pool {
        let partial = decide(record, Evaluation::Slice(slice), spec, baseline)?;
        let full = decide(record, Evaluation::Full, spec, baseline)?;
        if m_signal(partial, full) == 0 {
            disagreeing.push(record.run_id.clone());
        }
    }
    let bound = match (spec.mode.has_relative(), spec.thresholds.as_slice()) {
        (false, [only]) => Some(only.bound),
        _ => None,
    };
    Ok(AgreementCell::from_pool(bound, slice, pool.len(), disagreeing))
}

/// Post-hoc reanalysis of stored metrics over a bound x slice grid, one
/// threshold on `metric` at a time. Cells come back bound-major, then slice,
/// in the order given.
pub fn sensitivity_sweep(
    pool: &[RunRecord],
    metric: &str,
    bounds: &[f64],
    slices: &[SliceFraction],
    direction: Direction,
) -> Result<Vec<AgreementCell>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    // Pull the values once; every cell is then a pure comparison.
    let mut full_values = Vec::with_capacity(pool.len());
    let mut slice_values = vec![Vec::with_capacity(pool.len()); slices.len()];
    for record in pool {
        full_values.push(record.full_metrics()?.require(metric)?);
        for (j, &s) in slices.iter().enumerate() {
            slice_values[j].push(record.slice_metrics(s)?.require(metric)?);
        }
    }

    let mut cells = Vec::with_capacity(bounds.len() * slices.len());
    for &bound in bounds {
        let threshold = ThresholdSpec::new(metric, bound, direction)?;
        for (j, &s) in slices.iter().enumerate() {
            let disagreeing = pool
                .iter()
                .zip(full_values.iter().zip(&slice_values[j]))
                .filter(|(_, (&f, &p))| threshold.passes(f) != threshold.passes(p))
                .map(|(r, _)| r.run_id.clone())
                .collect();
            cells.push(AgreementCell::from_pool(Some(bound), s, pool.len(), disagreeing));
        }
    }
    Ok(cells)
}

/// Mean of the trailing `min(window, len)` entries.
pub fn rolling_agreement(history: &[u8], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::invalid("window", "must be >= 1"));
    }
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let tail = &history[history.len().saturating_sub(window)..];
    Ok(tail.iter().map(|&m| f64::from(m)).sum::<f64>() / tail.len() as f64)
}

/// Writes `threshold,slice,m_rate,n,disagreements`, one row per cell.
pub fn write_grid_csv<W: Write>(cells: &[AgreementCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "slice", "m_rate", "n", "disagreements"])?;
    for c in cells {
        w.write_record([
            c.threshold_bound.map(|b| b.to_string()).unwrap_or_default(),
            c.slice.to_string(),
            c.m_rate.to_string(),
            c.n_runs.to_string(),
            c.disagreeing_run_ids.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}
