//! Evaluation wall-clock and energy accounting.
//!
//! Power traces are `(seconds since eval start, watts)` samples. Energy is
//! the trapezoidal integral over `[0, duration]`, holding the first and last
//! sample constant outside the sampled span.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msignal::round_to;
use crate::types::{Evaluation, RunRecord, SliceFraction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PowerTrace {
    samples: Vec<(f64, f64)>,
}

impl PowerTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if samples
            .iter()
            .any(|(t, w)| !t.is_finite() || !w.is_finite() || *w < 0.0)
        {
            return Err(Error::invalid("power trace", "samples must be finite with watts >= 0"));
        }
        if samples.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(Error::invalid("power trace", "timestamps must be strictly increasing"));
        }
        Ok(Self { samples })
    }

    pub fn constant(watts: f64) -> Result<Self> {
        Self::new(vec![(0.0, watts)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Reads a sidecar `t_s,watts` CSV; a header row is optional.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut samples = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let parse = |j: usize| row.get(j).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(t), Some(w)) => samples.push((t, w)),
                _ if i == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "expected t_s,watts".into(),
                    })
                }
            }
        }
        Self::new(samples)
    }

    /// Watts at time `t`, linear between samples and constant outside.
    fn watts_at(&self, t: f64) -> f64 {
        let s = &self.samples;
        if t <= s[0].0 {
            return s[0].1;
        }
        if t >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        let i = s.partition_point(|(ts, _)| *ts <= t);
        let (t0, w0) = s[i - 1];
        let (t1, w1) = s[i];
        w0 + (w1 - w0) * (t - t0) / (t1 - t0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for PowerTrace {
    type Error = Error;

    fn try_from(samples: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(samples)
    }
}

impl From<PowerTrace> for Vec<(f64, f64)> {
    fn from(trace: PowerTrace) -> Self {
        trace.samples
    }
}

/// Watt-hours consumed over `[0, duration_s]`.
pub fn integrate_power(trace: &PowerTrace, duration_s: f64) -> Result<f64> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be > 0"));
    }
    let mut knots = vec![0.0, duration_s];
    knots.extend(
        trace
            .samples
            .iter()
            .map(|(t, _)| *t)
            .filter(|t| *t > 0.0 && *t < duration_s),
    );
    knots.sort_by(f64::total_cmp);
    let joules: f64 = knots
        .windows(2)
        .map(|k| 0.5 * (trace.watts_at(k[0]) + trace.watts_at(k[1])) * (k[1] - k[0]))
        .sum();
    Ok(joules / 3600.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalCostSummary {
    pub slice: SliceFraction,
    pub n_runs: usize,
    pub full_wallclock_s: f64,
    pub slice_wallclock_s: f64,
    pub wallclock_ratio: f64,
    pub per_cycle_saved_s: f64,
    /// Energy fields are absent, not zero, when the pool has no traces.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_energy_wh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_energy_wh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_cycle_saved_wh: Option<f64>,
}

impl EvalCostSummary {
    /// `|wallclock_ratio - energy_ratio|`, when energy is known.
    pub fn ratio_gap(&self) -> Option<f64> {
        self.energy_ratio.map(|e| (self.wallclock_ratio - e).abs())
    }

    /// Copy with ratios rounded to three decimals, for reports.
    pub fn rounded(&self) -> Self {
        Self {
            wallclock_ratio: round_to(self.wallclock_ratio, 3),
            energy_ratio: self.energy_ratio.map(|r| round_to(r, 3)),
            ..self.clone()
        }
    }
}

/// Sums full and slice evaluation wall-clock and energy over a pool.
///
/// Summation runs in run-id order so the floating-point result does not
/// depend on input order. If some records carry traces and others do not,
/// that is an error; if none do, the energy fields are `None`.
pub fn eval_cost_summary(pool: &[RunRecord], slice: SliceFraction) -> Result<EvalCostSummary> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut sorted: Vec<&RunRecord> = pool.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));

    let keys = [Evaluation::Full, Evaluation::Slice(slice)];
    let timing = |r: &RunRecord, key: Evaluation| {
        r.eval_wallclock_s
            .get(&key)
            .copied()
            .ok_or_else(|| Error::MissingTiming {
                run_id: r.run_id.clone(),
                key,
            })
    };

    let with_traces: BTreeSet<&str> = sorted
        .iter()
        .filter(|r| keys.iter().any(|k| r.power_samples.contains_key(k)))
        .map(|r| r.run_id.as_str())
        .collect();
    let want_energy = !with_traces.is_empty();

    let (mut full_s, mut slice_s, mut full_wh, mut slice_wh) = (0.0, 0.0, 0.0, 0.0);
    for r in &sorted {
        let tf = timing(r, keys[0])?;
        let ts = timing(r, keys[1])?;
        full_s += tf;
        slice_s += ts;
        if want_energy {
            for (key, secs, acc) in [(keys[0], tf, &mut full_wh), (keys[1], ts, &mut slice_wh)] {
                let trace = r.power_samples.get(&key).ok_or_else(|| Error::MissingTrace {
                    run_id: r.run_id.clone(),
                    key,
                })?;
                *acc += integrate_power(trace, secs)?;
            }
        }
    }

    let n = sorted.len() as f64;
    let energy = want_energy.then_some((full_wh, slice_wh));
    Ok(EvalCostSummary {
        slice,
        n_runs: sorted.len(),
        full_wallclock_s: full_s,
        slice_wallclock_s: slice_s,
        wallclock_ratio: slice_s / full_s,
        per_cycle_saved_s: (full_s - slice_s) / n,
        full_energy_wh: energy.map(|e| e.0),
        slice_energy_wh: energy.map(|e| e.1),
        energy_ratio: energy.map(|(f, s)| s / f),
        per_cycle_saved_wh: energy.map(|(f, s)| (f - s) / n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Annualized {
    pub gpu_hours_per_year: f64,
    pub kwh_per_year: f64,
}

/// Scales per-candidate savings to a year of cycles.
pub fn annualize(
    saved_s_per_candidate: f64,
    saved_wh_per_candidate: f64,
    cycles_per_year: f64,
    candidates_per_cycle: f64,
    families: f64,
) -> Annualized {
    let evals = cycles_per_year * candidates_per_cycle * families;
    Annualized {
        gpu_hours_per_year: saved_s_per_candidate * evals / 3600.0,
        kwh_per_year: saved_wh_per_candidate * evals / 1000.0,
    }
}

pub fn write_summary_csv<W: Write>(summary: &EvalCostSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "full", "slice", "ratio", "per_cycle_saved"])?;
    w.write_record([
        "wallclock_s".to_string(),
        format!("{:.1}", summary.full_wallclock_s),
        format!("{:.1}", summary.slice_wallclock_s),
        format!("{:.3}", summary.wallclock_ratio),
        format!("{:.2}", summary.per_cycle_saved_s),
    ])?;
    if let (Some(f), Some(s), Some(r), Some(p)) = (
        summary.full_energy_wh,
        summary.slice_energy_wh,
        summary.energy_ratio,
        summary.per_cycle_saved_wh,
    ) {
        w.write_record([
            "energy_wh".to_string(),
            format!("{f:.2}"),
            format!("{s:.2}"),
            format!("{r:.3}"),
            format!("{p:.3}"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}
