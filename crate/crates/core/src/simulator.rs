//! Replay and synthetic trajectories over the protocol.
//!
//! A [`RunPool`] supplies one candidate per cycle, either in order
//! (wrapping) or by seeded sampling with replacement. Drift overlays shift
//! one metric layer of every record drawn at or after an onset cycle, which
//! is how slice-versus-full divergence is injected.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{decide, GateSpec};
use crate::protocol::{
    classify_outcome, trajectory_cost, CycleAction, FullReason, LedgerEntry, Outcome, ProtocolParams, ProtocolState,
};
use crate::types::{
    check_unique_run_ids, validate_run_record, BudgetAllocation, Evaluation, MetricSet, MetricValue, RunRecord,
    SliceFraction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Sequential,
    SeededRandomWithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLayer {
    /// Shift partial-slice metrics only; full stays put.
    #[default]
    Slices,
    /// Shift full metrics (and the 1.0 slice that mirrors them).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    /// 1-based cycle from which records are shifted.
    pub onset_cycle: u64,
    pub delta_per_metric: BTreeMap<String, f64>,
    #[serde(default)]
    pub layer: DriftLayer,
}

impl DriftSpec {
    pub fn new(onset_cycle: u64, delta_per_metric: BTreeMap<String, f64>, layer: DriftLayer) -> Result<Self> {
        if onset_cycle == 0 {
            return Err(Error::invalid("drift.onset_cycle", "must be >= 1"));
        }
        if delta_per_metric.values().any(|d| !d.is_finite()) {
            return Err(Error::invalid("drift.delta", "must be finite"));
        }
        Ok(Self {
            onset_cycle,
            delta_per_metric,
            layer,
        })
    }

    fn shift(&self, metrics: &mut MetricSet) {
        for (name, value) in metrics.values_mut() {
            if let Some(d) = self.delta_per_metric.get(name) {
                *value += d;
            }
        }
    }

    fn apply(&self, record: &mut RunRecord) {
        match self.layer {
            DriftLayer::Slices => {
                for (slice, metrics) in record.metrics_by_slice.iter_mut() {
                    if !slice.is_full() {
                        self.shift(metrics);
                    }
                }
            }
            DriftLayer::Full => {
                if let Some(full) = record.metrics_full.as_mut() {
                    self.shift(full);
                }
                if let Some(one) = record.metrics_by_slice.get_mut(&SliceFraction::FULL) {
                    self.shift(one);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPool {
    records: Vec<RunRecord>,
    sampling: Sampling,
    drifts: Vec<DriftSpec>,
}

impl RunPool {
    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record for 1-based `cycle`, with any active drift applied.
    fn draw(&self, cycle: u64, rng: &mut ChaCha8Rng) -> RunRecord {
        let idx = match self.sampling {
            Sampling::Sequential => ((cycle - 1) % self.records.len() as u64) as usize,
            Sampling::SeededRandomWithReplacement => rng.random_range(0..self.records.len()),
        };
        let mut record = self.records[idx].clone();
        for d in self.drifts.iter().filter(|d| cycle >= d.onset_cycle) {
            d.apply(&mut record);
        }
        record
    }
}

/// Sequential pool preserving input order.
pub fn pool_from_records(records: Vec<RunRecord>) -> Result<RunPool> {
    if records.is_empty() {
        return Err(Error::EmptyPool);
    }
    check_unique_run_ids(&records)?;
    let records = records
        .into_iter()
        .map(validate_run_record)
        .collect::<Result<Vec<_>>>()?;
    Ok(RunPool {
        records,
        sampling: Sampling::Sequential,
        drifts: Vec::new(),
    })
}

pub fn inject_drift(pool: &RunPool, drift: DriftSpec) -> RunPool {
    let mut out = pool.clone();
    if drift.delta_per_metric.values().any(|d| *d != 0.0) {
        out.drifts.push(drift);
    }
    out
}

/// Saturating quality-vs-labels curve used to synthesize pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub metric: String,
    pub base: f64,
    pub ceiling: f64,
    /// Labels at which `1 - 1/e` of the gap is closed.
    pub saturation_scale: f64,
    /// Labels acquired per hour; converts label counts into budget hours.
    pub label_rate: f64,
    pub seed_noise_sd: f64,
    pub slice_noise_sd: BTreeMap<SliceFraction, f64>,
}

impl QualityModel {
    pub fn validated(self) -> Result<Self> {
        let finite = [
            self.base,
            self.ceiling,
            self.saturation_scale,
            self.label_rate,
            self.seed_noise_sd,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel("parameters must be finite".into()));
        }
        if self.metric.is_empty() {
            return Err(Error::InvalidModel("metric name must be non-empty".into()));
        }
        if self.base > self.ceiling {
            return Err(Error::InvalidModel("base exceeds ceiling".into()));
        }
        if self.saturation_scale <= 0.0 {
            return Err(Error::InvalidModel("saturation_scale must be > 0".into()));
        }
        if self.label_rate <= 0.0 {
            return Err(Error::InvalidModel("label_rate must be > 0".into()));
        }
        if self.seed_noise_sd < 0.0 || self.slice_noise_sd.values().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidModel("noise sd must be >= 0".into()));
        }
        Ok(self)
    }

    /// Noise-free metric after `labels` labels.
    pub fn expected(&self, labels: f64) -> f64 {
        self.base + (self.ceiling - self.base) * (1.0 - (-labels / self.saturation_scale).exp())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("sd validated").sample(rng)
}

/// One run per (labels, seed) pair, labels-major. Deterministic in
/// `rng_seed`. Metrics are clamped to [0, 1].
pub fn synth_pool(model: &QualityModel, labels_per_run: &[f64], seeds: &[i64], rng_seed: u64) -> Result<RunPool> {
    let model = model.clone().validated()?;
    if labels_per_run.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidModel("label counts must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut records = Vec::with_capacity(labels_per_run.len() * seeds.len());
    for &labels in labels_per_run {
        for &seed in seeds {
            let full = (model.expected(labels) + gaussian(&mut rng, model.seed_noise_sd)).clamp(0.0, 1.0);
            let label_h = labels / model.label_rate;
            let mut record = RunRecord::new(format!("syn{:03}_l{labels}_s{seed}", records.len()), seed)
                .with_budget(BudgetAllocation::new(label_h, 0.0, 0.0)?)
                .with_full(MetricSet::from_values([MetricValue::new(&model.metric, full)?])?);
            for (&slice, &sd) in &model.slice_noise_sd {
                let v = if slice.is_full() {
                    full
                } else {
                    (full + gaussian(&mut rng, sd)).clamp(0.0, 1.0)
                };
                record = record.with_slice(slice, MetricSet::from_values([MetricValue::new(&model.metric, v)?])?);
            }
            records.push(record);
        }
    }
    pool_from_records(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub n_sentinel: u32,
    pub cycles: u64,
    pub units: f64,
    pub naive_units: f64,
    pub savings_pct: i64,
    pub sentinels: u64,
    pub fallbacks: u64,
    pub reverted_cycles: u64,
    pub silent_mispromotions: u64,
    pub caught_disagreements: u64,
    /// Written separately as JSON-lines.
    #[serde(skip_serializing)]
    pub per_cycle_log: Vec<LedgerEntry>,
}

impl TrajectoryReport {
    pub fn actions(&self) -> Vec<CycleAction> {
        self.per_cycle_log.iter().map(|e| e.action.clone()).collect()
    }

    /// First cycle at which a disagreement was observed by a full run.
    pub fn first_caught_cycle(&self) -> Option<u64> {
        self.per_cycle_log
            .iter()
            .find(|e| e.outcome == Some(Outcome::CaughtDisagreement))
            .map(|e| e.action.cycle_index)
    }
}

/// Drives the protocol for `cycles` cycles. Every drawn record needs full
/// metrics so each cycle can be classified against ground truth.
pub fn run_trajectory(
    pool: &RunPool,
    params: &ProtocolParams,
    spec: &GateSpec,
    cycles: u64,
    rng_seed: u64,
) -> Result<TrajectoryReport> {
    let mut state = ProtocolState::init(params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut log = Vec::with_capacity(cycles as usize);
    let mut caught = 0;
    for cycle in 1..=cycles {
        let record = pool.draw(cycle, &mut rng);
        let truth = decide(&record, Evaluation::Full, spec, None)?;
        let action = state.step(&record, spec, None)?;
        let outcome = classify_outcome(&action, truth);
        state.record_outcome(outcome);
        if outcome == Outcome::CaughtDisagreement {
            caught += 1;
        }
        log.push(LedgerEntry {
            action,
            cumulative_cost: state.cost_units(),
            outcome: Some(outcome),
        });
    }

    let actions: Vec<_> = log.iter().map(|e| e.action.clone()).collect();
    let cost = trajectory_cost(&actions, params.alpha_f64());
    let counters = state.counters();
    debug_assert_eq!(
        counters.fallbacks as usize,
        actions
            .iter()
            .filter(|a| a.reason_full == Some(FullReason::BoundaryFallback))
            .count()
    );
    Ok(TrajectoryReport {
        n_sentinel: params.n_sentinel,
        cycles,
        units: cost.units,
        naive_units: cost.naive_units,
        savings_pct: cost.savings_pct,
        sentinels: counters.sentinels,
        fallbacks: counters.fallbacks,
        reverted_cycles: counters.reverted_cycles,
        silent_mispromotions: counters.silent_mispromotions,
        caught_disagreements: caught,
        per_cycle_log: log,
    })
}

/// One trajectory per sentinel period, in ascending `N` order.
pub fn sweep_sentinel_periods(
    pool: &RunPool,
    params_base: &ProtocolParams,
    spec: &GateSpec,
    ns: &[u32],
    cycles: u64,
    rng_seed: u64,
) -> Result<Vec<TrajectoryReport>> {
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    std::thread::scope(|scope| {
        let handles: Vec<_> = ns
            .iter()
            .map(|&n| {
                scope.spawn(move || {
                    let params = params_base.clone().with_sentinel_period(n)?;
                    run_trajectory(pool, &params, spec, cycles, rng_seed)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trajectory thread panicked"))
            .collect()
    })
}

/// Writes `n,units,naive,savings_pct,sentinels,fallbacks,silent,caught`.
pub fn write_reports_csv<W: Write>(reports: &[TrajectoryReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "units",
        "naive",
        "savings_pct",
        "sentinels",
        "fallbacks",
        "silent",
        "caught",
    ])?;
    for r in reports {
        w.write_record([
            r.n_sentinel.to_string(),
            format!("{:.1}", r.units),
            format!("{:.0}", r.naive_units),
            r.savings_pct.to_string(),
            r.sentinels.to_string(),
            r.fallbacks.to_string(),
            r.silent_mispromotions.to_string(),
            r.caught_disagreements.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub tau_label: f64,
    pub best: f64,
    pub mean: f64,
    pub n_runs: usize,
    /// `None` for the smallest-budget (base) group.
    pub gain_pct: Option<i64>,
}

/// Best and mean full-evaluation metric per label budget, with each group's
/// share of the gain from the smallest budget's best to the largest
/// budget's best.
pub fn pareto_summary(records: &[RunRecord], metric: &str) -> Result<Vec<ParetoRow>> {
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.budget.label_h.total_cmp(&b.budget.label_h));
    for r in sorted {
        let v = r.full_metrics()?.require(metric)?;
        match rows.last_mut() {
            Some((tau, vals)) if *tau == r.budget.label_h => vals.push(v),
            _ => rows.push((r.budget.label_h, vec![v])),
        }
    }
    if rows.len() < 2 {
        return Err(Error::DegenerateRange(format!(
            "need at least two label-budget groups, found {}",
            rows.len()
        )));
    }
    let best = |vals: &[f64]| vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base_best = best(&rows[0].1);
    let max_best = best(&rows[rows.len() - 1].1);
    let span = max_best - base_best;
    if span == 0.0 {
        return Err(Error::DegenerateRange("largest-budget best equals base best".into()));
    }
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, (tau, vals))| {
            let b = best(vals);
            ParetoRow {
                tau_label: *tau,
                best: b,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                n_runs: vals.len(),
                gain_pct: (i > 0).then(|| (100.0 * (b - base_best) / span).round() as i64),
            }
        })
        .collect())
}

pub fn write_pareto_csv<W: Write>(rows: &[ParetoRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau_label", "best", "mean", "n", "gain_pct"])?;
    for r in rows {
        w.write_record([
            format!("{:.2}", r.tau_label),
            format!("{:.4}", r.best),
            format!("{:.4}", r.mean),
            r.n_runs.to_string(),
            r.gain_pct.map_or_else(|| "base".to_string(), |g| g.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

/// Builders for constructed pools with known protocol behavior.
pub mod fixtures {
    use super::*;
    use crate::metering::PowerTrace;

    /// Sequential pool of `cycles` records for an `accuracy >= 0.80` gate at
    /// the given slice. Records drawn at `boundary_cycles` sit 0.01 above the
    /// bound (inside a 0.02 margin); all others sit at 0.93. Partial and full
    /// verdicts agree everywhere.
    pub fn boundary_pool(cycles: u64, slice: SliceFraction, boundary_cycles: &[u64]) -> Result<RunPool> {
        let records = (1..=cycles)
            .map(|c| {
                let (partial, full) = if boundary_cycles.contains(&c) {
                    (0.81, 0.82)
                } else {
                    (0.93, 0.93)
                };
                accuracy_record(&format!("cycle{c:03}"), c as i64, slice, partial, full)
            })
            .collect();
        pool_from_records(records)
    }

    pub fn accuracy_record(id: &str, seed: i64, slice: SliceFraction, partial: f64, full: f64) -> RunRecord {
        RunRecord::new(id, seed)
            .with_full(MetricSet::of(&[("accuracy", full)]))
            .with_slice(slice, MetricSet::of(&[("accuracy", partial)]))
    }

    /// `n` records whose full and slice evaluations split the given totals
    /// evenly, each drawn at constant power.
    pub fn energy_pool(
        n: usize,
        slice: SliceFraction,
        (full_s, full_wh): (f64, f64),
        (slice_s, slice_wh): (f64, f64),
    ) -> Result<Vec<RunRecord>> {
        let full_w = full_wh * 3600.0 / full_s;
        let slice_w = slice_wh * 3600.0 / slice_s;
        (0..n)
            .map(|i| {
                accuracy_record(&format!("run{i:03}"), i as i64, slice, 0.9, 0.9)
                    .with_timing(Evaluation::Full, full_s / n as f64)
                    .with_timing(Evaluation::Slice(slice), slice_s / n as f64)
                    .with_trace(Evaluation::Full, PowerTrace::constant(full_w)?)
                    .with_trace(Evaluation::Slice(slice), PowerTrace::constant(slice_w)?)
                    .validate()
            })
            .collect()
    }

    /// Three seeds per label budget from `(tau_label, best, mean)` rows: one
    /// run at `best`, two sharing the remainder so the group mean is `mean`.
    pub fn pareto_pool(rows: &[(f64, f64, f64)]) -> Result<Vec<RunRecord>> {
        let mut out = Vec::with_capacity(rows.len() * 3);
        for &(tau, best, mean) in rows {
            let rest = (3.0 * mean - best) / 2.0;
            for (seed, acc) in [(7, best), (42, rest), (123, rest)] {
                let record = RunRecord::new(format!("tl{tau:.2}_s{seed}"), seed)
                    .with_budget(BudgetAllocation::new(tau, 1.0, 0.1)?)
                    .with_full(MetricSet::of(&[("accuracy", acc)]));
                out.push(record.validate()?);
            }
        }
        Ok(out)
    }

    /// Best and mean accuracy per label budget for the LLaMA sweep.
    pub const LLAMA_PARETO: [(f64, f64, f64); 5] = [
        (0.05, 0.8028, 0.7022),
        (0.10, 0.9071, 0.8761),
        (0.20, 0.9266, 0.9193),
        (0.50, 0.9530, 0.9346),
        (1.00, 0.9553, 0.9457),
    ];

    /// Post-calibration cycles that avoid sentinel positions for every
    /// period in {5, 10, 20, 50, 100} with `K = 10`.
    pub const ACCEPTANCE_BOUNDARY_CYCLES: [u64; 5] = [13, 32, 47, 68, 84];
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn tenth() -> SliceFraction {
        "0.10".parse().unwrap()
    }

    fn spec() -> GateSpec {
        GateSpec::at_least("accuracy", 0.80, 0.02).unwrap()
    }

    fn params(n: u32, eps: f64) -> ProtocolParams {
        ProtocolParams::new(10, n, tenth(), eps).unwrap()
    }

    #[test]
    fn pool_errors() {
        assert!(matches!(pool_from_records(vec![]), Err(Error::EmptyPool)));
        let a = accuracy_record("a", 1, tenth(), 0.9, 0.9);
        assert!(matches!(
            pool_from_records(vec![a.clone(), a]),
            Err(Error::DuplicateRunId(_))
        ));
    }

    #[test]
    fn headline_trajectory() {
        let pool = boundary_pool(100, tenth(), &ACCEPTANCE_BOUNDARY_CYCLES).unwrap();
        let r = run_trajectory(&pool, &params(10, 0.02), &spec(), 100, 0).unwrap();
        assert!((r.units - 34.0).abs() < 1e-9);
        assert_eq!(r.savings_pct, 66);
        assert_eq!((r.sentinels, r.fallbacks, r.silent_mispromotions), (9, 5, 0));
    }

    #[test]
    fn pure_calibration() {
        let pool = boundary_pool(100, tenth(), &[]).unwrap();
        let r = run_trajectory(&pool, &params(10, 0.02), &spec(), 10, 0).unwrap();
        assert!((r.units - 11.0).abs() < 1e-9);
    }

    #[test]
    fn forced_silent_mispromotion() {
        let mut records: Vec<_> = (1..=100)
            .map(|c| accuracy_record(&format!("c{c}"), c, tenth(), 0.93, 0.93))
            .collect();
        records[22] = accuracy_record("bad", 23, tenth(), 0.85, 0.75);
        let pool = pool_from_records(records).unwrap();
        let r = run_trajectory(&pool, &params(10, 0.0), &spec(), 100, 0).unwrap();
        assert_eq!(r.silent_mispromotions, 1);
        assert_eq!(r.caught_disagreements, 0);
    }

    #[test]
    fn sweep_table() {
        let pool = boundary_pool(100, tenth(), &ACCEPTANCE_BOUNDARY_CYCLES).unwrap();
        let reports = sweep_sentinel_periods(&pool, &params(10, 0.02), &spec(), &[100, 5, 20, 10, 50], 100, 0).unwrap();
        let units: Vec<f64> = reports.iter().map(|r| r.units).collect();
        let expected = [43.0, 34.0, 29.0, 26.0, 25.0];
        for (u, e) in units.iter().zip(expected) {
            assert!((u - e).abs() < 1e-9, "{u} vs {e}");
        }
        let savings: Vec<i64> = reports.iter().map(|r| r.savings_pct).collect();
        assert_eq!(savings, vec![57, 66, 71, 74, 75]);
        assert!(reports.iter().all(|r| r.fallbacks == 5));
        assert!(sweep_sentinel_periods(&pool, &params(10, 0.02), &spec(), &[], 100, 0)
            .unwrap()
            .is_empty());
        let single = sweep_sentinel_periods(&pool, &params(10, 0.02), &spec(), &[100], 100, 0).unwrap();
        assert!(single[0].sentinels <= 1);
    }

    #[test]
    fn drift_examples() {
        let pool = boundary_pool(100, tenth(), &[]).unwrap();
        let zero = inject_drift(
            &pool,
            DriftSpec::new(5, [("accuracy".into(), 0.0)].into(), DriftLayer::Slices).unwrap(),
        );
        assert_eq!(zero, pool);

        let late = inject_drift(
            &pool,
            DriftSpec::new(500, [("accuracy".into(), -0.5)].into(), DriftLayer::Slices).unwrap(),
        );
        let a = run_trajectory(&pool, &params(10, 0.0), &spec(), 100, 0).unwrap();
        let b = run_trajectory(&late, &params(10, 0.0), &spec(), 100, 0).unwrap();
        assert_eq!(a, b);

        let shifted = inject_drift(
            &pool,
            DriftSpec::new(20, [("accuracy".into(), -0.20)].into(), DriftLayer::Slices).unwrap(),
        );
        let r = run_trajectory(&shifted, &params(10, 0.0), &spec(), 100, 0).unwrap();
        let caught = r.first_caught_cycle().unwrap();
        assert!((20..=30).contains(&caught), "caught at {caught}");
        assert_eq!(caught, 20);
    }

    #[test]
    fn full_layer_drift_keeps_slice_one_consistent() {
        let r = RunRecord::new("r", 0)
            .with_full(MetricSet::of(&[("accuracy", 0.9)]))
            .with_slice(SliceFraction::FULL, MetricSet::of(&[("accuracy", 0.9)]))
            .with_slice(tenth(), MetricSet::of(&[("accuracy", 0.9)]));
        let pool = pool_from_records(vec![r]).unwrap();
        let d = inject_drift(
            &pool,
            DriftSpec::new(1, [("accuracy".into(), -0.1)].into(), DriftLayer::Full).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let drawn = d.draw(1, &mut rng);
        assert!(validate_run_record(drawn.clone()).is_ok());
        assert!((drawn.full_metrics().unwrap().get("accuracy").unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(drawn.slice_metrics(tenth()).unwrap().get("accuracy"), Some(0.9));
    }

    fn model(seed_sd: f64, slice_sd: f64) -> QualityModel {
        QualityModel {
            metric: "accuracy".into(),
            base: 0.80,
            ceiling: 0.96,
            saturation_scale: 300.0,
            label_rate: 1200.0,
            seed_noise_sd: seed_sd,
            slice_noise_sd: [(tenth(), slice_sd)].into(),
        }
    }

    #[test]
    fn synth_curve_shape() {
        let m = model(0.0, 0.0);
        assert!((m.expected(1200.0) - 0.957_069).abs() < 1e-6);
        assert_eq!(m.expected(0.0), 0.80);
        assert!((m.expected(1e9) - 0.96).abs() < 1e-12);
        let pool = synth_pool(&m, &[0.0, 1200.0], &[7], 1).unwrap();
        let full: Vec<f64> = pool
            .records()
            .iter()
            .map(|r| r.full_metrics().unwrap().get("accuracy").unwrap())
            .collect();
        assert_eq!(full[0], 0.80);
        assert!((pool.records()[1].budget.label_h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synth_is_deterministic_and_validated() {
        let m = model(0.01, 0.02);
        let a = synth_pool(&m, &[60.0, 120.0, 1200.0], &[7, 8, 9], 42).unwrap();
        let b = synth_pool(&m, &[60.0, 120.0, 1200.0], &[7, 8, 9], 42).unwrap();
        let c = synth_pool(&m, &[60.0, 120.0, 1200.0], &[7, 8, 9], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 9);

        let bad = QualityModel {
            base: 0.97,
            ..model(0.0, 0.0)
        };
        assert!(matches!(synth_pool(&bad, &[1.0], &[1], 0), Err(Error::InvalidModel(_))));
        let bad = QualityModel {
            saturation_scale: 0.0,
            ..model(0.0, 0.0)
        };
        assert!(synth_pool(&bad, &[1.0], &[1], 0).is_err());
    }

    #[test]
    fn random_sampling_is_seeded() {
        let m = model(0.01, 0.03);
        let pool = synth_pool(&m, &[60.0, 120.0, 240.0, 600.0, 1200.0], &[7, 8, 9], 5)
            .unwrap()
            .with_sampling(Sampling::SeededRandomWithReplacement);
        let p = params(10, 0.02);
        let a = run_trajectory(&pool, &p, &spec(), 100, 11).unwrap();
        let b = run_trajectory(&pool, &p, &spec(), 100, 11).unwrap();
        assert_eq!(a, b);
        let replay = trajectory_cost(&a.actions(), p.alpha_f64());
        assert_eq!(replay.units, a.units);
    }

    fn grouped(bests: &[(f64, f64)]) -> Vec<RunRecord> {
        bests
            .iter()
            .enumerate()
            .flat_map(|(i, (tau, best))| {
                [0.0, 0.05].into_iter().enumerate().map(move |(j, off)| {
                    RunRecord::new(format!("g{i}_{j}"), j as i64)
                        .with_budget(BudgetAllocation::new(*tau, 0.5, 0.1).unwrap())
                        .with_full(MetricSet::of(&[("accuracy", best - off)]))
                })
            })
            .collect()
    }

    #[test]
    fn pareto_gains() {
        let recs = grouped(&[
            (0.05, 0.8028),
            (0.10, 0.9071),
            (0.20, 0.9266),
            (0.50, 0.9530),
            (1.00, 0.9553),
        ]);
        let rows = pareto_summary(&recs, "accuracy").unwrap();
        let gains: Vec<_> = rows.iter().map(|r| r.gain_pct).collect();
        assert_eq!(gains, vec![None, Some(68), Some(81), Some(98), Some(100)]);
        assert!((rows[1].mean - (0.9071 + 0.8571) / 2.0).abs() < 1e-12);

        let one = grouped(&[(0.05, 0.8)]);
        assert!(matches!(
            pareto_summary(&one, "accuracy"),
            Err(Error::DegenerateRange(_))
        ));
        let flat = grouped(&[(0.05, 0.8), (0.1, 0.8)]);
        assert!(matches!(
            pareto_summary(&flat, "accuracy"),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn reports_csv_layout() {
        let pool = boundary_pool(100, tenth(), &ACCEPTANCE_BOUNDARY_CYCLES).unwrap();
        let reports = sweep_sentinel_periods(&pool, &params(10, 0.02), &spec(), &[5, 10], 100, 0).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "n,units,naive,savings_pct,sentinels,fallbacks,silent,caught\n\
             5,43.0,100,57,18,5,0,0\n\
             10,34.0,100,66,9,5,0,0\n"
        );
    }
}
