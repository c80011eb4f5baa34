//! Domain types shared by every other module.
//!
//! Nothing here carries behavior beyond construction-time validation. Budgets
//! are in hours, timings in seconds; conversion happens only at interfaces.
//! Slice fractions are exact rationals parsed from decimal strings so that
//! `"0.10"` in one file and `0.1` in another land on the same map key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gates::GateSpec;
use crate::metering::PowerTrace;

/// A named, finite metric score.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("metric name", "must be non-empty"));
        }
        if !value.is_finite() {
            return Err(Error::invalid(format!("metric {name}"), "must be finite"));
        }
        Ok(Self { name, value })
    }
}

/// Metric values keyed by name. Names are unique by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricSet(BTreeMap<String, f64>);

impl MetricSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values(values: impl IntoIterator<Item = MetricValue>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for v in values {
            if map.insert(v.name.clone(), v.value).is_some() {
                return Err(Error::invalid(format!("metric {}", v.name), "duplicate name"));
            }
        }
        Ok(Self(map))
    }

    /// Convenience constructor; panics on invalid input. Intended for tests
    /// and literals.
    pub fn of(pairs: &[(&str, f64)]) -> Self {
        Self::from_values(
            pairs
                .iter()
                .map(|(n, v)| MetricValue::new(*n, *v).expect("valid metric")),
        )
        .expect("unique metric names")
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name).ok_or_else(|| Error::MetricMissing(name.to_string()))
    }

    pub fn insert(&mut self, value: MetricValue) {
        self.0.insert(value.name, value.value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = (&String, &mut f64)> {
        self.0.iter_mut()
    }

    fn validate(&self) -> Result<()> {
        for (name, value) in &self.0 {
            MetricValue::new(name.clone(), *value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Quality metrics: higher is better.
    AtLeast,
    /// Disparity metrics: lower is better.
    AtMost,
}

impl Direction {
    pub fn passes(self, value: f64, bound: f64) -> bool {
        match self {
            Direction::AtLeast => value >= bound,
            Direction::AtMost => value <= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub metric: String,
    pub bound: f64,
    pub direction: Direction,
}

impl ThresholdSpec {
    pub fn new(metric: impl Into<String>, bound: f64, direction: Direction) -> Result<Self> {
        let metric = metric.into();
        if metric.is_empty() {
            return Err(Error::invalid("threshold metric", "must be non-empty"));
        }
        if !bound.is_finite() {
            return Err(Error::invalid(format!("threshold {metric}"), "bound must be finite"));
        }
        Ok(Self {
            metric,
            bound,
            direction,
        })
    }

    pub fn at_least(metric: impl Into<String>, bound: f64) -> Result<Self> {
        Self::new(metric, bound, Direction::AtLeast)
    }

    pub fn at_most(metric: impl Into<String>, bound: f64) -> Result<Self> {
        Self::new(metric, bound, Direction::AtMost)
    }

    /// Tie-inclusive in both directions.
    pub fn passes(&self, value: f64) -> bool {
        self.direction.passes(value, self.bound)
    }
}

/// Hours allotted to each stage of one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub label_h: f64,
    pub train_h: f64,
    pub eval_h: f64,
}

impl BudgetAllocation {
    pub fn new(label_h: f64, train_h: f64, eval_h: f64) -> Result<Self> {
        for (field, v) in [("label_h", label_h), ("train_h", train_h), ("eval_h", eval_h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, "must be finite and >= 0"));
            }
        }
        Ok(Self {
            label_h,
            train_h,
            eval_h,
        })
    }

    pub fn total_h(&self) -> f64 {
        self.label_h + self.train_h + self.eval_h
    }

    pub fn fits(&self, cycle: &CycleConfig) -> bool {
        self.total_h() <= cycle.delta_tau_h
    }
}

/// A fraction of the validation set in (0, 1], held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceFraction(Ratio<u64>);

impl SliceFraction {
    pub const FULL: SliceFraction = SliceFraction(Ratio::new_raw(1, 1));

    pub fn from_ratio(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer == 0 || numer > denom {
            return Err(Error::InvalidSlice(format!("{numer}/{denom}")));
        }
        Ok(Self(Ratio::new(numer, denom)))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn to_f64(self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_full(self) -> bool {
        self == Self::FULL
    }

    /// Smallest power of ten divisible by the denominator, if one exists
    /// within u64 range.
    fn decimal_places(self) -> Option<(u32, u64)> {
        let d = self.denom();
        let mut pow = 1u64;
        for places in 0..=18u32 {
            if pow.is_multiple_of(d) {
                return Some((places, pow));
            }
            pow = pow.checked_mul(10)?;
        }
        None
    }
}

impl FromStr for SliceFraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSlice(s.to_string());
        let t = s.trim();
        let (int_part, frac_part) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int_part) || !all_digits(frac_part) || frac_part.len() > 18 {
            return Err(bad());
        }
        let int: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let denom = 10u64.pow(frac_part.len() as u32);
        let frac: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Self::from_ratio(numer, denom).map_err(|_| bad())
    }
}

impl fmt::Display for SliceFraction {
    /// Decimal with at least two places: `0.10`, `0.05`, `0.125`, `1.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decimal_places() {
            Some((exact_places, pow)) => {
                let places = exact_places.max(2);
                let scaled = self.numer() * (pow / self.denom()) * 10u64.pow(places - exact_places);
                let unit = 10u64.pow(places);
                write!(
                    f,
                    "{}.{:0width$}",
                    scaled / unit,
                    scaled % unit,
                    width = places as usize
                )
            }
            None => write!(f, "{}/{}", self.numer(), self.denom()),
        }
    }
}

impl Serialize for SliceFraction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SliceFraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            // Shortest round-trip repr of 0.1 is "0.1", which parses exactly.
            Raw::Number(n) => format!("{n}"),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Which evaluation a metric, timing or trace belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Evaluation {
    Full,
    Slice(SliceFraction),
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evaluation::Full => f.write_str("full"),
            Evaluation::Slice(s) => s.fmt(f),
        }
    }
}

impl FromStr for Evaluation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("full") {
            Ok(Evaluation::Full)
        } else {
            s.parse().map(Evaluation::Slice)
        }
    }
}

impl Serialize for Evaluation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Evaluation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Promote,
    Hold,
}

impl Decision {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Decision::Promote
        } else {
            Decision::Hold
        }
    }

    pub fn is_promote(self) -> bool {
        self == Decision::Promote
    }
}

/// One trained candidate's telemetry.
///
/// `metrics_full` is `None` when the full evaluation was not run, which is
/// the normal case for a live partial-only cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: i64,
    pub budget: BudgetAllocation,
    pub metrics_full: Option<MetricSet>,
    pub metrics_by_slice: BTreeMap<SliceFraction, MetricSet>,
    pub eval_wallclock_s: BTreeMap<Evaluation, f64>,
    pub power_samples: BTreeMap<Evaluation, PowerTrace>,
    /// Fields from the ingested line that the schema does not know about.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, seed: i64) -> Self {
        Self {
            run_id: run_id.into(),
            seed,
            budget: BudgetAllocation::default(),
            metrics_full: None,
            metrics_by_slice: BTreeMap::new(),
            eval_wallclock_s: BTreeMap::new(),
            power_samples: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_full(mut self, metrics: MetricSet) -> Self {
        self.metrics_full = Some(metrics);
        self
    }

    pub fn with_slice(mut self, slice: SliceFraction, metrics: MetricSet) -> Self {
        self.metrics_by_slice.insert(slice, metrics);
        self
    }

    pub fn with_budget(mut self, budget: BudgetAllocation) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_timing(mut self, key: Evaluation, seconds: f64) -> Self {
        self.eval_wallclock_s.insert(key, seconds);
        self
    }

    pub fn with_trace(mut self, key: Evaluation, trace: PowerTrace) -> Self {
        self.power_samples.insert(key, trace);
        self
    }

    /// Metrics for the requested evaluation, if the record carries them.
    pub fn metrics(&self, eval: Evaluation) -> Option<&MetricSet> {
        match eval {
            Evaluation::Full => self.metrics_full.as_ref(),
            Evaluation::Slice(s) => {
                self.metrics_by_slice
                    .get(&s)
                    .or_else(|| if s.is_full() { self.metrics_full.as_ref() } else { None })
            }
        }
    }

    pub fn slice_metrics(&self, slice: SliceFraction) -> Result<&MetricSet> {
        self.metrics(Evaluation::Slice(slice))
            .ok_or_else(|| Error::SliceMissing {
                run_id: self.run_id.clone(),
                slice,
            })
    }

    pub fn full_metrics(&self) -> Result<&MetricSet> {
        self.metrics_full
            .as_ref()
            .ok_or_else(|| Error::FullMetricsMissing(self.run_id.clone()))
    }

    pub fn validate(self) -> Result<Self> {
        validate_run_record(self)
    }
}

/// Returns the record iff every record invariant holds.
pub fn validate_run_record(raw: RunRecord) -> Result<RunRecord> {
    if raw.run_id.is_empty() {
        return Err(Error::invalid("run_id", "must be non-empty"));
    }
    BudgetAllocation::new(raw.budget.label_h, raw.budget.train_h, raw.budget.eval_h)?;
    if let Some(full) = &raw.metrics_full {
        full.validate()?;
    }
    for (slice, metrics) in &raw.metrics_by_slice {
        metrics.validate()?;
        let Some(full) = &raw.metrics_full else {
            continue;
        };
        if let Some(missing) = full.names().find(|n| metrics.get(n).is_none()) {
            return Err(Error::MissingSliceMetric {
                run_id: raw.run_id.clone(),
                slice: *slice,
                metric: missing.to_string(),
            });
        }
        if slice.is_full() && metrics != full {
            return Err(Error::SliceFullMismatch {
                run_id: raw.run_id.clone(),
            });
        }
    }
    for (key, secs) in &raw.eval_wallclock_s {
        if !(secs.is_finite() && *secs > 0.0) {
            return Err(Error::NonPositiveTiming {
                run_id: raw.run_id.clone(),
                key: *key,
            });
        }
    }
    Ok(raw)
}

/// Rejects the second occurrence of any run id.
pub fn check_unique_run_ids<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.run_id.as_str()) {
            return Err(Error::DuplicateRunId(r.run_id.clone()));
        }
    }
    Ok(())
}

/// A unit of work inside a cycle; cost is setup plus execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub id: String,
    pub setup_h: f64,
    pub exec_h: f64,
    #[serde(default)]
    pub mandatory: bool,
}

impl Step {
    pub fn new(id: impl Into<String>, setup_h: f64, exec_h: f64, mandatory: bool) -> Result<Self> {
        let id = id.into();
        for (field, v) in [("setup_h", setup_h), ("exec_h", exec_h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("step {id} {field}"), "must be finite and >= 0"));
            }
        }
        Ok(Self {
            id,
            setup_h,
            exec_h,
            mandatory,
        })
    }

    pub fn mandatory(id: impl Into<String>, setup_h: f64, exec_h: f64) -> Result<Self> {
        Self::new(id, setup_h, exec_h, true)
    }

    pub fn optional(id: impl Into<String>, setup_h: f64, exec_h: f64) -> Result<Self> {
        Self::new(id, setup_h, exec_h, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleConfig {
    pub delta_tau_h: f64,
    pub steps: Vec<Step>,
    pub gate: GateSpec,
}

impl CycleConfig {
    pub fn new(delta_tau_h: f64, steps: Vec<Step>, gate: GateSpec) -> Result<Self> {
        if !(delta_tau_h.is_finite() && delta_tau_h > 0.0) {
            return Err(Error::invalid("delta_tau_h", "must be > 0"));
        }
        check_unique_step_ids(&steps)?;
        Ok(Self {
            delta_tau_h,
            steps,
            gate,
        })
    }
}

pub(crate) fn check_unique_step_ids(steps: &[Step]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in steps {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid("steps", format!("duplicate step id {:?}", s.id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(s: &str) -> SliceFraction {
        s.parse().unwrap()
    }

    fn acc(v: f64) -> MetricSet {
        MetricSet::of(&[("accuracy", v)])
    }

    #[test]
    fn slice_parsing_is_exact() {
        assert_eq!(slice("0.10"), slice("0.1"));
        assert_eq!(slice("0.10"), SliceFraction::from_ratio(1, 10).unwrap());
        assert_eq!(slice("1"), SliceFraction::FULL);
        assert_eq!(slice("1.000"), SliceFraction::FULL);
        assert!("0".parse::<SliceFraction>().is_err());
        assert!("1.01".parse::<SliceFraction>().is_err());
        assert!("-0.1".parse::<SliceFraction>().is_err());
        assert!(".".parse::<SliceFraction>().is_err());
        assert!("abc".parse::<SliceFraction>().is_err());
    }

    #[test]
    fn slice_display() {
        assert_eq!(slice("0.1").to_string(), "0.10");
        assert_eq!(slice("0.05").to_string(), "0.05");
        assert_eq!(slice("0.125").to_string(), "0.125");
        assert_eq!(slice("0.3").to_string(), "0.30");
        assert_eq!(SliceFraction::FULL.to_string(), "1.00");
        assert_eq!(SliceFraction::from_ratio(1, 3).unwrap().to_string(), "1/3");
    }

    #[test]
    fn slice_from_json_number_or_string() {
        let a: SliceFraction = serde_json::from_str("0.1").unwrap();
        let b: SliceFraction = serde_json::from_str("\"0.10\"").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_directions_are_tie_inclusive() {
        let lo = ThresholdSpec::at_least("f1", 0.5).unwrap();
        assert!(lo.passes(0.5));
        assert!(!lo.passes(0.49));
        let hi = ThresholdSpec::at_most("dp_diff", 0.15).unwrap();
        assert!(hi.passes(0.15));
        assert!(!hi.passes(0.189));
    }

    #[test]
    fn well_formed_record_accepted() {
        let r = RunRecord::new("r1", 7)
            .with_full(acc(0.9))
            .with_slice(slice("0.10"), acc(0.88))
            .with_slice(slice("0.30"), acc(0.91));
        assert!(validate_run_record(r).is_ok());
    }

    #[test]
    fn slice_missing_metric_rejected() {
        let r = RunRecord::new("r1", 7)
            .with_full(MetricSet::of(&[("accuracy", 0.9), ("f1", 0.8)]))
            .with_slice(slice("0.10"), MetricSet::of(&[("f1", 0.8)]));
        match validate_run_record(r) {
            Err(Error::MissingSliceMetric { metric, .. }) => assert_eq!(metric, "accuracy"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_slice_must_equal_full_metrics() {
        let r = RunRecord::new("r1", 7)
            .with_full(acc(0.9))
            .with_slice(SliceFraction::FULL, acc(0.91));
        assert!(matches!(validate_run_record(r), Err(Error::SliceFullMismatch { .. })));
    }

    #[test]
    fn non_positive_timing_rejected() {
        let r = RunRecord::new("r1", 7)
            .with_full(acc(0.9))
            .with_timing(Evaluation::Full, 0.0);
        assert!(matches!(validate_run_record(r), Err(Error::NonPositiveTiming { .. })));
    }

    #[test]
    fn non_finite_metric_rejected() {
        assert!(MetricValue::new("accuracy", f64::NAN).is_err());
        assert!(MetricValue::new("", 0.5).is_err());
    }

    #[test]
    fn duplicate_run_ids_detected() {
        let a = RunRecord::new("x", 1);
        let b = RunRecord::new("x", 2);
        assert!(matches!(
            check_unique_run_ids([&a, &b]),
            Err(Error::DuplicateRunId(id)) if id == "x"
        ));
    }

    #[test]
    fn slice_one_falls_back_to_full() {
        let r = RunRecord::new("r", 0).with_full(acc(0.9));
        assert_eq!(r.metrics(Evaluation::Slice(SliceFraction::FULL)), Some(&acc(0.9)));
    }
}
