//! Promotion gates.
//!
//! An absolute gate is a conjunction of direction-aware thresholds; a
//! relative gate requires a minimum improvement over a baseline build. The
//! time-bounded gate additionally requires that the cycle has a feasible step
//! set under its decision window.

use serde::{Deserialize, Serialize};

use crate::budget::exists_feasible;
use crate::error::{Error, Result};
use crate::types::{Decision, Direction, Evaluation, MetricSet, RunRecord, Step, ThresholdSpec};

/// Slack for relative deltas, whose subtraction of two decimal scores is
/// rarely exact in binary floating point (0.593 - 0.573 < 0.02).
pub const RELATIVE_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Absolute,
    Relative,
    Both,
}

impl GateMode {
    pub fn has_absolute(self) -> bool {
        matches!(self, GateMode::Absolute | GateMode::Both)
    }

    pub fn has_relative(self) -> bool {
        matches!(self, GateMode::Relative | GateMode::Both)
    }
}

/// Minimum improvement of a candidate over a baseline. For `AtMost` metrics
/// improvement means reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDelta {
    pub metric: String,
    pub min_improvement: f64,
    #[serde(default = "default_direction")]
    pub direction: Direction,
}

fn default_direction() -> Direction {
    Direction::AtLeast
}

impl RelativeDelta {
    pub fn new(metric: impl Into<String>, min_improvement: f64) -> Self {
        Self {
            metric: metric.into(),
            min_improvement,
            direction: Direction::AtLeast,
        }
    }

    pub fn lower_is_better(mut self) -> Self {
        self.direction = Direction::AtMost;
        self
    }

    fn improvement(&self, candidate: f64, baseline: f64) -> f64 {
        match self.direction {
            Direction::AtLeast => candidate - baseline,
            Direction::AtMost => baseline - candidate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub mode: GateMode,
    pub thresholds: Vec<ThresholdSpec>,
    pub relative_deltas: Vec<RelativeDelta>,
    /// Boundary margin: partial metrics closer than this to a bound force a
    /// full evaluation.
    pub epsilon: f64,
}

impl GateSpec {
    pub fn new(
        mode: GateMode,
        thresholds: Vec<ThresholdSpec>,
        relative_deltas: Vec<RelativeDelta>,
        epsilon: f64,
    ) -> Result<Self> {
        if mode.has_absolute() && thresholds.is_empty() {
            return Err(Error::invalid("gate.thresholds", "required for absolute mode"));
        }
        if mode.has_relative() && relative_deltas.is_empty() {
            return Err(Error::invalid("gate.relative", "required for relative mode"));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::invalid("gate.epsilon", "must be finite and >= 0"));
        }
        unique(thresholds.iter().map(|t| t.metric.as_str()), "gate.thresholds")?;
        unique(relative_deltas.iter().map(|d| d.metric.as_str()), "gate.relative")?;
        for d in &relative_deltas {
            if !d.min_improvement.is_finite() {
                return Err(Error::invalid("gate.relative", "min_improvement must be finite"));
            }
        }
        Ok(Self {
            mode,
            thresholds,
            relative_deltas,
            epsilon,
        })
    }

    pub fn absolute(thresholds: Vec<ThresholdSpec>, epsilon: f64) -> Result<Self> {
        Self::new(GateMode::Absolute, thresholds, Vec::new(), epsilon)
    }

    /// Single `metric >= bound` gate.
    pub fn at_least(metric: &str, bound: f64, epsilon: f64) -> Result<Self> {
        Self::absolute(vec![ThresholdSpec::at_least(metric, bound)?], epsilon)
    }

    /// The gate conjunction for this mode.
    pub fn evaluate(&self, candidate: &MetricSet, baseline: Option<&MetricSet>) -> Result<bool> {
        let abs = if self.mode.has_absolute() {
            gate_absolute(candidate, &self.thresholds)?
        } else {
            true
        };
        let rel = if self.mode.has_relative() {
            let baseline = baseline.ok_or(Error::BaselineMissing)?;
            gate_relative(candidate, baseline, &self.relative_deltas)?
        } else {
            true
        };
        Ok(abs && rel)
    }
}

fn unique<'a>(names: impl Iterator<Item = &'a str>, field: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::invalid(field, format!("metric {n:?} listed twice")));
        }
    }
    Ok(())
}

/// Conjunction of every threshold under its direction.
pub fn gate_absolute(metrics: &MetricSet, thresholds: &[ThresholdSpec]) -> Result<bool> {
    let mut pass = true;
    for t in thresholds {
        pass &= t.passes(metrics.require(&t.metric)?);
    }
    Ok(pass)
}

pub fn gate_relative(candidate: &MetricSet, baseline: &MetricSet, deltas: &[RelativeDelta]) -> Result<bool> {
    let mut pass = true;
    for d in deltas {
        let c = candidate.require(&d.metric)?;
        let b = baseline.require(&d.metric)?;
        pass &= d.improvement(c, b) >= d.min_improvement - RELATIVE_TIE_TOLERANCE;
    }
    Ok(pass)
}

/// Quality gate AND cycle feasibility.
pub fn gate_timeboxed(
    candidate: &MetricSet,
    baseline: Option<&MetricSet>,
    spec: &GateSpec,
    steps: &[Step],
    delta_tau_h: f64,
) -> Result<bool> {
    let quality = spec.evaluate(candidate, baseline)?;
    Ok(exists_feasible(steps, delta_tau_h) && quality)
}

/// Promote/hold for one record at the requested evaluation level.
pub fn decide(record: &RunRecord, eval: Evaluation, spec: &GateSpec, baseline: Option<&MetricSet>) -> Result<Decision> {
    let metrics = match eval {
        Evaluation::Full => record.full_metrics()?,
        Evaluation::Slice(s) => record.slice_metrics(s)?,
    };
    spec.evaluate(metrics, baseline).map(Decision::from_pass)
}

/// True iff any metric lies strictly within `epsilon` of its bound.
pub fn boundary_proximity(metrics: &MetricSet, thresholds: &[ThresholdSpec], epsilon: f64) -> Result<bool> {
    let mut near = false;
    for t in thresholds {
        near |= (metrics.require(&t.metric)? - t.bound).abs() < epsilon;
    }
    Ok(near)
}
