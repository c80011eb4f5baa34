//! Step-cost arithmetic, cycle feasibility, scope functions and allocation
//! grids.
//!
//! A cycle's feasible family is every step subset that contains all
//! mandatory steps and whose summed cost fits the decision window. Because
//! step costs are non-negative, that family is non-empty exactly when the
//! mandatory steps alone fit: optional steps can always be dropped.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_unique_step_ids, BudgetAllocation, Step};

pub fn step_cost(step: &Step) -> f64 {
    step.setup_h + step.exec_h
}

fn mandatory_cost(steps: &[Step]) -> f64 {
    steps.iter().filter(|s| s.mandatory).map(step_cost).sum()
}

/// True iff some superset of the mandatory steps fits within `delta_tau_h`.
pub fn exists_feasible(steps: &[Step], delta_tau_h: f64) -> bool {
    mandatory_cost(steps) <= delta_tau_h
}

/// Mandatory steps plus the longest prefix of `priority` that still fits.
///
/// The prefix stops at the first optional step that would overflow the
/// window; later, cheaper steps are not considered.
pub fn max_feasible_set(steps: &[Step], delta_tau_h: f64, priority: &[&str]) -> Result<BTreeSet<String>> {
    check_unique_step_ids(steps)?;
    let required = mandatory_cost(steps);
    if required > delta_tau_h {
        return Err(Error::Infeasible {
            required_h: required,
            delta_tau_h,
        });
    }

    let optional: BTreeSet<&str> = steps.iter().filter(|s| !s.mandatory).map(|s| s.id.as_str()).collect();
    let ordered: BTreeSet<&str> = priority.iter().copied().collect();
    if ordered.len() != priority.len() {
        return Err(Error::InvalidPriority("repeated step id".into()));
    }
    if ordered != optional {
        return Err(Error::InvalidPriority(
            "must list every optional step exactly once".into(),
        ));
    }

    let mut chosen: BTreeSet<String> = steps.iter().filter(|s| s.mandatory).map(|s| s.id.clone()).collect();
    let mut total = required;
    for id in priority {
        let step = steps.iter().find(|s| s.id == *id).expect("checked above");
        let next = total + step_cost(step);
        if next > delta_tau_h {
            break;
        }
        total = next;
        chosen.insert(step.id.clone());
    }
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Label,
    Train,
    Eval,
}

/// Linear-with-setup map from stage time to capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopeModel {
    pub stage: Stage,
    /// Capacity units per hour: items, steps, or validation fraction.
    pub rate: f64,
    pub setup_h: f64,
}

impl ScopeModel {
    pub fn new(stage: Stage, rate: f64, setup_h: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::invalid("rate", "must be finite and >= 0"));
        }
        if !(setup_h.is_finite() && setup_h >= 0.0) {
            return Err(Error::invalid("setup_h", "must be finite and >= 0"));
        }
        Ok(Self { stage, rate, setup_h })
    }

    pub fn capacity(&self, tau_h: f64) -> f64 {
        scope_capacity(self, tau_h)
    }
}

pub fn scope_capacity(model: &ScopeModel, tau_h: f64) -> f64 {
    model.rate * (tau_h - model.setup_h).max(0.0)
}

/// Fit a scope model from `(hours, achieved units)` observations.
///
/// One usable point gives a pure ratio. Two or more distinct durations give
/// an ordinary least-squares line `units = rate * (tau - setup)`, with both
/// parameters clamped at zero. If every point shares the same duration the
/// fit is degenerate and the largest-duration point's ratio is used.
pub fn estimate_rate(stage: Stage, telemetry: &[(f64, f64)]) -> Result<ScopeModel> {
    let points: Vec<(f64, f64)> = telemetry
        .iter()
        .copied()
        .filter(|(t, u)| t.is_finite() && u.is_finite() && *t >= 0.0)
        .collect();
    let largest = points
        .iter()
        .copied()
        .filter(|(t, _)| *t > 0.0)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(Error::NoTelemetry)?;
    let ratio = || ScopeModel::new(stage, (largest.1 / largest.0).max(0.0), 0.0);

    if points.len() < 2 {
        return ratio();
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_u = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    if sxx <= f64::EPSILON * mean_t.abs().max(1.0) {
        return ratio();
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_u)).sum();
    let slope = sxy / sxx;
    let intercept = mean_u - slope * mean_t;
    let rate = slope.max(0.0);
    let setup_h = if rate > 0.0 { (-intercept / rate).max(0.0) } else { 0.0 };
    ScopeModel::new(stage, rate, setup_h)
}

/// Candidate hours per stage; each list non-empty and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRanges {
    pub label_hs: Vec<f64>,
    pub train_hs: Vec<f64>,
    pub eval_hs: Vec<f64>,
}

impl StageRanges {
    pub fn new(label_hs: Vec<f64>, train_hs: Vec<f64>, eval_hs: Vec<f64>) -> Result<Self> {
        for (name, list) in [("label", &label_hs), ("train", &train_hs), ("eval", &eval_hs)] {
            if list.is_empty() {
                return Err(Error::invalid(format!("{name} range"), "must be non-empty"));
            }
            if list.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("{name} range"), "values must be >= 0"));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("{name} range"), "must be strictly increasing"));
            }
        }
        Ok(Self {
            label_hs,
            train_hs,
            eval_hs,
        })
    }
}

/// Every (label, train, eval) combination whose total fits the window, in
/// lexicographic order.
pub fn allocation_grid(ranges: &StageRanges, delta_tau_h: f64) -> Vec<BudgetAllocation> {
    let mut grid = Vec::new();
    for &label_h in &ranges.label_hs {
        for &train_h in &ranges.train_hs {
            for &eval_h in &ranges.eval_hs {
                if label_h + train_h + eval_h <= delta_tau_h {
                    grid.push(BudgetAllocation {
                        label_h,
                        train_h,
                        eval_h,
                    });
                }
            }
        }
    }
    grid
}
