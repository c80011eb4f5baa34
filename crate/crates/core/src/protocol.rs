//! Four-phase partial-evaluation protocol.
//!
//! 1. Calibration: for `K` cycles run both the partial slice and the full
//!    evaluation, recording M each time.
//! 2. Partial-only: once calibration agreement reaches the target, the
//!    partial slice becomes the gate.
//! 3. Sentinel audits: every `N` cycles after calibration, the full
//!    evaluation runs again.
//! 4. Boundary fallback: when a partial metric is within `epsilon` of its
//!    bound, the full evaluation runs that cycle.
//!
//! With a rolling window `W` configured, a trailing agreement rate below
//! target sends the machine back to dual evaluation until it recovers.
//!
//! Costs are in units of one full evaluation: a partial costs `alpha`, a full
//! costs 1. A cycle escalates to full at most once, however many triggers
//! fire.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{boundary_proximity, GateSpec};
use crate::msignal::{m_signal, rolling_agreement};
use crate::types::{Decision, MetricSet, RunRecord, SliceFraction};

pub const DEFAULT_TARGET_AGREEMENT: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub k_calibration: u32,
    pub n_sentinel: u32,
    pub alpha: SliceFraction,
    pub epsilon: f64,
    pub target_agreement: f64,
    pub rolling_window: Option<usize>,
}

impl ProtocolParams {
    pub fn new(k_calibration: u32, n_sentinel: u32, alpha: SliceFraction, epsilon: f64) -> Result<Self> {
        Self {
            k_calibration,
            n_sentinel,
            alpha,
            epsilon,
            target_agreement: DEFAULT_TARGET_AGREEMENT,
            rolling_window: None,
        }
        .validated()
    }

    pub fn with_target(mut self, target: f64) -> Result<Self> {
        self.target_agreement = target;
        self.validated()
    }

    pub fn with_window(mut self, window: usize) -> Result<Self> {
        self.rolling_window = Some(window);
        self.validated()
    }

    pub fn with_sentinel_period(mut self, n: u32) -> Result<Self> {
        self.n_sentinel = n;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.k_calibration == 0 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        if self.n_sentinel == 0 {
            return Err(Error::InvalidParams("n must be >= 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParams("epsilon must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.target_agreement) {
            return Err(Error::InvalidParams("target must lie in [0, 1]".into()));
        }
        if self.rolling_window == Some(0) {
            return Err(Error::InvalidParams("window must be >= 1".into()));
        }
        Ok(self)
    }

    pub fn alpha_f64(&self) -> f64 {
        self.alpha.to_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    PartialOnly,
    RevertedDual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullReason {
    Calibration,
    Sentinel,
    BoundaryFallback,
    Reverted,
}

/// What the protocol did in one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAction {
    /// 1-based.
    pub cycle_index: u64,
    pub run_id: String,
    pub phase: Phase,
    pub ran_partial: bool,
    pub ran_full: bool,
    pub reason_full: Option<FullReason>,
    pub partial_decision: Decision,
    /// The full verdict whenever the full evaluation ran, else the partial.
    pub emitted_decision: Decision,
    pub m_observed: Option<u8>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Agreement,
    /// Partial and full verdicts differ and the full evaluation did not run.
    SilentMisPromotion,
    /// Partial and full verdicts differ but the full evaluation ran.
    CaughtDisagreement,
}

pub fn classify_outcome(action: &CycleAction, ground_truth_full: Decision) -> Outcome {
    if action.partial_decision == ground_truth_full {
        Outcome::Agreement
    } else if action.ran_full {
        Outcome::CaughtDisagreement
    } else {
        Outcome::SilentMisPromotion
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub calibration_cycles: u64,
    pub sentinels: u64,
    pub fallbacks: u64,
    pub reverted_cycles: u64,
    pub silent_mispromotions: u64,
    pub conservative_fallbacks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    params: ProtocolParams,
    phase: Phase,
    cycle_index: u64,
    agreement_history: Vec<u8>,
    partial_evals: u64,
    full_evals: u64,
    counters: Counters,
    /// Last cycle evaluated in dual mode; sentinels count from here.
    anchor_cycle: u64,
}

impl ProtocolState {
    pub fn init(params: ProtocolParams) -> Result<Self> {
        let params = params.validated()?;
        Ok(Self {
            params,
            phase: Phase::Calibration,
            cycle_index: 0,
            agreement_history: Vec::new(),
            partial_evals: 0,
            full_evals: 0,
            counters: Counters::default(),
            anchor_cycle: 0,
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Number of completed cycles.
    pub fn cycle_index(&self) -> u64 {
        self.cycle_index
    }

    pub fn agreement_history(&self) -> &[u8] {
        &self.agreement_history
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn cost_units(&self) -> f64 {
        self.partial_evals as f64 * self.params.alpha_f64() + self.full_evals as f64
    }

    /// Empirical P(M = 1) over every recorded observation.
    pub fn empirical_agreement(&self) -> Option<f64> {
        rolling_agreement(&self.agreement_history, self.agreement_history.len().max(1)).ok()
    }

    /// Runs one cycle. On error the state is left untouched.
    pub fn step(&mut self, record: &RunRecord, spec: &GateSpec, baseline: Option<&MetricSet>) -> Result<CycleAction> {
        let cycle = self.cycle_index + 1;
        let alpha = self.params.alpha;
        let partial_metrics = record.slice_metrics(alpha)?;
        let partial = Decision::from_pass(spec.evaluate(partial_metrics, baseline)?);

        let reason = match self.phase {
            Phase::Calibration => Some(FullReason::Calibration),
            Phase::RevertedDual => Some(FullReason::Reverted),
            Phase::PartialOnly => {
                let since = cycle - self.anchor_cycle;
                if since.is_multiple_of(u64::from(self.params.n_sentinel)) {
                    Some(FullReason::Sentinel)
                } else if boundary_proximity(partial_metrics, &spec.thresholds, self.params.epsilon)? {
                    Some(FullReason::BoundaryFallback)
                } else {
                    None
                }
            }
        };

        let (emitted, m) = match reason {
            Some(_) => {
                let full = Decision::from_pass(spec.evaluate(record.full_metrics()?, baseline)?);
                (full, Some(m_signal(partial, full)))
            }
            None => (partial, None),
        };

        let ran_full = reason.is_some();
        let cost = self.params.alpha_f64() + if ran_full { 1.0 } else { 0.0 };
        let action = CycleAction {
            cycle_index: cycle,
            run_id: record.run_id.clone(),
            phase: self.phase,
            ran_partial: true,
            ran_full,
            reason_full: reason,
            partial_decision: partial,
            emitted_decision: emitted,
            m_observed: m,
            cost,
        };

        self.cycle_index = cycle;
        self.partial_evals += 1;
        if ran_full {
            self.full_evals += 1;
        }
        match reason {
            Some(FullReason::Calibration) => self.counters.calibration_cycles += 1,
            Some(FullReason::Sentinel) => self.counters.sentinels += 1,
            Some(FullReason::BoundaryFallback) => self.counters.fallbacks += 1,
            Some(FullReason::Reverted) => self.counters.reverted_cycles += 1,
            None => {}
        }
        if let Some(m) = m {
            self.agreement_history.push(m);
            if m == 0 {
                self.counters.conservative_fallbacks += 1;
            }
        }
        self.transition(cycle, m.is_some());
        Ok(action)
    }

    fn transition(&mut self, cycle: u64, observed: bool) {
        let target = self.params.target_agreement;
        let trailing = |h: &[u8], w| rolling_agreement(h, w).unwrap_or(0.0);
        match self.phase {
            Phase::Calibration => {
                if cycle >= u64::from(self.params.k_calibration) {
                    let agree = self.empirical_agreement().unwrap_or(0.0);
                    if agree >= target {
                        self.phase = Phase::PartialOnly;
                        self.anchor_cycle = cycle;
                    } else {
                        self.phase = Phase::RevertedDual;
                    }
                }
            }
            Phase::RevertedDual => {
                if let Some(w) = self.params.rolling_window {
                    if trailing(&self.agreement_history, w) >= target {
                        self.phase = Phase::PartialOnly;
                        self.anchor_cycle = cycle;
                    }
                }
            }
            Phase::PartialOnly => {
                if let (Some(w), true) = (self.params.rolling_window, observed) {
                    if trailing(&self.agreement_history, w) < target {
                        self.phase = Phase::RevertedDual;
                    }
                }
            }
        }
    }

    /// Feeds back a ground-truth classification, available in replay and
    /// simulation only.
    pub fn record_outcome(&mut self, outcome: Outcome) {
        if outcome == Outcome::SilentMisPromotion {
            self.counters.silent_mispromotions += 1;
        }
    }
}

/// Per-cycle evaluation cost at steady state, as a fraction of one full
/// evaluation: one partial per cycle plus one sentinel amortized over `n`.
pub fn steady_state_cost(alpha: f64, n: u32) -> f64 {
    alpha + 1.0 / f64::from(n)
}

/// `(naive, gated)` per-cycle cost with the evaluation term replaced by its
/// steady-state fraction.
pub fn cycle_cost(c_label: f64, c_train: f64, c_eval_full: f64, alpha: f64, n: u32) -> (f64, f64) {
    let naive = c_label + c_train + c_eval_full;
    let gated = c_label + c_train + steady_state_cost(alpha, n) * c_eval_full;
    (naive, gated)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryCost {
    pub units: f64,
    pub naive_units: f64,
    pub savings_pct: i64,
}

/// Total evaluation cost of a trajectory against one full evaluation per
/// cycle.
pub fn trajectory_cost(actions: &[CycleAction], alpha: f64) -> TrajectoryCost {
    let partials = actions.iter().filter(|a| a.ran_partial).count() as f64;
    let fulls = actions.iter().filter(|a| a.ran_full).count() as f64;
    let units = partials * alpha + fulls;
    let naive_units = actions.len() as f64;
    let savings_pct = if naive_units > 0.0 {
        ((naive_units - units) / naive_units * 100.0).round() as i64
    } else {
        0
    };
    TrajectoryCost {
        units,
        naive_units,
        savings_pct,
    }
}

/// One line of the JSON-lines audit ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    #[serde(flatten)]
    pub action: CycleAction,
    pub cumulative_cost: f64,
    pub outcome: Option<Outcome>,
}

pub fn write_ledger<W: Write>(entries: &[LedgerEntry], mut out: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|err| Error::io("ledger", err))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::decide;
    use crate::types::Evaluation;

    fn tenth() -> SliceFraction {
        "0.10".parse().unwrap()
    }

    fn params(k: u32, n: u32, eps: f64) -> ProtocolParams {
        ProtocolParams::new(k, n, tenth(), eps).unwrap()
    }

    fn rec(id: &str, partial: f64, full: f64) -> RunRecord {
        RunRecord::new(id, 7)
            .with_full(MetricSet::of(&[("accuracy", full)]))
            .with_slice(tenth(), MetricSet::of(&[("accuracy", partial)]))
    }

    fn spec() -> GateSpec {
        GateSpec::at_least("accuracy", 0.80, 0.02).unwrap()
    }

    #[test]
    fn init_validation() {
        let s = ProtocolState::init(params(10, 10, 0.02)).unwrap();
        assert_eq!(s.phase(), Phase::Calibration);
        assert_eq!(s.cycle_index(), 0);
        assert_eq!(s.cost_units(), 0.0);
        assert!(matches!(
            ProtocolParams::new(0, 10, tenth(), 0.02),
            Err(Error::InvalidParams(_))
        ));
        assert!(ProtocolParams::new(1, 1, SliceFraction::FULL, 0.0).is_ok());
        assert!(ProtocolParams::new(1, 0, tenth(), 0.0).is_err());
        assert!(params(1, 1, 0.0).with_window(0).is_err());
    }

    #[test]
    fn calibration_cycle_costs_one_plus_alpha() {
        let mut s = ProtocolState::init(params(10, 10, 0.02)).unwrap();
        for i in 0..3 {
            let a = s.step(&rec(&format!("r{i}"), 0.93, 0.93), &spec(), None).unwrap();
            assert!(a.ran_partial && a.ran_full);
            assert_eq!(a.reason_full, Some(FullReason::Calibration));
            assert_eq!(a.m_observed, Some(1));
            assert!((a.cost - 1.1).abs() < 1e-12);
        }
        assert!((s.cost_units() - 3.3).abs() < 1e-12);
    }

    fn calibrated(k: u32, n: u32, eps: f64) -> ProtocolState {
        let mut s = ProtocolState::init(params(k, n, eps)).unwrap();
        for i in 0..k {
            s.step(&rec(&format!("c{i}"), 0.93, 0.93), &spec(), None).unwrap();
        }
        assert_eq!(s.phase(), Phase::PartialOnly);
        s
    }

    #[test]
    fn steady_state_without_trigger_is_partial_only() {
        let mut s = calibrated(10, 10, 0.02);
        let a = s.step(&rec("x", 0.93, 0.93), &spec(), None).unwrap();
        assert!(!a.ran_full);
        assert_eq!(a.m_observed, None);
        assert!((a.cost - 0.1).abs() < 1e-12);
        assert_eq!(a.emitted_decision, Decision::Promote);
    }

    #[test]
    fn boundary_value_falls_back() {
        let mut s = calibrated(10, 10, 0.02);
        let a = s.step(&rec("x", 0.81, 0.83), &spec(), None).unwrap();
        assert!(a.ran_full);
        assert_eq!(a.reason_full, Some(FullReason::BoundaryFallback));
        assert!((a.cost - 1.1).abs() < 1e-12);
        assert_eq!(s.counters().fallbacks, 1);
    }

    #[test]
    fn sentinel_wins_over_boundary_in_same_cycle() {
        let mut s = calibrated(2, 3, 0.02);
        s.step(&rec("a", 0.93, 0.93), &spec(), None).unwrap();
        s.step(&rec("b", 0.93, 0.93), &spec(), None).unwrap();
        let a = s.step(&rec("c", 0.81, 0.83), &spec(), None).unwrap();
        assert_eq!(a.cycle_index, 5);
        assert_eq!(a.reason_full, Some(FullReason::Sentinel));
        assert!((a.cost - 1.1).abs() < 1e-12);
        assert_eq!(s.counters().sentinels, 1);
        assert_eq!(s.counters().fallbacks, 0);
    }

    #[test]
    fn full_decision_is_emitted_when_full_runs() {
        let mut s = calibrated(2, 100, 0.05);
        // Partial promotes, full holds, near the boundary.
        let a = s.step(&rec("x", 0.82, 0.79), &spec(), None).unwrap();
        assert_eq!(a.partial_decision, Decision::Promote);
        assert_eq!(a.emitted_decision, Decision::Hold);
        assert_eq!(a.m_observed, Some(0));
        assert_eq!(classify_outcome(&a, Decision::Hold), Outcome::CaughtDisagreement);
        assert_eq!(s.counters().conservative_fallbacks, 1);
    }

    #[test]
    fn missing_full_metrics_leave_state_untouched() {
        let mut s = ProtocolState::init(params(2, 10, 0.02)).unwrap();
        let partial_only = RunRecord::new("p", 1).with_slice(tenth(), MetricSet::of(&[("accuracy", 0.9)]));
        let before = s.clone();
        assert!(matches!(
            s.step(&partial_only, &spec(), None),
            Err(Error::FullMetricsMissing(_))
        ));
        assert_eq!(s, before);

        let no_slice = RunRecord::new("q", 1).with_full(MetricSet::of(&[("accuracy", 0.9)]));
        assert!(matches!(
            s.step(&no_slice, &spec(), None),
            Err(Error::SliceMissing { .. })
        ));
    }

    #[test]
    fn partial_only_tolerates_missing_full_when_not_escalating() {
        let mut s = calibrated(2, 10, 0.02);
        let live = RunRecord::new("live", 1).with_slice(tenth(), MetricSet::of(&[("accuracy", 0.93)]));
        let a = s.step(&live, &spec(), None).unwrap();
        assert!(!a.ran_full);
    }

    #[test]
    fn failed_calibration_parks_in_dual() {
        let mut s = ProtocolState::init(params(2, 10, 0.02)).unwrap();
        s.step(&rec("a", 0.93, 0.93), &spec(), None).unwrap();
        s.step(&rec("b", 0.85, 0.75), &spec(), None).unwrap();
        assert_eq!(s.phase(), Phase::RevertedDual);
        for i in 0..20 {
            let a = s.step(&rec(&format!("r{i}"), 0.93, 0.93), &spec(), None).unwrap();
            assert_eq!(a.reason_full, Some(FullReason::Reverted));
        }
        assert_eq!(s.phase(), Phase::RevertedDual);
    }

    #[test]
    fn rolling_window_reverts_and_recovers() {
        let p = params(3, 4, 0.0).with_window(3).unwrap();
        let mut s = ProtocolState::init(p).unwrap();
        for i in 0..3 {
            s.step(&rec(&format!("c{i}"), 0.93, 0.93), &spec(), None).unwrap();
        }
        assert_eq!(s.phase(), Phase::PartialOnly);
        // Cycles 4..6 partial only, cycle 7 is a sentinel that sees a disagreement.
        for i in 0..3 {
            s.step(&rec(&format!("p{i}"), 0.93, 0.93), &spec(), None).unwrap();
        }
        let a = s.step(&rec("bad", 0.90, 0.70), &spec(), None).unwrap();
        assert_eq!(a.reason_full, Some(FullReason::Sentinel));
        assert_eq!(s.phase(), Phase::RevertedDual);
        // Needs three straight agreements to come back.
        for i in 0..2 {
            s.step(&rec(&format!("d{i}"), 0.93, 0.93), &spec(), None).unwrap();
            assert_eq!(s.phase(), Phase::RevertedDual);
        }
        let a = s.step(&rec("d2", 0.93, 0.93), &spec(), None).unwrap();
        assert_eq!(a.reason_full, Some(FullReason::Reverted));
        assert_eq!(s.phase(), Phase::PartialOnly);
        // Sentinel schedule restarts from the recovery cycle (10): next at 14.
        let idx: Vec<_> = (0..4)
            .map(|i| s.step(&rec(&format!("q{i}"), 0.93, 0.93), &spec(), None).unwrap())
            .filter(|a| a.ran_full)
            .map(|a| a.cycle_index)
            .collect();
        assert_eq!(idx, vec![14]);
        assert_eq!(s.counters().reverted_cycles, 3);
    }

    #[test]
    fn outcome_classification() {
        let base = CycleAction {
            cycle_index: 1,
            run_id: "r".into(),
            phase: Phase::PartialOnly,
            ran_partial: true,
            ran_full: false,
            reason_full: None,
            partial_decision: Decision::Promote,
            emitted_decision: Decision::Promote,
            m_observed: None,
            cost: 0.1,
        };
        assert_eq!(classify_outcome(&base, Decision::Hold), Outcome::SilentMisPromotion);
        let ran = CycleAction {
            ran_full: true,
            ..base.clone()
        };
        assert_eq!(classify_outcome(&ran, Decision::Hold), Outcome::CaughtDisagreement);
        assert_eq!(classify_outcome(&base, Decision::Promote), Outcome::Agreement);
    }

    #[test]
    fn steady_state_examples() {
        assert_eq!(steady_state_cost(0.10, 10), 0.20);
        assert_eq!(steady_state_cost(1.0, 1), 2.0);
        assert_eq!(steady_state_cost(0.5, 2), 1.0);
    }

    #[test]
    fn cycle_cost_examples() {
        let (naive, gated) = cycle_cost(0.0, 0.0, 1.0, 0.1, 10);
        assert_eq!((naive, gated), (1.0, 0.2));
        let (naive, gated) = cycle_cost(5.0, 3.0, 1.0, 0.1, 10);
        assert_eq!(naive, 9.0);
        assert!((gated - 8.2).abs() < 1e-12);
        assert_eq!(cycle_cost(0.0, 0.0, 0.0, 0.3, 4), (0.0, 0.0));
    }

    #[test]
    fn trajectory_cost_empty() {
        let c = trajectory_cost(&[], 0.1);
        assert_eq!((c.units, c.naive_units, c.savings_pct), (0.0, 0.0, 0));
    }

    #[test]
    fn decisions_agree_with_gate_module() {
        let mut s = calibrated(1, 1, 0.0);
        let r = rec("x", 0.85, 0.75);
        let a = s.step(&r, &spec(), None).unwrap();
        assert_eq!(a.emitted_decision, decide(&r, Evaluation::Full, &spec(), None).unwrap());
    }

    #[test]
    fn ledger_is_json_lines() {
        let mut s = ProtocolState::init(params(1, 1, 0.0)).unwrap();
        let a = s.step(&rec("x", 0.9, 0.9), &spec(), None).unwrap();
        let entries = vec![LedgerEntry {
            action: a,
            cumulative_cost: s.cost_units(),
            outcome: Some(Outcome::Agreement),
        }];
        let mut buf = Vec::new();
        write_ledger(&entries, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["cycle_index"], 1);
        assert_eq!(v["reason_full"], "calibration");
        assert_eq!(v["outcome"], "agreement");
        assert_eq!(v["m_observed"], 1);
    }

    #[test]
    fn state_serializes_between_steps() {
        let mut s = calibrated(2, 5, 0.02);
        let json = serde_json::to_string(&s).unwrap();
        let mut restored: ProtocolState = serde_json::from_str(&json).unwrap();
        let a = s.step(&rec("x", 0.93, 0.93), &spec(), None).unwrap();
        let b = restored.step(&rec("x", 0.93, 0.93), &spec(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(s, restored);
    }
}
