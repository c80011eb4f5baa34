//! YAML configuration.
//!
//! Every section is optional; defaults are the LLM fine-tuning setup:
//! `accuracy >= 0.80`, `K = N = 10`, a 10% slice, `epsilon = 0.02`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::budget::{ScopeModel, Stage, StageRanges};
use crate::error::{Error, Result};
use crate::gates::{GateMode, GateSpec, RelativeDelta};
use crate::protocol::{ProtocolParams, DEFAULT_TARGET_AGREEMENT};
use crate::simulator::{DriftSpec, QualityModel, Sampling};
use crate::types::{Direction, SliceFraction, Step, ThresholdSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub gate: GateConfig,
    pub protocol: ProtocolConfig,
    pub sweep: SweepConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<StagesConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleSection>,
    pub simulate: SimulateConfig,
    pub energy: EnergyConfig,
    pub pareto: ParetoConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Inferred from which lists are non-empty when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<GateMode>,
    pub thresholds: Vec<ThresholdSpec>,
    pub relative: Vec<RelativeEntry>,
    pub epsilon: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mode: None,
            thresholds: vec![ThresholdSpec {
                metric: "accuracy".into(),
                bound: 0.80,
                direction: Direction::AtLeast,
            }],
            relative: Vec::new(),
            epsilon: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeEntry {
    pub metric: String,
    pub min_improvement: f64,
    /// Defaults to the direction of a threshold on the same metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub k: u32,
    pub n: u32,
    pub alpha: SliceFraction,
    pub target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n: 10,
            alpha: SliceFraction::from_ratio(1, 10).expect("valid"),
            target: DEFAULT_TARGET_AGREEMENT,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub metric: String,
    pub direction: Direction,
    pub bounds: Vec<f64>,
    pub slices: Vec<SliceFraction>,
    /// Sentinel periods for the `sweep` command.
    pub ns: Vec<u32>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let slice = |n| SliceFraction::from_ratio(n, 100).expect("valid");
        Self {
            metric: "accuracy".into(),
            direction: Direction::AtLeast,
            bounds: vec![0.50, 0.60, 0.70, 0.80, 0.85, 0.90, 0.95],
            slices: vec![slice(10), slice(20), slice(30), slice(50)],
            ns: vec![5, 10, 20, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagesConfig {
    pub label: StageConfig,
    pub train: StageConfig,
    pub eval: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub rate: f64,
    #[serde(default)]
    pub setup_h: f64,
    pub range: Vec<f64>,
}

impl StagesConfig {
    pub fn ranges(&self) -> Result<StageRanges> {
        StageRanges::new(
            self.label.range.clone(),
            self.train.range.clone(),
            self.eval.range.clone(),
        )
    }

    pub fn scope_models(&self) -> Result<[ScopeModel; 3]> {
        Ok([
            ScopeModel::new(Stage::Label, self.label.rate, self.label.setup_h)?,
            ScopeModel::new(Stage::Train, self.train.rate, self.train.setup_h)?,
            ScopeModel::new(Stage::Eval, self.eval.rate, self.eval.setup_h)?,
        ])
    }
}

/// Decision window and step list for the feasibility conjunct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSection {
    pub delta_tau_h: f64,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub cycles: u64,
    pub sampling: Sampling,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
    /// Generate the pool instead of reading `io.metrics`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            cycles: 100,
            sampling: Sampling::Sequential,
            drift: None,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub model: QualityModel,
    pub labels: Vec<f64>,
    pub seeds: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub slice: SliceFraction,
    pub cycles_per_year: f64,
    pub candidates_per_cycle: f64,
    pub families: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            slice: SliceFraction::from_ratio(1, 10).expect("valid"),
            cycles_per_year: 365.0,
            candidates_per_cycle: 1.0,
            families: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    pub metric: String,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            metric: "accuracy".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Config {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let cfg: Config = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let gate = self.gate_spec()?;
        self.protocol_params()?;
        let gated: Vec<&str> = gate
            .thresholds
            .iter()
            .map(|t| t.metric.as_str())
            .chain(gate.relative_deltas.iter().map(|d| d.metric.as_str()))
            .collect();
        if !gated.contains(&self.sweep.metric.as_str()) {
            return Err(Error::Config(format!(
                "sweep.metric {:?} is not gated by any threshold",
                self.sweep.metric
            )));
        }
        if let Some(syn) = &self.simulate.synthetic {
            if !gated.contains(&syn.model.metric.as_str()) {
                return Err(Error::Config(format!(
                    "synthetic model metric {:?} is not gated",
                    syn.model.metric
                )));
            }
        }
        if let Some(stages) = &self.stages {
            stages.ranges()?;
            stages.scope_models()?;
        }
        if let Some(cycle) = &self.cycle {
            crate::types::CycleConfig::new(cycle.delta_tau_h, cycle.steps.clone(), gate)?;
        }
        Ok(())
    }

    pub fn gate_spec(&self) -> Result<GateSpec> {
        let g = &self.gate;
        let mode = g
            .mode
            .unwrap_or(match (g.thresholds.is_empty(), g.relative.is_empty()) {
                (false, true) => GateMode::Absolute,
                (true, false) => GateMode::Relative,
                _ => GateMode::Both,
            });
        let thresholds = g
            .thresholds
            .iter()
            .map(|t| ThresholdSpec::new(t.metric.clone(), t.bound, t.direction))
            .collect::<Result<Vec<_>>>()?;
        let deltas = g
            .relative
            .iter()
            .map(|r| {
                let direction = r.direction.unwrap_or_else(|| {
                    thresholds
                        .iter()
                        .find(|t| t.metric == r.metric)
                        .map_or(Direction::AtLeast, |t| t.direction)
                });
                RelativeDelta {
                    metric: r.metric.clone(),
                    min_improvement: r.min_improvement,
                    direction,
                }
            })
            .collect();
        GateSpec::new(mode, thresholds, deltas, g.epsilon)
    }

    /// Protocol parameters; the boundary margin comes from `gate.epsilon`.
    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let p = &self.protocol;
        ProtocolParams {
            k_calibration: p.k,
            n_sentinel: p.n,
            alpha: p.alpha,
            epsilon: self.gate.epsilon,
            target_agreement: p.target,
            rolling_window: p.window,
        }
        .validated()
    }
}
