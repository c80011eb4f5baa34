//! Time-boxed promotion gates for continual model adaptation.
//!
//! A candidate model is promoted only if its steps fit the decision window
//! and its metrics pass the gate. Evaluating on a small slice of the
//! evaluation set is cheaper; the protocol in [`protocol`] decides when the
//! slice verdict can be trusted and falls back to full evaluation otherwise.
//!
//! ```
//! use timegate::{GateSpec, MetricSet};
//!
//! let gate = GateSpec::at_least("accuracy", 0.80, 0.02).unwrap();
//! assert!(gate.evaluate(&MetricSet::of(&[("accuracy", 0.84)]), None).unwrap());
//! assert!(!gate.evaluate(&MetricSet::of(&[("accuracy", 0.79)]), None).unwrap());
//! ```

pub mod budget;
pub mod error;
pub mod gates;
pub mod metering;
pub mod msignal;
pub mod protocol;
pub mod shell;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use gates::{GateMode, GateSpec, RelativeDelta};
pub use protocol::{CycleAction, Phase, ProtocolParams, ProtocolState};
pub use types::{
    BudgetAllocation, Decision, Direction, Evaluation, MetricSet, MetricValue, RunRecord, SliceFraction, Step,
    ThresholdSpec,
};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct Readme;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/budget.md")]
    mod budget {}
    #[doc = include_str!("../../../book/src/gates.md")]
    mod gates {}
    #[doc = include_str!("../../../book/src/m-signal.md")]
    mod m_signal {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/metering.md")]
    mod metering {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
