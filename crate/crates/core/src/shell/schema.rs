//! JSON-lines metrics schema, one run per line:
//!
//! ```text
//! {"run_id": "tl0.10_tt1.0_s7", "seed": 7,
//!  "budget": {"label_h": 0.1, "train_h": 1.0, "eval_h": 0.1},
//!  "metrics": {"full": {"accuracy": 0.90}, "slices": {"0.10": {"accuracy": 0.89}}},
//!  "timing": {"eval_s": {"full": 7.2, "0.10": 0.8}},
//!  "power": {"full": [[0, 231.0], [7.2, 229.5]], "0.10": "traces/s7_slice.csv"}}
//! ```
//!
//! `metrics.full` must be present; `null` means the full evaluation did not
//! run. `timing` and `power` are optional. A power entry is either inline
//! samples or a path to a `t_s,watts` CSV relative to the metrics file.
//! Unknown top-level fields are kept on the record and written back out.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::metering::PowerTrace;
use crate::types::{validate_run_record, BudgetAllocation, Evaluation, MetricSet, RunRecord, SliceFraction};

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    run_id: String,
    seed: i64,
    budget: BudgetAllocation,
    metrics: WireMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timing: Option<WireTiming>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    power: BTreeMap<Evaluation, WireTrace>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireMetrics {
    /// Outer `None`: key absent. Inner `None`: explicit null.
    #[serde(default, deserialize_with = "present")]
    full: Option<Option<MetricSet>>,
    #[serde(default)]
    slices: BTreeMap<SliceFraction, MetricSet>,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<MetricSet>>, D::Error> {
    Option::<MetricSet>::deserialize(d).map(Some)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireTiming {
    #[serde(default)]
    eval_s: BTreeMap<Evaluation, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WireTrace {
    Samples(Vec<(f64, f64)>),
    Path(String),
}

/// Parses and validates one line. Sidecar trace paths resolve against
/// `base_dir`.
pub fn parse_record_line(line: &str, line_no: usize, base_dir: &Path) -> Result<RunRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let run_id = wire.run_id.clone();
    let invalid = |source: Error| Error::Validation {
        line: line_no,
        run_id: run_id.clone(),
        source: Box::new(source),
    };

    let Some(full) = wire.metrics.full else {
        return Err(invalid(Error::invalid("metrics.full", "missing")));
    };
    let mut power = BTreeMap::new();
    for (key, trace) in wire.power {
        let trace = match trace {
            WireTrace::Samples(s) => PowerTrace::new(s),
            WireTrace::Path(p) => {
                let path = base_dir.join(p);
                let file = File::open(&path).map_err(|e| Error::io(&path, e));
                file.and_then(|f| PowerTrace::from_csv(BufReader::new(f)))
            }
        }
        .map_err(&invalid)?;
        power.insert(key, trace);
    }
    let record = RunRecord {
        run_id: wire.run_id,
        seed: wire.seed,
        budget: wire.budget,
        metrics_full: full,
        metrics_by_slice: wire.metrics.slices,
        eval_wallclock_s: wire.timing.unwrap_or_default().eval_s,
        power_samples: power,
        extra: wire.extra,
    };
    BudgetAllocation::new(record.budget.label_h, record.budget.train_h, record.budget.eval_h).map_err(&invalid)?;
    validate_run_record(record).map_err(invalid)
}

/// Reads every non-blank line of a JSON-lines metrics file. An empty file
/// gives an empty list.
pub fn ingest_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    read_records(BufReader::new(file), base_dir).map_err(|e| match e {
        Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => Error::io(path, source),
        other => other,
    })
}

pub fn read_records<R: BufRead>(reader: R, base_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(base_dir, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record_line(&line, i + 1, base_dir)?);
    }
    Ok(out)
}

/// Single-line JSON for one record; traces are written inline.
pub fn record_to_line(record: &RunRecord) -> Result<String> {
    let wire = WireRecord {
        run_id: record.run_id.clone(),
        seed: record.seed,
        budget: record.budget,
        metrics: WireMetrics {
            full: Some(record.metrics_full.clone()),
            slices: record.metrics_by_slice.clone(),
        },
        timing: (!record.eval_wallclock_s.is_empty()).then(|| WireTiming {
            eval_s: record.eval_wallclock_s.clone(),
        }),
        power: record
            .power_samples
            .iter()
            .map(|(k, t)| (*k, WireTrace::Samples(t.samples().to_vec())))
            .collect(),
        extra: record.extra.clone(),
    };
    Ok(serde_json::to_string(&wire)?)
}

pub fn write_records<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = record_to_line(r)?;
        writeln!(out, "{line}").map_err(|e| Error::io("records", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINE: &str = r#"{"run_id":"tl0.05_tt0.5_s7","seed":7,"budget":{"label_h":0.05,"train_h":0.5,"eval_h":0.1},"metrics":{"full":{"accuracy":0.8027},"slices":{"0.10":{"accuracy":0.81},"0.30":{"accuracy":0.79}}},"timing":{"eval_s":{"full":7.2,"0.10":0.8}},"power":{"full":[[0,231.0],[7.2,229.5]]},"notes":"kept"}"#;

    #[test]
    fn parses_full_schema() {
        let r = parse_record_line(LINE, 1, Path::new(".")).unwrap();
        assert_eq!(r.run_id, "tl0.05_tt0.5_s7");
        assert_eq!(r.metrics_by_slice.len(), 2);
        assert_eq!(r.eval_wallclock_s[&Evaluation::Full], 7.2);
        assert_eq!(r.power_samples[&Evaluation::Full].samples().len(), 2);
        assert_eq!(r.extra["notes"], "kept");
    }

    #[test]
    fn missing_full_is_a_validation_error() {
        let line = r#"{"run_id":"a","seed":1,"budget":{"label_h":0,"train_h":0,"eval_h":0},"metrics":{"slices":{}}}"#;
        match parse_record_line(line, 4, Path::new(".")) {
            Err(Error::Validation { line, run_id, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(run_id, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn null_full_means_not_evaluated() {
        let line = r#"{"run_id":"a","seed":1,"budget":{"label_h":0,"train_h":0,"eval_h":0},"metrics":{"full":null,"slices":{"0.1":{"accuracy":0.9}}}}"#;
        let r = parse_record_line(line, 1, Path::new(".")).unwrap();
        assert!(r.metrics_full.is_none());
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{LINE}\n\n{{not json\n");
        match read_records(text.as_bytes(), Path::new(".")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_reports_run() {
        let line = LINE.replace(r#""0.10":{"accuracy":0.81}"#, r#""0.10":{"f1":0.81}"#);
        assert!(matches!(
            parse_record_line(&line, 2, Path::new(".")),
            Err(Error::Validation { line: 2, .. })
        ));
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(read_records("".as_bytes(), Path::new(".")).unwrap().is_empty());
    }

    #[test]
    fn sidecar_trace_resolves_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.csv"), "t_s,watts\n0,100\n60,200\n").unwrap();
        let line = r#"{"run_id":"a","seed":1,"budget":{"label_h":0,"train_h":0,"eval_h":0},"metrics":{"full":{"accuracy":0.9}},"timing":{"eval_s":{"full":60}},"power":{"full":"t.csv"}}"#;
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, line).unwrap();
        let recs = ingest_metrics(&path).unwrap();
        assert_eq!(
            recs[0].power_samples[&Evaluation::Full].samples(),
            &[(0.0, 100.0), (60.0, 200.0)]
        );

        let bad = line.replace("t.csv", "missing.csv");
        std::fs::write(&path, bad).unwrap();
        assert!(matches!(ingest_metrics(&path), Err(Error::Validation { .. })));
    }

    fn metric_set() -> impl Strategy<Value = MetricSet> {
        proptest::collection::btree_map("[a-z]{1,6}", -1.0e6f64..1.0e6, 1..4).prop_map(|m| {
            MetricSet::from_values(
                m.into_iter()
                    .map(|(k, v)| crate::types::MetricValue::new(k, v).unwrap()),
            )
            .unwrap()
        })
    }

    fn record() -> impl Strategy<Value = RunRecord> {
        (
            "[a-z0-9_.]{1,12}",
            any::<i64>(),
            (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0),
            metric_set(),
            proptest::collection::btree_map(1u64..=20, -0.1f64..0.1, 0..4),
            proptest::option::of(0.1f64..500.0),
            proptest::option::of(proptest::collection::vec((0.0f64..1.0, 0.0f64..700.0), 1..5)),
            any::<bool>(),
        )
            .prop_map(|(id, seed, (l, t, e), full, slices, timing, trace, drop_full)| {
                let mut r = RunRecord::new(id, seed).with_budget(BudgetAllocation::new(l, t, e).unwrap());
                for (twentieths, noise) in slices {
                    let frac = SliceFraction::from_ratio(twentieths, 20).unwrap();
                    let mut m = full.clone();
                    if !frac.is_full() {
                        for (_, v) in m.values_mut() {
                            *v += noise;
                        }
                    }
                    r = r.with_slice(frac, m);
                }
                if let Some(t) = timing {
                    r = r.with_timing(Evaluation::Full, t);
                }
                if let Some(mut samples) = trace {
                    // Make timestamps strictly increasing.
                    let mut acc = 0.0;
                    for s in samples.iter_mut() {
                        acc += s.0 + 0.01;
                        s.0 = acc;
                    }
                    r = r.with_trace(Evaluation::Full, PowerTrace::new(samples).unwrap());
                }
                if !drop_full {
                    r = r.with_full(full);
                }
                r
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(r in record()) {
            let r = validate_run_record(r).unwrap();
            let line = record_to_line(&r).unwrap();
            let back = parse_record_line(&line, 1, Path::new(".")).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
