//! Machine-readable check results shared by every module and by the CLI.

use crate::scalar::{to_f64, Real};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Number of worst witnesses kept per check.
pub const MAX_WITNESSES: usize = 5;

/// One named inequality family. `slack` is the smallest observed margin;
/// the check passes when `slack >= -tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub slack: f64,
    pub tolerance: f64,
    pub witnesses: Vec<Value>,
    pub runtime_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Check {
    /// A check with a single precomputed slack.
    pub fn scalar<T: Real>(name: impl Into<String>, slack: T, tolerance: T, witness: Value) -> Self {
        let mut acc = SlackAccumulator::new(name, tolerance);
        acc.record(slack, || witness);
        acc.finish()
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn with_runtime(mut self, ms: f64) -> Self {
        self.runtime_ms = ms;
        self
    }
}

/// Tracks the minimal slack of an inequality family and its worst witnesses.
#[derive(Clone, Debug)]
pub struct SlackAccumulator {
    name: String,
    tolerance: f64,
    slack: f64,
    count: usize,
    worst: Vec<(f64, Value)>,
    notes: Vec<String>,
}

impl SlackAccumulator {
    pub fn new<T: Real>(name: impl Into<String>, tolerance: T) -> Self {
        Self {
            name: name.into(),
            tolerance: to_f64(tolerance),
            slack: f64::INFINITY,
            count: 0,
            worst: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Records one instance; the witness is only built when it ranks among the worst.
    pub fn record<T: Real, F: FnOnce() -> Value>(&mut self, slack: T, witness: F) {
        let s = to_f64(slack);
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        self.count += 1;
        if s < self.slack {
            self.slack = s;
        }
        let full = self.worst.len() >= MAX_WITNESSES;
        if full && s >= self.worst[self.worst.len() - 1].0 {
            return;
        }
        let mut w = witness();
        if let Value::Object(m) = &mut w {
            m.insert("slack".into(), Value::from(s));
        }
        let pos = self.worst.partition_point(|(v, _)| *v <= s);
        self.worst.insert(pos, (s, w));
        self.worst.truncate(MAX_WITNESSES);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn merge(&mut self, other: SlackAccumulator) {
        self.count += other.count;
        self.slack = self.slack.min(other.slack);
        self.worst.extend(other.worst);
        self.worst.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.worst.truncate(MAX_WITNESSES);
        self.notes.extend(other.notes);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn finish(self) -> Check {
        let slack = if self.count == 0 { 0.0 } else { self.slack };
        let mut notes = self.notes;
        if self.count == 0 {
            notes.push("no instances evaluated".into());
        }
        Check {
            name: self.name,
            pass: slack >= -self.tolerance,
            slack,
            tolerance: self.tolerance,
            witnesses: self.worst.into_iter().map(|(_, w)| w).collect(),
            runtime_ms: 0.0,
            notes,
        }
    }
}

/// A suite of checks as emitted by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub config_echo: Value,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accumulator_keeps_worst_witnesses_sorted() {
        let mut acc = SlackAccumulator::new("demo", 1e-3);
        for i in 0..20 {
            let s = (i as f64 - 10.0).abs() * 0.1;
            acc.record(s, || json!({ "i": i }));
        }
        let c = acc.finish();
        assert_eq!(c.slack, 0.0);
        assert!(c.pass);
        assert_eq!(c.witnesses.len(), MAX_WITNESSES);
        assert_eq!(c.witnesses[0]["i"], 10);
    }

    #[test]
    fn nan_slack_fails() {
        let mut acc = SlackAccumulator::new("nan", 1.0);
        acc.record(f64::NAN, || json!({}));
        assert!(!acc.finish().pass);
    }

    #[test]
    fn empty_check_passes_with_note() {
        let c = SlackAccumulator::new("empty", 0.0).finish();
        assert!(c.pass && !c.notes.is_empty());
    }
}
