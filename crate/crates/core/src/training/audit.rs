//! Records which lines every data-dependent step touched, so a run can be
//! checked for test-set leakage after the fact.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Standardization,
    Gradient,
    EarlyStopping,
    HyperparameterSelection,
    MaskConstruction,
}

/// Identifies one outer split of one replicate.
pub type SplitKey = (u64, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub key: SplitKey,
    pub stage: Stage,
    pub context: String,
    pub lines: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub key: SplitKey,
    pub stage: Stage,
    pub context: String,
    pub leaked_lines: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    tests: Mutex<BTreeMap<SplitKey, BTreeSet<usize>>>,
    records: Mutex<Vec<AuditRecord>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_test(&self, key: SplitKey, test: &[usize]) {
        self.tests
            .lock()
            .unwrap()
            .entry(key)
            .or_default()
            .extend(test.iter().copied());
    }

    pub fn record(&self, key: SplitKey, stage: Stage, context: impl Into<String>, lines: &[usize]) {
        self.records.lock().unwrap().push(AuditRecord {
            key,
            stage,
            context: context.into(),
            lines: lines.to_vec(),
        });
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().unwrap().clone()
    }

    /// Stages observed per split. A run that used a stage but never logged
    /// it would be invisible to [`AuditLog::violations`].
    pub fn stages(&self) -> BTreeMap<SplitKey, BTreeSet<Stage>> {
        let mut out: BTreeMap<SplitKey, BTreeSet<Stage>> = BTreeMap::new();
        for r in self.records.lock().unwrap().iter() {
            out.entry(r.key).or_default().insert(r.stage);
        }
        out
    }

    /// Every record that touched a test line of its own split, plus records
    /// for splits whose test set was never registered.
    pub fn violations(&self) -> Vec<Violation> {
        let tests = self.tests.lock().unwrap();
        let mut out = Vec::new();
        for r in self.records.lock().unwrap().iter() {
            let leaked: Vec<usize> = match tests.get(&r.key) {
                Some(t) => r.lines.iter().copied().filter(|i| t.contains(i)).collect(),
                None => r.lines.clone(),
            };
            if !leaked.is_empty() {
                out.push(Violation {
                    key: r.key,
                    stage: r.stage,
                    context: r.context.clone(),
                    leaked_lines: leaked,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_test_lines_only_within_their_split() {
        let log = AuditLog::new();
        log.register_test((1, 0), &[5, 6]);
        log.register_test((1, 1), &[0, 1]);
        log.record((1, 0), Stage::Gradient, "fit", &[0, 1, 2]);
        assert!(log.violations().is_empty());
        log.record((1, 1), Stage::EarlyStopping, "val", &[1, 3]);
        let v = log.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].leaked_lines, vec![1]);
    }

    #[test]
    fn unregistered_split_is_a_violation() {
        let log = AuditLog::new();
        log.record((0, 0), Stage::MaskConstruction, "mask", &[2]);
        assert_eq!(log.violations().len(), 1);
    }
}
