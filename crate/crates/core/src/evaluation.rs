//! Accuracy reports, baselines, confusion matrices and condition tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cooccurrence::Provenance;
use crate::error::{Error, Result};
use crate::inference::{RoomOutcome, TrialCondition};
use crate::scene::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAccuracy {
    pub label: Label,
    pub correct: usize,
    pub total: usize,
    /// `None` when no evaluated room carries this label.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Uniform guess over the room label space.
    pub random: f64,
    /// Always answering the most frequent evaluated label.
    pub majority: f64,
    pub majority_label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: TrialCondition,
    pub room_labels: Vec<Label>,
    pub evaluated: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub per_label: Vec<LabelAccuracy>,
    /// Rows are ground truth, columns predictions, both in `room_labels` order.
    pub confusion: Vec<Vec<usize>>,
    pub baselines: Baselines,
    pub failed_rooms: Vec<String>,
}

pub fn evaluate(outcomes: &[RoomOutcome], room_labels: &[Label]) -> Result<EvalReport> {
    let n = room_labels.len();
    if n == 0 {
        return Err(Error::Eval("room label space is empty".into()));
    }
    let index: BTreeMap<&Label, usize> = room_labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut confusion = vec![vec![0usize; n]; n];
    let mut failed: Vec<String> = Vec::new();
    let mut conditions: Vec<&TrialCondition> = Vec::new();

    for outcome in outcomes {
        match outcome {
            RoomOutcome::Failed(f) => failed.push(f.room_id.clone()),
            RoomOutcome::Ok(p) => {
                let lookup = |l: &Label| {
                    index.get(l).copied().ok_or_else(|| {
                        Error::Eval(format!(
                            "room {}: label {:?} is not in the room space",
                            p.room_id,
                            l.as_str()
                        ))
                    })
                };
                confusion[lookup(&p.gt_label)?][lookup(&p.predicted_label)?] += 1;
                conditions.push(&p.condition);
            }
        }
    }
    failed.sort();
    if conditions.is_empty() {
        return Err(Error::Eval(format!("no rooms to evaluate ({} failed)", failed.len())));
    }
    let condition = conditions[0].clone();
    if conditions.iter().any(|c| **c != condition) {
        return Err(Error::Eval("predictions mix several trial conditions".into()));
    }

    let per_label: Vec<LabelAccuracy> = room_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let total: usize = confusion[i].iter().sum();
            let correct = confusion[i][i];
            LabelAccuracy {
                label: label.clone(),
                correct,
                total,
                accuracy: (total > 0).then(|| correct as f64 / total as f64),
            }
        })
        .collect();
    let evaluated: usize = per_label.iter().map(|l| l.total).sum();
    let correct: usize = per_label.iter().map(|l| l.correct).sum();

    let mut majority = &per_label[0];
    for l in &per_label[1..] {
        if l.total > majority.total || (l.total == majority.total && l.label < majority.label) {
            majority = l;
        }
    }

    Ok(EvalReport {
        condition,
        room_labels: room_labels.to_vec(),
        evaluated,
        correct,
        overall_accuracy: correct as f64 / evaluated as f64,
        baselines: Baselines {
            random: 1.0 / n as f64,
            majority: majority.total as f64 / evaluated as f64,
            majority_label: majority.label.clone(),
        },
        per_label,
        confusion,
        failed_rooms: failed,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let c = &self.condition;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "condition: object_space={} cooccurrence={} k={} template={} backend={}",
            c.object_space, c.provenance, c.k, c.template, c.backend
        );
        let _ = writeln!(
            out,
            "accuracy: {} ({}/{})",
            pct(self.overall_accuracy),
            self.correct,
            self.evaluated
        );
        let _ = writeln!(
            out,
            "baselines: random {}  majority {} ({})",
            pct(self.baselines.random),
            pct(self.baselines.majority),
            self.baselines.majority_label
        );
        if !self.failed_rooms.is_empty() {
            let _ = writeln!(
                out,
                "failed rooms ({}, excluded): {}",
                self.failed_rooms.len(),
                self.failed_rooms.join(", ")
            );
        }
        let width = self
            .room_labels
            .iter()
            .map(|l| l.as_str().len())
            .max()
            .unwrap_or(5)
            .max(5);
        let _ = writeln!(
            out,
            "\n{:<width$}  {:>8}  {:>7}  {:>5}",
            "label", "accuracy", "correct", "total"
        );
        for l in &self.per_label {
            let acc = l.accuracy.map_or_else(|| "-".to_string(), pct);
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>7}  {:>5}", l.label, acc, l.correct, l.total);
        }
        let _ = writeln!(
            out,
            "\nconfusion (rows: ground truth, columns: predicted, in label order above)"
        );
        for (label, row) in self.room_labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            let _ = writeln!(out, "{:<width$} {}", label, cells.join(""));
        }
        out
    }
}

/// Accuracies keyed by (co-occurrence source, object space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub object_spaces: Vec<String>,
    pub provenances: Vec<Provenance>,
    pub cells: Vec<ConditionCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCell {
    pub provenance: Provenance,
    pub object_space: String,
    pub accuracy: f64,
    pub evaluated: usize,
}

pub fn compare_conditions(reports: &[EvalReport]) -> Result<ConditionTable> {
    if reports.is_empty() {
        return Err(Error::Eval("no reports to compare".into()));
    }
    let mut seen = BTreeSet::new();
    let mut object_spaces: Vec<String> = Vec::new();
    let mut cells = Vec::new();
    for r in reports {
        let c = &r.condition;
        if !seen.insert((c.provenance.as_str(), c.object_space.clone())) {
            return Err(Error::Eval(format!(
                "two reports share the condition ({}, {})",
                c.provenance, c.object_space
            )));
        }
        if !object_spaces.contains(&c.object_space) {
            object_spaces.push(c.object_space.clone());
        }
        cells.push(ConditionCell {
            provenance: c.provenance,
            object_space: c.object_space.clone(),
            accuracy: r.overall_accuracy,
            evaluated: r.evaluated,
        });
    }
    let provenances = [Provenance::GroundTruth, Provenance::Proxy]
        .into_iter()
        .filter(|p| cells.iter().any(|c| c.provenance == *p))
        .collect();
    Ok(ConditionTable {
        object_spaces,
        provenances,
        cells,
    })
}

impl ConditionTable {
    pub fn get(&self, provenance: Provenance, object_space: &str) -> Option<&ConditionCell> {
        self.cells
            .iter()
            .find(|c| c.provenance == provenance && c.object_space == object_space)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14}", "");
        for s in &self.object_spaces {
            let _ = write!(out, "  {s:>10}");
        }
        out.push('\n');
        for p in &self.provenances {
            let _ = write!(out, "{:<14}", p.as_str());
            for s in &self.object_spaces {
                let cell = self.get(*p, s).map_or_else(|| "-".to_string(), |c| pct(c.accuracy));
                let _ = write!(out, "  {cell:>10}");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-label rows for plotting: `object_space,provenance,label,correct,total,accuracy`.
/// Labels without support get an empty accuracy field.
pub fn emit_label_breakdown(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Eval(format!("csv: {e}"));
    w.write_record(["object_space", "provenance", "label", "correct", "total", "accuracy"])
        .map_err(csv_err)?;
    for l in &report.per_label {
        w.write_record([
            report.condition.object_space.as_str(),
            report.condition.provenance.as_str(),
            l.label.as_str(),
            &l.correct.to_string(),
            &l.total.to_string(),
            &l.accuracy.map(|a| format!("{a:?}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Eval(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
