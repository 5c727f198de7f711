//! Evaluation reports: a JSON record for scripts and an aligned text table
//! for people. Both are rendered from the same counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hierarchy::HierMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseRow {
    pub class: String,
    pub entries: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub total: usize,
    pub main_correct: usize,
    pub main_accuracy: f64,
    pub both_correct: usize,
    pub sub_accuracy_end_to_end: f64,
    pub sub_accuracy_conditional: Option<f64>,
    pub per_coarse: Vec<CoarseRow>,
}

/// Percent with two decimals, e.g. `84.20%`.
pub fn format_percent(ratio: Option<f64>) -> String {
    match ratio {
        Some(r) => format!("{:.2}%", 100.0 * r),
        None => "n/a".to_string(),
    }
}

impl RunReport {
    pub fn from_metrics(dataset: impl Into<String>, m: &HierMetrics) -> Self {
        RunReport {
            dataset: dataset.into(),
            total: m.total,
            main_correct: m.main_correct,
            main_accuracy: m.main_accuracy(),
            both_correct: m.both_correct,
            sub_accuracy_end_to_end: m.sub_accuracy_end_to_end(),
            sub_accuracy_conditional: m.sub_accuracy_conditional(),
            per_coarse: m
                .per_coarse
                .iter()
                .map(|c| CoarseRow {
                    class: c.name.clone(),
                    entries: c.entries,
                    correct: c.fine_correct,
                    accuracy: c.accuracy(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Per-coarse rows (gold-routed fine accuracy) followed by the summary
    /// accuracies.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Results on {}", self.dataset);
        let _ = writeln!(
            out,
            "{:<14} {:>8} {:>8} {:>9}",
            "Class", "Entries", "Correct", "Accuracy"
        );
        for row in &self.per_coarse {
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>9}",
                row.class,
                row.entries,
                row.correct,
                format_percent(row.accuracy)
            );
        }
        let _ = writeln!(out);
        let summary = [
            (
                "Main category accuracy",
                Some(self.main_accuracy),
                self.main_correct,
                self.total,
            ),
            (
                "Sub category accuracy",
                Some(self.sub_accuracy_end_to_end),
                self.both_correct,
                self.total,
            ),
            (
                "Sub category accuracy given correct main",
                self.sub_accuracy_conditional,
                self.both_correct,
                self.main_correct,
            ),
        ];
        for (label, acc, num, den) in summary {
            let _ = writeln!(out, "{label:<42} {:>8} ({num}/{den})", format_percent(acc));
        }
        out
    }
}
