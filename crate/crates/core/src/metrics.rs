//! Confusion matrices, the four headline scores and the results table.
//!
//! Every ratio with a zero denominator is scored 0. Macro F1 averages over
//! all three classes, so a class absent from both gold and predictions
//! still contributes an F1 of 0.

use std::fmt::Write as _;

use crate::data::Sentiment;
use crate::error::{Error, Result};

const K: usize = Sentiment::COUNT;

/// Rows are gold classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix(pub [[u64; K]; K]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|c| self.0[c][c]).sum()
    }

    pub fn add(&mut self, gold: Sentiment, pred: Sentiment) {
        self.0[gold.index()][pred.index()] += 1;
    }
}

pub fn confusion(gold: &[Sentiment], pred: &[Sentiment]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        cm.add(g, p);
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub macro_f1: f64,
    /// Indexed by [`Sentiment::index`].
    pub per_class: [ClassScores; K],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let mut per_class = [ClassScores::default(); K];
    for (c, scores) in per_class.iter_mut().enumerate() {
        let tp = cm.0[c][c];
        let support: u64 = cm.0[c].iter().sum();
        let predicted: u64 = (0..K).map(|g| cm.0[g][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        *scores = ClassScores {
            precision,
            recall,
            f1,
            support,
        };
    }
    let weighted = |f: fn(&ClassScores) -> f64| {
        per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / total as f64
    };
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        weighted_precision: weighted(|s| s.precision),
        weighted_recall: weighted(|s| s.recall),
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / K as f64,
        per_class,
    })
}

/// Convenience wrapper: confusion then report.
pub fn evaluate(gold: &[Sentiment], pred: &[Sentiment]) -> Result<MetricsReport> {
    report(&confusion(gold, pred)?)
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str = "acc\twP\twR\tmacroF1";

    /// `acc  wP  wR  macroF1`, tab-separated, shortest round-trip floats.
    pub fn tsv_fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.accuracy, self.weighted_precision, self.weighted_recall, self.macro_f1
        )
    }
}

/// One system's scores for each language column it was evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsRow {
    pub system: String,
    pub cells: Vec<Option<MetricsReport>>,
}

/// Systems as rows, languages as column groups of four scores. The best
/// macro F1 per column is marked with `*`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub columns: Vec<String>,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn new(columns: Vec<String>) -> Self {
        ResultsTable {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, system: impl Into<String>, cells: Vec<Option<MetricsReport>>) {
        assert_eq!(cells.len(), self.columns.len(), "one cell per column");
        self.rows.push(ResultsRow {
            system: system.into(),
            cells,
        });
    }

    /// Row index holding the highest macro F1 in each column; ties go to
    /// the earliest row.
    pub fn best(&self) -> Vec<Option<usize>> {
        (0..self.columns.len())
            .map(|c| {
                let mut best: Option<(usize, f64)> = None;
                for (r, row) in self.rows.iter().enumerate() {
                    if let Some(m) = &row.cells[c] {
                        if best.is_none_or(|(_, f)| m.macro_f1 > f) {
                            best = Some((r, m.macro_f1));
                        }
                    }
                }
                best.map(|(r, _)| r)
            })
            .collect()
    }

    /// Aligned plain-text rendering with four decimals.
    pub fn render(&self) -> String {
        let best = self.best();
        let mut header = vec!["system".to_string()];
        for col in &self.columns {
            for m in ["acc", "wP", "wR", "macroF1"] {
                header.push(format!("{col}:{m}"));
            }
        }
        let mut lines = vec![header];
        for (r, row) in self.rows.iter().enumerate() {
            let mut line = vec![row.system.clone()];
            for (c, cell) in row.cells.iter().enumerate() {
                match cell {
                    Some(m) => {
                        let star = if best[c] == Some(r) { "*" } else { "" };
                        line.push(format!("{:.4}", m.accuracy));
                        line.push(format!("{:.4}", m.weighted_precision));
                        line.push(format!("{:.4}", m.weighted_recall));
                        line.push(format!("{:.4}{star}", m.macro_f1));
                    }
                    None => line.extend(std::iter::repeat_n("-".to_string(), 4)),
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
