//! Confusion matrix and the classification metrics derived from it.
//!
//! Rows of the matrix are actual classes, columns predicted classes. Per-class
//! precision and recall treat one class as positive and all others as
//! negative; the weighted F1 score averages per-class F1 with weights equal to
//! each class's share of the actual samples. Accuracy is `trace / total`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_labels(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Usage(format!(
                "{} true labels but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (&t, &p) in y_true.iter().zip(y_pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual >= self.classes || predicted >= self.classes {
            return Err(Error::Usage(format!(
                "label pair ({actual}, {predicted}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[actual * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        (0..self.classes).map(|j| self.get(actual, j)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Aligned text with class names on both axes (rows actual, columns predicted).
    pub fn render(&self, names: &[String]) -> String {
        let names = class_names(names, self.classes);
        let cell = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .chain(names.iter().map(|n| n.len()))
            .max()
            .unwrap_or(1);
        let label = names.iter().map(|n| n.len()).max().unwrap_or(1).max("actual\\predicted".len());
        let mut out = format!("{:<label$}", "actual\\predicted");
        for n in &names {
            write!(out, " {n:>cell$}").unwrap();
        }
        out.push('\n');
        for (i, n) in names.iter().enumerate() {
            write!(out, "{n:<label$}").unwrap();
            for j in 0..self.classes {
                write!(out, " {:>cell$}", self.get(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn class_names(names: &[String], classes: usize) -> Vec<String> {
    (0..classes).map(|i| names.get(i).cloned().unwrap_or_else(|| i.to_string())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Actual samples of this class (row sum).
    pub support: u64,
    /// Samples predicted as this class (column sum).
    pub predicted: u64,
    /// Support share, the class weight in weighted averages.
    pub weight: f64,
}

impl ClassMetrics {
    /// True when precision had a zero denominator and was set to 0.
    pub fn precision_undefined(&self) -> bool {
        self.predicted == 0
    }

    pub fn recall_undefined(&self) -> bool {
        self.support == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over classes with nonzero support.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub samples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("cannot report metrics for an empty confusion matrix".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|i| {
            let tp = cm.get(i, i);
            let (support, predicted) = (cm.row_sum(i), cm.col_sum(i));
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
                predicted,
                weight: ratio(support, total),
            }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64;
    // support-weighted sum divided once, so a perfect classifier scores exactly 1
    let weighted =
        |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64;

    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        weighted_precision: weighted(|c| c.precision),
        weighted_recall: weighted(|c| c.recall),
        weighted_f1: weighted(|c| c.f1),
        per_class,
        samples: total,
    })
}

impl MetricsReport {
    /// One `key=value` line per metric, six decimal places.
    pub fn to_key_values(&self, names: &[String]) -> String {
        let names = class_names(names, self.per_class.len());
        let mut out = String::new();
        writeln!(out, "samples={}", self.samples).unwrap();
        for (key, v) in [
            ("accuracy", self.accuracy),
            ("macro_precision", self.macro_precision),
            ("macro_recall", self.macro_recall),
            ("weighted_precision", self.weighted_precision),
            ("weighted_recall", self.weighted_recall),
            ("weighted_f1", self.weighted_f1),
        ] {
            writeln!(out, "{key}={v:.6}").unwrap();
        }
        for (name, c) in names.iter().zip(&self.per_class) {
            writeln!(out, "class.{name}.precision={:.6}", c.precision).unwrap();
            writeln!(out, "class.{name}.recall={:.6}", c.recall).unwrap();
            writeln!(out, "class.{name}.f1={:.6}", c.f1).unwrap();
            writeln!(out, "class.{name}.support={}", c.support).unwrap();
        }
        out
    }

    /// Human-readable table of per-class and summary metrics.
    pub fn render_table(&self, names: &[String]) -> String {
        let names = class_names(names, self.per_class.len());
        let w = names.iter().map(|n| n.len()).max().unwrap_or(5).max("weighted avg".len());
        let mut out = format!("{:<w$} {:>9} {:>9} {:>9} {:>8}\n", "class", "precision", "recall", "f1", "support");
        for (name, c) in names.iter().zip(&self.per_class) {
            let flag = if c.precision_undefined() || c.recall_undefined() { " *" } else { "" };
            writeln!(
                out,
                "{name:<w$} {:>9.4} {:>9.4} {:>9.4} {:>8}{flag}",
                c.precision, c.recall, c.f1, c.support
            )
            .unwrap();
        }
        writeln!(out, "{:<w$} {:>9.4} {:>9.4} {:>9} {:>8}", "macro avg", self.macro_precision, self.macro_recall, "", self.samples)
            .unwrap();
        writeln!(
            out,
            "{:<w$} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "weighted avg", self.weighted_precision, self.weighted_recall, self.weighted_f1, self.samples
        )
        .unwrap();
        writeln!(out, "accuracy {:.4}", self.accuracy).unwrap();
        if self.per_class.iter().any(|c| c.precision_undefined() || c.recall_undefined()) {
            out.push_str("* zero denominator: undefined precision or recall reported as 0\n");
        }
        out
    }
}
