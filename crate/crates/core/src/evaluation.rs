//! Classification metrics: confusion matrices, accuracy, F1 and macro F1,
//! plus a small SVG renderer for reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `counts[true_class][predicted_class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(invalid("confusion matrix must be square"));
        }
        Ok(Self {
            num_classes: n,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    /// Predicted as `class` but belonging elsewhere.
    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&t| t != class)
            .map(|t| self.counts[t][class])
            .sum()
    }

    /// Belonging to `class` but predicted elsewhere.
    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&p| p != class)
            .map(|p| self.counts[class][p])
            .sum()
    }

    /// Row-normalized rates in percent (0 for empty rows).
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for p in 0..self.num_classes {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            let _ = write!(out, "{t}");
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(true_labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(invalid(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&t, &p) in true_labels.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(invalid(format!(
                "label pair ({t}, {p}) outside {num_classes} classes"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// `TP / (TP + (FP + FN) / 2)` for one class; 0 when that denominator is 0.
pub fn f1_binary(cm: &ConfusionMatrix, positive: usize) -> f64 {
    let tp = cm.true_positives(positive) as f64;
    let errors = (cm.false_positives(positive) + cm.false_negatives(positive)) as f64;
    let denom = tp + 0.5 * errors;
    if denom == 0.0 {
        0.0
    } else {
        tp / denom
    }
}

pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes).map(|c| f1_binary(cm, c)).collect()
}

/// Unweighted mean of the one-vs-rest F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    if cm.num_classes == 0 {
        return 0.0;
    }
    f1_per_class(cm).iter().sum::<f64>() / cm.num_classes as f64
}

/// Trace over total; 0 for an empty matrix.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let trace: u64 = (0..cm.num_classes).map(|c| cm.counts[c][c]).sum();
    trace as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub num_samples: u64,
    pub accuracy: f64,
    pub f1_per_class: Vec<f64>,
    pub macro_f1: f64,
    /// Class treated as positive for the two-class F1, when one is declared.
    pub positive_class: Option<usize>,
    pub f1: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix, class_names: Vec<String>, positive_class: Option<usize>) -> Result<Self> {
        if class_names.len() != cm.num_classes {
            return Err(invalid(format!(
                "{} class names for {} classes",
                class_names.len(),
                cm.num_classes
            )));
        }
        if let Some(p) = positive_class {
            if p >= cm.num_classes {
                return Err(invalid(format!("positive class {p} out of range")));
            }
        }
        Ok(Self {
            class_names,
            num_samples: cm.total(),
            accuracy: accuracy(&cm),
            f1_per_class: f1_per_class(&cm),
            macro_f1: macro_f1(&cm),
            f1: positive_class.map(|p| f1_binary(&cm, p)),
            positive_class,
            confusion: cm,
        })
    }

    /// Headline score: two-class F1 when a positive class is declared,
    /// macro F1 otherwise.
    pub fn headline_f1(&self) -> f64 {
        self.f1.unwrap_or(self.macro_f1)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG summary: row-normalized confusion heatmap with per-cell percentages
/// (one decimal) and a metrics table.
pub fn render_svg(report: &EvalReport) -> String {
    let n = report.confusion.num_classes;
    let cell = 80.0;
    let left = 130.0;
    let top = 70.0;
    let grid = cell * n as f64;
    let width = left + grid + 260.0;
    let height = (top + grid + 60.0).max(top + 40.0 + 22.0 * (3 + n) as f64);
    let pct = report.confusion.row_percentages();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="30" font-size="16">Confusion matrix ({} samples)</text>"#,
        report.num_samples
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#,
        left + grid / 2.0,
        top - 12.0
    );
    for t in 0..n {
        let y = top + t as f64 * cell;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + cell / 2.0 + 4.0,
            escape(&report.class_names[t])
        );
        for p in 0..n {
            let x = left + p as f64 * cell;
            let v = pct[t][p];
            let shade = (255.0 - 2.2 * v).round().clamp(35.0, 255.0) as u8;
            let ink = if v > 55.0 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect class="cell" data-row="{t}" data-col="{p}" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text class="pct" x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.1}%</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 - 2.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="11" fill="{ink}">({})</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 14.0,
                report.confusion.counts[t][p]
            );
        }
    }
    for p in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + p as f64 * cell + cell / 2.0,
            top + grid + 18.0,
            escape(&report.class_names[p])
        );
    }

    let tx = left + grid + 40.0;
    let mut rows = vec![
        ("accuracy".to_string(), report.accuracy),
        ("macro F1".to_string(), report.macro_f1),
    ];
    if let (Some(p), Some(f1)) = (report.positive_class, report.f1) {
        rows.push((format!("F1 ({})", report.class_names[p]), f1));
    }
    for (c, f1) in report.f1_per_class.iter().enumerate() {
        rows.push((format!("F1 {}", report.class_names[c]), *f1));
    }
    let _ = writeln!(s, r#"<text x="{tx}" y="{}" font-size="15">Metrics</text>"#, top - 12.0);
    for (i, (name, v)) in rows.iter().enumerate() {
        let y = top + 10.0 + 22.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{tx}" y="{y}">{}</text>"#, escape(name));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{:.2}%</text>"#,
            tx + 200.0,
            100.0 * v
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(counts).unwrap()
    }

    #[test]
    fn confusion_counts() {
        let m = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 1]]);
        let perfect = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn confusion_rejects_bad_labels() {
        assert!(confusion(&[0, 2], &[0, 1], 2).is_err());
        assert!(confusion(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn f1_substitution() {
        // TP=2, FP=1, FN=1
        let m = cm(vec![vec![2, 1], vec![1, 5]]);
        assert!((f1_binary(&m, 0) - 2.0 / 3.0).abs() < 1e-15);
        let m = cm(vec![vec![29, 1], vec![3, 27]]);
        assert!((f1_binary(&m, 0) - 29.0 / 31.0).abs() < 1e-15);
        assert!((accuracy(&m) - 56.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_f1_is_zero() {
        let m = cm(vec![vec![0, 0], vec![0, 4]]);
        assert_eq!(f1_binary(&m, 0), 0.0);
        assert_eq!(f1_binary(&m, 1), 1.0);
        assert_eq!(accuracy(&ConfusionMatrix::new(3)), 0.0);
    }

    #[test]
    fn macro_is_mean() {
        let m = cm(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]);
        assert_eq!(macro_f1(&m), 1.0);
        let m = cm(vec![vec![0, 4], vec![3, 0]]);
        assert_eq!(accuracy(&m), 0.0);
        assert_eq!(macro_f1(&m), 0.0);
    }

    #[test]
    fn svg_has_one_cell_per_entry() {
        let r = EvalReport::from_confusion(
            cm(vec![vec![29, 1], vec![3, 27]]),
            vec!["positive".into(), "negative".into()],
            Some(0),
        )
        .unwrap();
        let svg = render_svg(&r);
        assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
        assert!(svg.contains(">96.7%<"));
        assert!(svg.contains(">90.0%<"));
    }
}
