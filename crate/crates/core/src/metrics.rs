//! Confusion matrix, per-class precision/recall and macro F1.

use std::io::Write;

use crate::error::{Error, Result};

/// `counts[r][p]`: samples of true class `r` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            class_names,
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::dimension("confusion matrix", format!("{k} x {k}"), counts.len()));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::dimension(
                "confusion matrix sum",
                self.num_classes(),
                other.num_classes(),
            ));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }

    /// Rows and columns labelled by class name, with an accuracy footer.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "true\\predicted")?;
        for n in &self.class_names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            write!(w, "{name}")?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "accuracy,{:.6}", overall(self).accuracy)?;
        Ok(())
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

pub fn confusion(predictions: &[usize], labels: &[usize], class_names: Vec<String>) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::dimension("confusion", labels.len(), predictions.len()));
    }
    let mut cm = ConfusionMatrix::zeros(class_names);
    let k = cm.num_classes();
    for (&p, &r) in predictions.iter().zip(labels) {
        if p >= k || r >= k {
            return Err(Error::Input(format!(
                "class index out of range: label {r}, prediction {p}, {k} classes"
            )));
        }
        cm.counts[r][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let k = cm.num_classes();
    (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let support: u64 = cm.counts[c].iter().sum();
            let (precision, dp) = ratio(tp, predicted);
            let (recall, dr) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                degenerate: dp || dr,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overall {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and unweighted mean of per-class F1. An empty matrix scores 0.
pub fn overall(cm: &ConfusionMatrix) -> Overall {
    let total = cm.total();
    let accuracy = if total == 0 {
        0.0
    } else {
        cm.trace() as f64 / total as f64
    };
    let per = per_class_metrics(cm);
    let macro_f1 = per.iter().map(|m| m.f1).sum::<f64>() / per.len().max(1) as f64;
    Overall { accuracy, macro_f1 }
}

/// Per-class table: `class,precision,recall,f1,support,degenerate`.
pub fn write_per_class_csv<W: Write>(cm: &ConfusionMatrix, w: &mut W) -> Result<()> {
    writeln!(w, "class,precision,recall,f1,support,degenerate")?;
    for (name, m) in cm.class_names.iter().zip(per_class_metrics(cm)) {
        writeln!(
            w,
            "{name},{:.6},{:.6},{:.6},{},{}",
            m.precision, m.recall, m.f1, m.support, m.degenerate
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        default_class_names(k)
    }

    #[test]
    fn worked_example() {
        let cm = confusion(&[0, 1, 1, 1], &[0, 0, 1, 1], names(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let per = per_class_metrics(&cm);
        assert_eq!((per[0].precision, per[0].recall), (1.0, 0.5));
        assert!((per[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(per[1].recall, 1.0);
        let o = overall(&cm);
        assert_eq!(o.accuracy, 0.75);
        assert!((o.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_degenerate() {
        let cm = confusion(&[], &[], names(3)).unwrap();
        assert_eq!(cm.total(), 0);
        let cm = confusion(&[0, 0], &[0, 0], names(2)).unwrap();
        let per = per_class_metrics(&cm);
        assert!(per[1].degenerate);
        assert_eq!(per[1].recall, 0.0);
        assert!(!per[0].degenerate);
    }

    #[test]
    fn out_of_range_is_input_error() {
        assert!(matches!(confusion(&[2], &[0], names(2)), Err(Error::Input(_))));
    }

    #[test]
    fn csv_has_accuracy_footer() {
        let cm = confusion(&[0, 1, 1, 1], &[0, 0, 1, 1], vec!["a".into(), "b".into()]).unwrap();
        let mut out = Vec::new();
        cm.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "true\\predicted,a,b\na,1,1\nb,0,2\naccuracy,0.750000\n");
    }
}
