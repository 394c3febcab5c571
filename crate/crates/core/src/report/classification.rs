use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ReportError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary classification report. Precision with no predicted members is 0, and
/// f1 is 0 when precision and recall are both 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Index 0 is the negative class, index 1 the positive class.
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_report(y_true: &[u8], y_pred: &[u8]) -> Result<ClassificationReport, ReportError> {
    if y_true.len() != y_pred.len() {
        return Err(ReportError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&v| v > 1) {
        return Err(ReportError::NonBinary(bad));
    }
    // confusion[t][p]
    let mut confusion = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let total = y_true.len();
    let classes = [0, 1].map(|c| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let support = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        }
    });
    let avg = |weight: &dyn Fn(&ClassMetrics) -> f64| {
        let w: f64 = classes.iter().map(weight).sum();
        let pick = |m: fn(&ClassMetrics) -> f64| classes.iter().map(|c| weight(c) * m(c)).sum::<f64>() / w;
        ClassMetrics {
            precision: pick(|c| c.precision),
            recall: pick(|c| c.recall),
            f1: pick(|c| c.f1),
            support: total,
        }
    };
    Ok(ClassificationReport {
        classes,
        accuracy: (confusion[0][0] + confusion[1][1]) as f64 / total as f64,
        macro_avg: avg(&|_| 1.0),
        weighted_avg: avg(&|c| c.support as f64),
    })
}

const ROW_LABELS: [&str; 5] = ["0 (non-mortality)", "1 (mortality)", "Accuracy", "Macro Avg", "Weighted Avg"];

impl ClassificationReport {
    pub fn total(&self) -> usize {
        self.classes[0].support + self.classes[1].support
    }

    /// Fixed-width table, metrics rounded to 2 decimals; the accuracy row only
    /// fills the F1 Score and Support columns.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let w = 18;
        writeln!(s, "{:<w$}{:>10}{:>10}{:>10}{:>10}", "", "Precision", "Recall", "F1 Score", "Support").unwrap();
        let full = |s: &mut String, label: &str, m: &ClassMetrics| {
            writeln!(
                s,
                "{label:<w$}{:>10.2}{:>10.2}{:>10.2}{:>10}",
                m.precision, m.recall, m.f1, m.support
            )
            .unwrap()
        };
        full(&mut s, ROW_LABELS[0], &self.classes[0]);
        full(&mut s, ROW_LABELS[1], &self.classes[1]);
        writeln!(s, "{:<w$}{:>10}{:>10}{:>10.2}{:>10}", ROW_LABELS[2], "", "", self.accuracy, self.total()).unwrap();
        full(&mut s, ROW_LABELS[3], &self.macro_avg);
        full(&mut s, ROW_LABELS[4], &self.weighted_avg);
        s
    }

    /// Full-precision CSV `row,precision,recall,f1,support`; the accuracy row leaves
    /// precision and recall empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ReportError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "precision", "recall", "f1", "support"])?;
        let rows = [
            ("class_0", Some(&self.classes[0])),
            ("class_1", Some(&self.classes[1])),
            ("accuracy", None),
            ("macro_avg", Some(&self.macro_avg)),
            ("weighted_avg", Some(&self.weighted_avg)),
        ];
        for (name, m) in rows {
            match m {
                Some(m) => out.write_record([
                    name.to_string(),
                    m.precision.to_string(),
                    m.recall.to_string(),
                    m.f1.to_string(),
                    m.support.to_string(),
                ])?,
                None => out.write_record([
                    name.to_string(),
                    String::new(),
                    String::new(),
                    self.accuracy.to_string(),
                    self.total().to_string(),
                ])?,
            }
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ReportError> {
        let bad = |m: &str| ReportError::Malformed(m.to_string());
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?);
        }
        let names = ["class_0", "class_1", "accuracy", "macro_avg", "weighted_avg"];
        if rows.len() != 5 || rows.iter().zip(names).any(|(r, n)| r.len() != 5 || &r[0] != n) {
            return Err(bad("expected class_0, class_1, accuracy, macro_avg, weighted_avg rows"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
        let count = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
        let metrics = |r: &csv::StringRecord| -> Result<ClassMetrics, ReportError> {
            Ok(ClassMetrics {
                precision: num(&r[1])?,
                recall: num(&r[2])?,
                f1: num(&r[3])?,
                support: count(&r[4])?,
            })
        };
        Ok(Self {
            classes: [metrics(&rows[0])?, metrics(&rows[1])?],
            accuracy: num(&rows[2][3])?,
            macro_avg: metrics(&rows[3])?,
            weighted_avg: metrics(&rows[4])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_matrix() {
        // TP=1, FN=1, FP=0, TN=2
        let r = classification_report(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(r.classes[1].precision, 1.0);
        assert_eq!(r.classes[1].recall, 0.5);
        assert!((r.classes[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.classes[0].precision, 2.0 / 3.0);
        assert_eq!(r.classes[0].recall, 1.0);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.weighted_avg.support, 4);
    }

    #[test]
    fn perfect_and_degenerate_predictions() {
        let r = classification_report(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        for c in r.classes {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
        let r = classification_report(&[0, 0, 1], &[0, 0, 0]).unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].f1, 0.0);
        assert!(matches!(
            classification_report(&[0], &[0, 1]),
            Err(ReportError::LengthMismatch(1, 2))
        ));
        assert!(matches!(classification_report(&[], &[]), Err(ReportError::EmptyInput)));
        assert!(matches!(classification_report(&[2], &[0]), Err(ReportError::NonBinary(2))));
    }

    #[test]
    fn text_rows_and_csv_round_trip() {
        let r = classification_report(&[0, 0, 0, 1, 1, 0, 1], &[0, 1, 0, 1, 0, 0, 1]).unwrap();
        let text = r.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        for (line, label) in lines[1..].iter().zip(ROW_LABELS) {
            assert!(line.starts_with(label));
        }
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["Precision", "Recall", "F1", "Score", "Support"]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(ClassificationReport::read_csv(buf.as_slice()).unwrap(), r);
    }
}
