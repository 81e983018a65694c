use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{shape_err, Error, Result};

/// `counts[truth·K + pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(shape_err!("{} counts for {classes} classes", counts.len()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    pub fn col(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// Adds one count per pixel at `[truth][pred]`.
    pub fn accumulate(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(shape_err!("{} predictions for {} labels", pred.len(), truth.len()));
        }
        let k = self.classes;
        if let Some(&value) = pred.iter().chain(truth).find(|&&v| v >= k) {
            return Err(Error::LabelOutOfRange { value, classes: k });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(shape_err!("cannot merge {} with {} classes", other.classes, self.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class scores; `None` where the denominator is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub miou: f64,
    pub fwiou: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Pooled metrics. Classes absent from both truth and prediction are left
/// out of the AA, mIoU and F1 means.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let n = total as f64;
    let k = cm.classes;
    let mut trace = 0u64;
    let mut pe = 0.0;
    let mut fwiou = 0.0;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let (row, col) = (cm.row(c), cm.col(c));
        trace += tp;
        pe += row as f64 * col as f64;
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let iou = ratio(tp, row + col - tp);
        if let Some(iou) = iou {
            fwiou += row as f64 / n * iou;
        }
        per_class.push(ClassMetrics {
            recall: ratio(tp, row),
            precision: ratio(tp, col),
            iou,
            f1: ratio(2 * tp, row + col),
        });
    }
    let pe = pe / (n * n);
    let oa = trace as f64 / n;
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(Metrics {
        oa,
        aa: mean(per_class.iter().filter_map(|m| m.recall)),
        kappa,
        miou: mean(per_class.iter().filter_map(|m| m.iou)),
        fwiou,
        f1: mean(per_class.iter().filter_map(|m| m.f1)),
        per_class,
    })
}

impl Metrics {
    /// `key=value` summary lines followed by the per-class CSV.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (key, v) in [
            ("oa", self.oa),
            ("aa", self.aa),
            ("kappa", self.kappa),
            ("miou", self.miou),
            ("fwiou", self.fwiou),
            ("f1", self.f1),
        ] {
            let _ = writeln!(out, "{key}={v:.6}");
        }
        out.push_str("class,recall,precision,iou,f1\n");
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "{c},{},{},{},{}", cell(m.recall), cell(m.precision), cell(m.iou), cell(m.f1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_hand_case() {
        let cm = ConfusionMatrix::from_counts(2, vec![2, 1, 0, 1]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert!((m.oa - 0.75).abs() < 1e-12);
        assert!((m.aa - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.kappa - 0.5).abs() < 1e-12);
        assert!((m.miou - 7.0 / 12.0).abs() < 1e-12);
        assert!((m.fwiou - 0.625).abs() < 1e-12);
        assert!((m.f1 - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(4);
        let labels = [0, 1, 1, 3, 3, 3];
        cm.accumulate(&labels, &labels).unwrap();
        let m = compute_metrics(&cm).unwrap();
        for v in [m.oa, m.aa, m.kappa, m.miou, m.fwiou, m.f1] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(m.per_class[2].iou, None);
    }

    #[test]
    fn single_class_everywhere_has_unit_kappa() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[1; 5], &[1; 5]).unwrap();
        assert_eq!(compute_metrics(&cm).unwrap().kappa, 1.0);
    }

    #[test]
    fn accumulate_counts() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[2; 10], &[2; 10]).unwrap();
        assert_eq!((cm.get(2, 2), cm.total()), (10, 10));
        cm.accumulate(&[], &[]).unwrap();
        assert_eq!(cm.total(), 10);
        assert!(cm.accumulate(&[3], &[0]).is_err());
        assert!(cm.accumulate(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert_eq!(compute_metrics(&ConfusionMatrix::new(2)), Err(Error::Empty("confusion matrix")));
    }

    #[test]
    fn report_layout() {
        let cm = ConfusionMatrix::from_counts(2, vec![2, 1, 0, 1]).unwrap();
        let r = compute_metrics(&cm).unwrap().report();
        let lines: Vec<_> = r.lines().collect();
        assert_eq!(lines[0], "oa=0.750000");
        assert_eq!(lines[5], "f1=0.733333");
        assert_eq!(lines[6], "class,recall,precision,iou,f1");
        assert_eq!(lines[7], "0,0.666667,1.000000,0.666667,0.800000");
    }
}
