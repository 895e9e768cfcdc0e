use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topic::Topic;

/// Rows are gold classes, columns predicted, in `Topic::ALL` order.
pub type ConfusionMatrix = [[usize; Topic::COUNT]; Topic::COUNT];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn confusion_matrix(predictions: &[Topic], golds: &[Topic]) -> Result<ConfusionMatrix> {
    if predictions.len() != golds.len() {
        return Err(Error::Dimension {
            expected: golds.len(),
            actual: predictions.len(),
        });
    }
    let mut m = [[0usize; Topic::COUNT]; Topic::COUNT];
    for (p, g) in predictions.iter().zip(golds) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn per_class_metrics(m: &ConfusionMatrix) -> [ClassMetrics; Topic::COUNT] {
    let mut out = [ClassMetrics::default(); Topic::COUNT];
    for (c, slot) in out.iter_mut().enumerate() {
        let tp = m[c][c];
        let gold: usize = m[c].iter().sum();
        let pred: usize = m.iter().map(|row| row[c]).sum();
        let p = ratio(tp, pred);
        let r = ratio(tp, gold);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        *slot = ClassMetrics {
            precision: p,
            recall: r,
            f1,
            support: gold,
        };
    }
    out
}

/// Macro average over the classes that occur among the golds.
pub fn macro_from_confusion(m: &ConfusionMatrix) -> MacroMetrics {
    let per = per_class_metrics(m);
    let present: Vec<&ClassMetrics> = per.iter().filter(|c| c.support > 0).collect();
    if present.is_empty() {
        return MacroMetrics::default();
    }
    let n = present.len() as f64;
    MacroMetrics {
        precision: present.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: present.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: present.iter().map(|c| c.f1).sum::<f64>() / n,
    }
}

pub fn macro_metrics(predictions: &[Topic], golds: &[Topic]) -> Result<MacroMetrics> {
    if golds.is_empty() {
        return Err(Error::Validation {
            line: None,
            message: "macro metrics need at least one example".into(),
        });
    }
    Ok(macro_from_confusion(&confusion_matrix(predictions, golds)?))
}

pub fn macro_f1(predictions: &[Topic], golds: &[Topic]) -> Result<f64> {
    Ok(macro_metrics(predictions, golds)?.f1)
}

pub fn accuracy(predictions: &[Topic], golds: &[Topic]) -> f64 {
    let hit = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    ratio(hit, golds.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Topic::*;

    #[test]
    fn perfect() {
        let g = Topic::ALL.to_vec();
        let m = macro_metrics(&g, &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let cm = confusion_matrix(&g, &g).unwrap();
        for (i, row) in cm.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, usize::from(i == j));
            }
        }
    }

    #[test]
    fn two_class_half() {
        let g = [Absorption, Absorption, Distribution, Distribution];
        let p = [Absorption, Distribution, Absorption, Distribution];
        let m = macro_metrics(&p, &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn constant_other() {
        let g: Vec<Topic> = Topic::ALL.iter().flat_map(|&t| [t; 3]).collect();
        let p = vec![Other; g.len()];
        let m = macro_metrics(&p, &g).unwrap();
        assert!((m.precision - 0.04).abs() < 1e-12);
        assert!((m.recall - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_error_cell() {
        let cm = confusion_matrix(&[Other], &[Absorption]).unwrap();
        assert_eq!(cm[0][4], 1);
        assert_eq!(cm.iter().flatten().sum::<usize>(), 1);
        assert!(confusion_matrix(&[Other], &[]).is_err());
        assert!(macro_metrics(&[], &[]).is_err());
    }
}
