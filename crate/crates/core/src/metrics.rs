//! Classification metrics over hard decisions and one-vs-rest ROC curves.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{EmotionLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::{decide, ScoreTable};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::shape(
                "confusion matrix",
                "counts must be square and non-empty",
            ));
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "confusion",
            format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            ),
        ));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (i, (&p, &t)) in predictions.iter().zip(labels).enumerate() {
        if p >= num_classes || t >= num_classes {
            return Err(Error::invalid(format!(
                "row {i}: class out of range (truth {t}, predicted {p}, {num_classes} classes)"
            )));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prf1 {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1. Any zero denominator yields 0.
pub fn prf1(cm: &ConfusionMatrix) -> Prf1 {
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.support(c),
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    Prf1 {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracies {
    pub overall: f64,
    /// Mean recall over classes that occur in the ground truth.
    pub balanced: f64,
}

pub fn accuracies(cm: &ConfusionMatrix) -> Result<Accuracies> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let recalls: Vec<f64> = (0..cm.num_classes())
        .filter(|&c| cm.support(c) > 0)
        .map(|c| ratio(cm.get(c, c), cm.support(c)))
        .collect();
    Ok(Accuracies {
        overall: cm.trace() as f64 / total as f64,
        balanced: recalls.iter().sum::<f64>() / recalls.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC for `class`: a row is positive when its label equals `class`.
///
/// The trapezoid area is accumulated in integers over the common denominator
/// `2·P·N`, so it matches the pair-counting statistic bit for bit.
pub fn roc(scores: &[f64], labels: &[usize], class: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "roc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!(
            "roc: score at row {i} is not finite"
        )));
    }
    let pos = labels.iter().filter(|&&l| l == class).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "roc for class {class} needs positive and negative rows ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos * neg) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub classes: Vec<String>,
    pub rows: usize,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub overall_accuracy: f64,
    pub balanced_accuracy: f64,
    /// `None` where the class is absent from (or the only class in) the labels.
    pub auc: Vec<Option<f64>>,
    #[serde(skip)]
    pub roc: Vec<Option<RocCurve>>,
}

/// Decides every row of `table` and scores the decisions against its labels.
pub fn evaluate(table: &ScoreTable) -> Result<EvaluationReport> {
    let labels: Vec<usize> = table.rows().iter().map(|r| r.label.index()).collect();
    let preds: Vec<usize> = decide(table).into_iter().map(|(_, l)| l.index()).collect();
    let cm = confusion(&preds, &labels, NUM_CLASSES)?;
    let acc = accuracies(&cm)?;
    let p = prf1(&cm);
    let roc: Vec<Option<RocCurve>> = (0..NUM_CLASSES)
        .into_par_iter()
        .map(|c| {
            let s: Vec<f64> = table.rows().iter().map(|r| r.scores[c]).collect();
            roc(&s, &labels, c).ok()
        })
        .collect();
    for (c, r) in roc.iter().enumerate() {
        if r.is_none() {
            log::warn!(
                "no ROC for class {}: labels are one-sided",
                EmotionLabel::CANONICAL[c]
            );
        }
    }
    Ok(EvaluationReport {
        classes: EmotionLabel::CANONICAL
            .iter()
            .map(|l| l.name().to_string())
            .collect(),
        rows: table.len(),
        confusion: cm,
        per_class: p.per_class,
        macro_precision: p.macro_precision,
        macro_recall: p.macro_recall,
        macro_f1: p.macro_f1,
        overall_accuracy: acc.overall,
        balanced_accuracy: acc.balanced,
        auc: roc.iter().map(|r| r.as_ref().map(|r| r.auc)).collect(),
        roc,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("roc csv", e);
        writeln!(w, "class,fpr,tpr").map_err(io)?;
        for (name, curve) in self.classes.iter().zip(&self.roc) {
            for (fpr, tpr) in curve.iter().flat_map(|c| &c.points) {
                writeln!(w, "{name},{fpr:.6},{tpr:.6}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mann_whitney(scores: &[f64], labels: &[usize], class: usize) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != class {
                n += 1;
                continue;
            }
            p += 1;
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] == class {
                    continue;
                }
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn angry_breakdown() {
        // 36 of 40 angry rows right, the 4 misses spread over other classes, no false positives
        let mut preds = vec![0; 36];
        preds.extend([1, 2, 3, 3]);
        let mut labels = vec![0; 40];
        for c in 1..4 {
            preds.extend(vec![c; 10]);
            labels.extend(vec![c; 10]);
        }
        let cm = confusion(&preds, &labels, 4).unwrap();
        let m = prf1(&cm).per_class[0];
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.9);
        assert!((m.f1 - 2.0 * 0.9 / 1.9).abs() < 1e-12);
        assert!((m.f1 - 0.9474).abs() < 5e-5);
    }

    #[test]
    fn trivial_confusions() {
        let cm = confusion(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        assert!(prf1(&cm).per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(
            accuracies(&cm).unwrap(),
            Accuracies {
                overall: 1.0,
                balanced: 1.0
            }
        );
        let cm = confusion(&[1], &[0], 2).unwrap();
        assert_eq!(cm.counts(), &[vec![0, 1], vec![0, 0]]);
        assert!(confusion(&[4], &[0], 4).is_err());
        assert!(confusion(&[0, 1], &[0], 4).is_err());
    }

    #[test]
    fn zero_support_class_is_guarded() {
        let cm = ConfusionMatrix::from_counts(vec![vec![9, 1], vec![0, 0]]).unwrap();
        let p = prf1(&cm);
        assert_eq!(p.per_class[1].recall, 0.0);
        assert_eq!(p.per_class[1].precision, 0.0);
        assert_eq!(p.per_class[1].f1, 0.0);
        let a = accuracies(&cm).unwrap();
        assert_eq!(a.balanced, 0.9);
        let empty = ConfusionMatrix::from_counts(vec![vec![0; 2]; 2]).unwrap();
        assert!(accuracies(&empty).is_err());
    }

    #[test]
    fn imbalanced_hand_cases() {
        let a = accuracies(&ConfusionMatrix::from_counts(vec![vec![8, 2], vec![5, 5]]).unwrap())
            .unwrap();
        assert!((a.overall - 0.65).abs() < 1e-12);
        assert!((a.balanced - 0.65).abs() < 1e-12);
        let a = accuracies(&ConfusionMatrix::from_counts(vec![vec![9, 1], vec![5, 5]]).unwrap())
            .unwrap();
        assert!((a.overall - 0.70).abs() < 1e-12);
        assert!((a.balanced - 0.70).abs() < 1e-12);
    }

    #[test]
    fn roc_hand_cases() {
        let r = roc(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0], 1).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc(&[0.9, 0.8, 0.2], &[1, 1, 0], 1).unwrap().auc, 1.0);
        let flat = roc(&[0.5; 6], &[0, 1, 0, 1, 1, 0], 1).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(roc(&[0.1, 0.2], &[1, 1], 1).is_err());
    }

    #[test]
    fn report_serializes() {
        use crate::fusion::{ScoreKind, ScoreRow};
        let rows = (0..8)
            .map(|i| {
                let mut scores = [0.1; 4];
                scores[i % 4] = 0.7;
                ScoreRow {
                    id: format!("u{i}"),
                    label: EmotionLabel::CANONICAL[i % 4],
                    scores,
                }
            })
            .collect();
        let t = ScoreTable::new(ScoreKind::Probability, rows).unwrap();
        let rep = evaluate(&t).unwrap();
        assert_eq!(rep.overall_accuracy, 1.0);
        assert_eq!(rep.auc, vec![Some(1.0); 4]);
        let json = rep.to_json();
        assert!(json.contains("\"balanced_accuracy\": 1.0"), "{json}");
        let mut csv = Vec::new();
        rep.write_roc_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("class,fpr,tpr\nangry,0.000000,0.000000\n"));
    }

    proptest! {
        #[test]
        fn auc_equals_pair_count(
            rows in proptest::collection::vec((0u8..6, 0usize..2), 2..50)
        ) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 5.0).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let r = roc(&scores, &labels, 1).unwrap();
            prop_assert_eq!(r.auc, mann_whitney(&scores, &labels, 1));
            prop_assert!(r.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }

        #[test]
        fn accuracy_is_permutation_invariant(
            counts in proptest::collection::vec(0u64..20, 16),
            perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()
        ) {
            let rows: Vec<Vec<u64>> = counts.chunks(4).map(|c| c.to_vec()).collect();
            prop_assume!(rows.iter().flatten().sum::<u64>() > 0);
            let permuted: Vec<Vec<u64>> =
                (0..4).map(|i| (0..4).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
            let a = accuracies(&ConfusionMatrix::from_counts(rows).unwrap()).unwrap();
            let b = accuracies(&ConfusionMatrix::from_counts(permuted.clone()).unwrap()).unwrap();
            prop_assert_eq!(a.overall, b.overall);
            let p = prf1(&ConfusionMatrix::from_counts(permuted).unwrap());
            prop_assert!(p.per_class.iter().all(|m| m.f1.is_finite() && m.precision.is_finite()));
        }
    }
}
