use crate::data::N_CLASSES;
use crate::error::{Error, Result};
use crate::models::argmax;
use serde::{Deserialize, Serialize};

/// Confusion counts: rows are true classes, columns predictions.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(Error::dim("label and prediction counts differ"));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::contract(format!("class index out of range ({t}, {p})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy on the class's own rows, i.e. its recall.
    pub accuracy: f64,
    pub support: usize,
    /// False when nothing was predicted as this class (precision set to 0).
    pub precision_defined: bool,
    /// False when the class has no rows (recall set to 0).
    pub recall_defined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

/// Per-class precision, recall, F1 and accuracy from a square confusion matrix.
pub fn class_metrics(confusion: &[Vec<usize>]) -> Vec<ClassMetrics> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..n).map(|r| confusion[r][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let (precision, precision_defined) = ratio(tp, predicted);
            let (recall, recall_defined) = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                accuracy: recall,
                support,
                precision_defined,
                recall_defined,
            }
        })
        .collect()
}

/// One-vs-rest ROC curve with one point per distinct threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from `(0,0)` to `(1,1)`.
    pub points: Vec<[f64; 2]>,
    pub auc: f64,
}

/// Sweeps the distinct scores from high to low; tied scores move the curve
/// diagonally, which gives ties half credit in the trapezoidal area.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 || scores.len() != positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // area in units of pairs: (fp - fp0) · (tp0 + tp) / 2
        auc += (fp - fp0) as f64 * (tp0 + tp) as f64 / 2.0;
        points.push([fp as f64 / n as f64, tp as f64 / p as f64]);
    }
    Some(RocCurve {
        points,
        auc: auc / (p as f64 * n as f64),
    })
}

/// ROC of class `class` against the rest using that class's probability.
pub fn roc_auc(probs: &[[f64; N_CLASSES]], labels: &[usize], class: usize) -> Result<RocCurve> {
    let scores: Vec<f64> = probs.iter().map(|p| p[class]).collect();
    let positive: Vec<bool> = labels.iter().map(|&y| y == class).collect();
    roc_curve(&scores, &positive).ok_or(Error::UndefinedAuc(class))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    /// `None` where the class AUC is undefined.
    pub roc: Vec<Option<RocCurve>>,
    /// Mean of the defined class AUCs.
    pub macro_auc: Option<f64>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub conventions: Vec<String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Full metrics for predicted probabilities. Predictions are the argmax,
/// lowest class on ties.
pub fn evaluate(probs: &[[f64; N_CLASSES]], labels: &[usize]) -> Result<EvaluationReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::contract("evaluation needs one probability row per label"));
    }
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(labels, &pred, N_CLASSES)?;
    let per_class = class_metrics(&confusion);
    let trace: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let mut roc = Vec::with_capacity(N_CLASSES);
    for c in 0..N_CLASSES {
        match roc_auc(probs, labels, c) {
            Ok(curve) => roc.push(Some(curve)),
            Err(Error::UndefinedAuc(_)) => {
                log::warn!("AUC undefined for class {c}; excluded from macro-AUC");
                roc.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = roc.iter().flatten().map(|r| r.auc).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvaluationReport {
        confusion,
        per_class,
        overall_accuracy: trace as f64 / labels.len() as f64,
        roc,
        macro_auc,
        config: serde_json::Value::Null,
        seed: 0,
        conventions: vec![
            "rows of confusion are true classes, columns predictions".into(),
            "per-class accuracy is the recall of that class".into(),
            "precision or recall with a zero denominator is reported as 0 and flagged".into(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_hand_computed() {
        let m = class_metrics(&[vec![2, 1], vec![0, 1]]);
        assert_eq!(m[0].precision, 1.0);
        assert!((m[0].recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m[0].f1 - 0.8).abs() < 1e-15);
        assert_eq!(m[1].precision, 0.5);
        assert_eq!(m[1].recall, 1.0);
        assert!((m[1].f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = class_metrics(&[vec![3, 0, 0], vec![1, 0, 0], vec![0, 0, 0]]);
        assert!(!m[1].precision_defined && m[1].precision == 0.0 && m[1].f1 == 0.0);
        assert!(!m[2].recall_defined);
    }

    #[test]
    fn roc_examples() {
        let r = roc_curve(&[0.9, 0.8, 0.7, 0.3], &[true, false, true, false]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!(r.points.first(), Some(&[0.0, 0.0]));
        assert_eq!(r.points.last(), Some(&[1.0, 1.0]));
        let ties = roc_curve(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(ties.auc, 0.5);
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_none());
    }

    #[test]
    fn missing_class_is_excluded_from_macro() {
        let probs = [[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]];
        let r = evaluate(&probs, &[0, 1, 0]).unwrap();
        assert!(r.roc[2].is_none());
        let mean = (r.roc[0].as_ref().unwrap().auc + r.roc[1].as_ref().unwrap().auc) / 2.0;
        assert_eq!(r.macro_auc, Some(mean));
    }
}
