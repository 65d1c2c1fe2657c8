//! F1, AUROC and the evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement required between the two AUROC computations.
pub const AUROC_AGREEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positive labels.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Positive-class (Helpful) F1.
pub fn f1_score(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("f1_score needs at least one instance".into()));
    }
    Ok(Confusion::from_predictions(predictions, labels)?.f1())
}

fn check_auroc_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::AurocUndefined);
    }
    Ok(())
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half. Quadratic; used as the reference value.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_auroc_inputs(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    // counted in half-units so the sum is exact
    let mut halves: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            halves += match p.partial_cmp(&n).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    Ok(halves as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// Trapezoidal area under the ROC curve traced by sweeping the threshold
/// over distinct scores in decreasing order.
pub fn auroc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_auroc_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// AUROC computed both ways; fails if they disagree by more than
/// [`AUROC_AGREEMENT`]. Returns the pairwise value.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pairwise = auroc_pairwise(scores, labels)?;
    let trapezoid = auroc_trapezoid(scores, labels)?;
    if (pairwise - trapezoid).abs() > AUROC_AGREEMENT {
        return Err(Error::InvalidArgument(format!(
            "AUROC implementations disagree: pairwise {pairwise}, trapezoid {trapezoid}"
        )));
    }
    Ok(pairwise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    /// `None` when the labels contain a single class.
    pub auroc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub count: usize,
    pub threshold: f64,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64, config_fingerprint: &str) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty shard".into()));
        }
        let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
        let confusion = Confusion::from_predictions(&preds, labels)?;
        let auroc = match auroc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::AurocUndefined) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            f1: confusion.f1(),
            auroc,
            precision: confusion.precision(),
            recall: confusion.recall(),
            accuracy: confusion.accuracy(),
            confusion,
            count: scores.len(),
            threshold,
            config_fingerprint: config_fingerprint.to_string(),
        })
    }

    pub fn table(&self) -> String {
        let auroc = self.auroc.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
        let c = &self.confusion;
        format!(
            "instances  {}\nF1         {:.4}\nAUROC      {auroc}\nprecision  {:.4}\nrecall     {:.4}\naccuracy   {:.4}\nTP {}  FP {}  TN {}  FN {}\n",
            self.count, self.f1, self.precision, self.recall, self.accuracy, c.tp, c.fp, c.tn, c.fn_
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let l = [true, false, true, false];
        assert_eq!(f1_score(&l, &l).unwrap(), 1.0);
        assert_eq!(f1_score(&[false, true, false, true], &l).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let p = [true, true, true, false, false];
        let l = [true, true, false, true, false];
        assert!((f1_score(&p, &l).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(f1_score(&[true], &[true, false]).is_err());
        assert_eq!(f1_score(&[false, false], &[false, false]).unwrap(), 0.0);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::AurocUndefined)));
    }

    #[test]
    fn report_counts() {
        let r = EvalReport::compute(&[0.9, 0.2, 0.5, 0.7], &[true, false, false, false], 0.5, "x").unwrap();
        assert_eq!(r.confusion.total(), r.count);
        assert_eq!((r.confusion.tp, r.confusion.fp), (1, 2));
        assert_eq!(r.auroc, Some(1.0));
        let r = EvalReport::compute(&[0.9, 0.2], &[true, true], 0.5, "x").unwrap();
        assert_eq!(r.auroc, None);
    }
}
