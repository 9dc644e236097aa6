//! Confusion matrices and the per-class and prevalence-weighted metrics
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::data_model::LesionClass;
use crate::error::{Error, Result};

/// 3×3 counts, rows = true class, columns = predicted class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Sensitivity,
    Specificity,
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|c| self.counts[c][c]).sum()
    }

    pub fn record(&mut self, truth: LesionClass, predicted: LesionClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for r in 0..3 {
            for c in 0..3 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn sensitivity(&self, class: LesionClass) -> Result<f64> {
        let c = class.index();
        let denom = self.row_sum(c);
        if denom == 0 {
            return Err(Error::UndefinedMetric(format!("sensitivity of {}: no true samples", class.name())));
        }
        Ok(self.counts[c][c] as f64 / denom as f64)
    }

    pub fn specificity(&self, class: LesionClass) -> Result<f64> {
        let c = class.index();
        let negatives = self.total() - self.row_sum(c);
        if negatives == 0 {
            return Err(Error::UndefinedMetric(format!("specificity of {}: no negative samples", class.name())));
        }
        let tn = self.total() + self.counts[c][c] - self.row_sum(c) - self.col_sum(c);
        Ok(tn as f64 / negatives as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("accuracy of an empty matrix".into())),
            t => Ok(self.trace() as f64 / t as f64),
        }
    }

    pub fn metric(&self, metric: Metric, class: LesionClass) -> Result<f64> {
        match metric {
            Metric::Sensitivity => self.sensitivity(class),
            Metric::Specificity => self.specificity(class),
        }
    }

    /// `Σ_c metric(c) · row_sum(c) / total`.
    pub fn weighted_aggregate(&self, metric: Metric) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("aggregate of an empty matrix".into()));
        }
        let mut acc = 0.0;
        for class in LesionClass::ALL {
            acc += self.metric(metric, class)? * self.row_sum(class.index()) as f64;
        }
        Ok(acc / total as f64)
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        let per = |m| -> Result<[f64; 3]> {
            let mut out = [0.0; 3];
            for class in LesionClass::ALL {
                out[class.index()] = self.metric(m, class)?;
            }
            Ok(out)
        };
        Ok(MetricSummary {
            sensitivity: per(Metric::Sensitivity)?,
            specificity: per(Metric::Specificity)?,
            weighted_sensitivity: self.weighted_aggregate(Metric::Sensitivity)?,
            weighted_specificity: self.weighted_aggregate(Metric::Specificity)?,
            accuracy: self.accuracy()?,
        })
    }
}

/// Builds a matrix from parallel prediction and label lists.
pub fn confusion_matrix(preds: &[LesionClass], labels: &[LesionClass]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        cm.record(t, p);
    }
    Ok(cm)
}

/// All metrics of one matrix, as fractions; arrays are indexed by class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub sensitivity: [f64; 3],
    pub specificity: [f64; 3],
    pub weighted_sensitivity: f64,
    pub weighted_specificity: f64,
    pub accuracy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use LesionClass::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [Cyst, Metastasis, Metastasis, Hemangioma];
        let cm = confusion_matrix(&labels, &labels).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        assert_eq!(confusion_matrix(&[], &[]).unwrap().total(), 0);
        assert!(confusion_matrix(&[Cyst], &[]).is_err());
    }

    #[test]
    fn identity_counts_give_full_marks() {
        let cm = ConfusionMatrix::new([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let s = cm.summary().unwrap();
        assert_eq!(s.sensitivity, [1.0; 3]);
        assert_eq!(s.specificity, [1.0; 3]);
    }

    #[test]
    fn constant_cyst_predictor_fills_first_column() {
        let mut cm = ConfusionMatrix::default();
        for (class, n) in [(Cyst, 53), (Metastasis, 64), (Hemangioma, 65)] {
            for _ in 0..n {
                cm.record(class, Cyst);
            }
        }
        assert_eq!([cm.counts[0][0], cm.counts[1][0], cm.counts[2][0]], [53, 64, 65]);
        assert_eq!(cm.specificity(Cyst).unwrap(), 0.0);
    }

    #[test]
    fn empty_denominators_are_undefined() {
        let cm = ConfusionMatrix::new([[3, 0, 0], [0, 0, 0], [0, 0, 0]]);
        assert!(matches!(cm.sensitivity(Metastasis), Err(Error::UndefinedMetric(_))));
        assert!(matches!(cm.specificity(Cyst), Err(Error::UndefinedMetric(_))));
    }
}
