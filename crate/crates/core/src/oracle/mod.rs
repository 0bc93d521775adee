//! Black-box prediction contract and the performance function built on it.

mod cache;
mod external;
mod shape_rule;

pub use cache::{CacheKey, PredictionCache};
pub use external::{external_batch_predict, ExternalBatchOracle};
pub use shape_rule::{
    circularity, largest_component, predict_shape_rule, ShapeRuleClassifier, CLASS_HGG, CLASS_LGG,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorio::{MultiModalVolume, Sample};

const SIMPLEX_TOL: f64 = 1e-6;

/// Model output for one input: a point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invariant("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invariant(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invariant(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ClassProbabilities(probs))
    }

    pub fn uniform(n_classes: usize) -> Self {
        ClassProbabilities(vec![1.0 / n_classes as f64; n_classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// A deterministic classifier over multi-modal volumes.
pub trait PredictionOracle: Sync {
    fn n_classes(&self) -> usize;

    fn predict(&self, volume: &MultiModalVolume) -> Result<ClassProbabilities>;

    /// Scores a batch of keyed inputs; output order follows `batch`.
    fn predict_batch(
        &self,
        batch: &[(&str, &MultiModalVolume)],
    ) -> Result<Vec<ClassProbabilities>> {
        batch
            .par_iter()
            .map(|(id, v)| self.predict(v).map_err(|e| e.in_sample(id)))
            .collect()
    }
}

impl<T: PredictionOracle + ?Sized> PredictionOracle for &T {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }

    fn predict(&self, volume: &MultiModalVolume) -> Result<ClassProbabilities> {
        (**self).predict(volume)
    }

    fn predict_batch(
        &self,
        batch: &[(&str, &MultiModalVolume)],
    ) -> Result<Vec<ClassProbabilities>> {
        (**self).predict_batch(batch)
    }
}

/// Fraction of predictions whose argmax equals the label.
pub fn accuracy_of(predictions: &[ClassProbabilities], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Invariant("accuracy over an empty set".into()));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| p.argmax() == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Test-set accuracy of `oracle` over `samples`.
pub fn accuracy(samples: &[Sample], oracle: &dyn PredictionOracle) -> Result<f64> {
    let batch: Vec<(&str, &MultiModalVolume)> =
        samples.iter().map(|s| (s.id.as_str(), &s.volume)).collect();
    let preds = oracle.predict_batch(&batch)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    accuracy_of(&preds, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{Dims, Layout};

    struct Fixed(Box<dyn Fn(&MultiModalVolume) -> Vec<f64> + Sync>);

    impl PredictionOracle for Fixed {
        fn n_classes(&self) -> usize {
            2
        }
        fn predict(&self, v: &MultiModalVolume) -> Result<ClassProbabilities> {
            ClassProbabilities::new((self.0)(v))
        }
    }

    fn samples(labels: &[usize]) -> Vec<Sample> {
        let layout = Layout::new(vec!["a"], Dims::new_2d(1, 1)).unwrap();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Sample {
                id: format!("s{i}"),
                label: l,
                volume: MultiModalVolume::new(layout.clone(), vec![l as f32]).unwrap(),
                mask: None,
            })
            .collect()
    }

    #[test]
    fn simplex_is_enforced() {
        assert!(ClassProbabilities::new(vec![0.5, 0.3]).is_err());
        assert!(ClassProbabilities::new(vec![1.2, -0.2]).is_err());
        assert!(ClassProbabilities::new(vec![0.5, 0.5 + 1e-7]).is_ok());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(ClassProbabilities::uniform(2).argmax(), 0);
        assert_eq!(ClassProbabilities::new(vec![0.2, 0.4, 0.4]).unwrap().argmax(), 1);
    }

    #[test]
    fn perfect_oracle_scores_one() {
        let s = samples(&[0, 1, 1, 0]);
        let oracle = Fixed(Box::new(|v| {
            if v.data()[0] > 0.5 {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        }));
        assert_eq!(accuracy(&s, &oracle).unwrap(), 1.0);
    }

    #[test]
    fn uniform_oracle_follows_tie_break() {
        let oracle = Fixed(Box::new(|_| vec![0.5, 0.5]));
        assert_eq!(accuracy(&samples(&[1, 1, 1]), &oracle).unwrap(), 0.0);
        assert_eq!(accuracy(&samples(&[0, 1, 1, 0]), &oracle).unwrap(), 0.5);
    }

    #[test]
    fn empty_set_is_an_error() {
        let oracle = Fixed(Box::new(|_| vec![0.5, 0.5]));
        assert!(accuracy(&[], &oracle).is_err());
    }
}
