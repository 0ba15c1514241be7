use crate::descriptor::LabelledFeatures;
use crate::error::{Error, Result};
use crate::ingest::ObjectClass;
use crate::orf::ForestModel;

const N: usize = ObjectClass::COUNT;

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix(pub [[u64; N]; N]);

impl ConfusionMatrix {
    pub fn add(&mut self, truth: ObjectClass, predicted: ObjectClass) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// Ground-truth count per class.
    pub fn row_sums(&self) -> [u64; N] {
        self.0.map(|r| r.iter().sum())
    }

    /// Accuracy, which equals micro-averaged F1 for single-label
    /// classification. Zero for an empty matrix.
    pub fn micro_f1(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..N).map(|i| self.0[i][i]).sum::<u64>() as f64 / total as f64
    }

    /// F1 per class; 0 where precision + recall is 0.
    pub fn per_class_f1(&self) -> [f64; N] {
        std::array::from_fn(|c| {
            let tp = self.0[c][c] as f64;
            let predicted: u64 = (0..N).map(|t| self.0[t][c]).sum();
            let actual: u64 = self.0[c].iter().sum();
            let precision = if predicted > 0 {
                tp / predicted as f64
            } else {
                0.0
            };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
    }

    /// Unweighted mean of the per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / N as f64
    }
}

/// Model quality after `samples_learned` distinct samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub samples_learned: u64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// One point per checkpoint, in learning order.
    pub series: Vec<SeriesPoint>,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, series: Vec<SeriesPoint>) -> Self {
        Self {
            micro_f1: confusion.micro_f1(),
            macro_f1: confusion.macro_f1(),
            confusion,
            series,
        }
    }
}

pub fn confusion(model: &ForestModel, test_set: &[LabelledFeatures]) -> Result<ConfusionMatrix> {
    if test_set.is_empty() {
        return Err(Error::Contract(
            "evaluation needs a non-empty test set".into(),
        ));
    }
    let mut m = ConfusionMatrix::default();
    for row in test_set {
        let predicted = ObjectClass::from_index(model.predict_class(row.features.as_slice()))
            .expect("forest has one output per class");
        m.add(row.label, predicted);
    }
    Ok(m)
}

/// Confusion matrix and F1 scores of `model` on `test_set`.
pub fn evaluate(model: &ForestModel, test_set: &[LabelledFeatures]) -> Result<EvalReport> {
    Ok(EvalReport::from_confusion(
        confusion(model, test_set)?,
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_is_perfect() {
        let m = ConfusionMatrix([[5, 0, 0], [0, 7, 0], [0, 0, 1]]);
        assert_eq!(m.micro_f1(), 1.0);
        assert_eq!(m.macro_f1(), 1.0);
    }

    #[test]
    fn all_wrong_is_zero() {
        let m = ConfusionMatrix([[0, 5, 0], [0, 0, 7], [1, 0, 0]]);
        assert_eq!(m.micro_f1(), 0.0);
        assert_eq!(m.macro_f1(), 0.0);
    }

    #[test]
    fn hand_computed_fixture() {
        let m = ConfusionMatrix([[50, 0, 0], [10, 30, 0], [0, 10, 0]]);
        assert_relative_eq!(m.micro_f1(), 0.8, epsilon = 1e-15);
        // Car: P = 50/60, R = 1 -> 10/11. Pedestrian: P = 30/40, R = 30/40
        // -> 3/4. Cyclist: no true positives -> 0.
        assert_relative_eq!(m.macro_f1(), (10.0 / 11.0 + 0.75) / 3.0, epsilon = 1e-15);
        assert_eq!(m.row_sums(), [50, 40, 10]);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let model = ForestModel::new(Default::default()).unwrap();
        assert!(matches!(evaluate(&model, &[]), Err(Error::Contract(_))));
    }
}
