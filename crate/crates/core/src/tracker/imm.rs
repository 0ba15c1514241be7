//! Interacting-multiple-model bookkeeping: the Markov model set, input
//! mixing and the model-probability update.

use nalgebra::{DMatrix, DVector};

use super::models::{convert, wrap_angle, MotionModel};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionModelSet {
    models: Vec<MotionModel>,
    /// `transition[(i, j)]` = P(model j at k | model i at k-1); rows sum to 1.
    transition: DMatrix<f64>,
    initial: Vec<f64>,
}

impl MotionModelSet {
    pub fn new(
        models: Vec<MotionModel>,
        transition: DMatrix<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n = models.len();
        if n == 0 {
            return Err(Error::Config(
                "tracker: at least one motion model required".into(),
            ));
        }
        if transition.shape() != (n, n) {
            return Err(Error::Config(format!(
                "tracker: transition matrix must be {n}x{n}"
            )));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!(
                    "tracker: transition row {i} is not a probability vector"
                )));
            }
        }
        check_probability(&initial)
            .map_err(|m| Error::Config(format!("tracker: initial model probabilities {m}")))?;
        if initial.len() != n {
            return Err(Error::Config(
                "tracker: initial model probabilities length mismatch".into(),
            ));
        }
        Ok(Self {
            models,
            transition,
            initial,
        })
    }

    /// Uniform initial probabilities.
    pub fn with_uniform_prior(models: Vec<MotionModel>, transition: DMatrix<f64>) -> Result<Self> {
        let n = models.len().max(1);
        Self::new(models, transition, vec![1.0 / n as f64; n])
    }

    pub fn models(&self) -> &[MotionModel] {
        &self.models
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
}

pub(crate) fn check_probability(mu: &[f64]) -> std::result::Result<(), &'static str> {
    if mu.iter().any(|&v| !(v >= 0.0)) {
        return Err("contain a negative or non-finite entry");
    }
    if (mu.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
        return Err("do not sum to 1");
    }
    Ok(())
}

/// Predicted model probabilities `c_j = sum_i pi_ij mu_i`.
pub fn predicted_probabilities(mu: &[f64], transition: &DMatrix<f64>) -> Vec<f64> {
    (0..mu.len())
        .map(|j| (0..mu.len()).map(|i| transition[(i, j)] * mu[i]).sum())
        .collect()
}

/// Mixing weights `w[(i, j)] = mu_{i|j}`; every column sums to 1. A model
/// with zero predicted probability mixes only with itself.
pub fn mixing_weights(mu: &[f64], transition: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_probability(mu).map_err(|m| Error::Contract(format!("model probabilities {m}")))?;
    let c = predicted_probabilities(mu, transition);
    let n = mu.len();
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        if c[j] == 0.0 {
            w[(j, j)] = 1.0;
            continue;
        }
        for i in 0..n {
            w[(i, j)] = transition[(i, j)] * mu[i] / c[j];
        }
    }
    Ok(w)
}

/// Gaussian state of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEstimate {
    pub model: MotionModel,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Mixed initial conditions for every model. Source estimates are first
/// mapped into the target model's state space.
pub fn imm_mix(
    estimates: &[ModelEstimate],
    mu: &[f64],
    transition: &DMatrix<f64>,
) -> Result<Vec<ModelEstimate>> {
    let w = mixing_weights(mu, transition)?;
    let n = estimates.len();
    let mut mixed = Vec::with_capacity(n);
    for (j, target) in estimates.iter().enumerate() {
        let converted: Vec<_> = estimates
            .iter()
            .map(|src| {
                convert(
                    src.model,
                    target.model,
                    &src.mean,
                    &src.cov,
                    (&target.mean, &target.cov),
                )
            })
            .collect();
        let angles = target.model.angle_indices();
        let residual = |a: &DVector<f64>, b: &DVector<f64>| {
            let mut d = a - b;
            for &k in angles {
                d[k] = wrap_angle(d[k]);
            }
            d
        };
        // Angles are averaged as offsets from the target's own estimate.
        let mut mean = target.mean.clone();
        let mut shift = DVector::zeros(target.mean.len());
        for i in 0..n {
            shift += residual(&converted[i].0, &target.mean) * w[(i, j)];
        }
        mean += shift;
        for &k in angles {
            mean[k] = wrap_angle(mean[k]);
        }
        let mut cov = DMatrix::zeros(mean.len(), mean.len());
        for i in 0..n {
            let d = residual(&converted[i].0, &mean);
            cov += (&converted[i].1 + &d * d.transpose()) * w[(i, j)];
        }
        mixed.push(ModelEstimate {
            model: target.model,
            mean,
            cov,
        });
    }
    Ok(mixed)
}

/// `mu'_j ∝ c_j * likelihood_j`. Returns the prior unchanged and `false`
/// when every product vanishes.
pub fn update_model_probabilities(
    mu: &[f64],
    transition: &DMatrix<f64>,
    likelihoods: &[f64],
) -> (Vec<f64>, bool) {
    let c = predicted_probabilities(mu, transition);
    let raw: Vec<f64> = c.iter().zip(likelihoods).map(|(c, l)| c * l).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return (mu.to_vec(), false);
    }
    (raw.iter().map(|r| r / total).collect(), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state_pi() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9])
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.9]);
        assert!(
            MotionModelSet::with_uniform_prior(vec![MotionModel::Cv, MotionModel::Ctrv], bad)
                .is_err()
        );
        assert!(MotionModelSet::with_uniform_prior(
            vec![MotionModel::Cv, MotionModel::Ctrv],
            two_state_pi()
        )
        .is_ok());
    }

    #[test]
    fn single_model_mixing_is_identity() {
        let est = ModelEstimate {
            model: MotionModel::Cv,
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            cov: DMatrix::identity(4, 4) * 2.0,
        };
        let pi = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(mixing_weights(&[1.0], &pi).unwrap()[(0, 0)], 1.0);
        let mixed = imm_mix(std::slice::from_ref(&est), &[1.0], &pi).unwrap();
        assert_eq!(mixed[0], est);
    }

    #[test]
    fn identity_transition_keeps_priors() {
        let a = ModelEstimate {
            model: MotionModel::Cv,
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            cov: DMatrix::identity(4, 4),
        };
        let b = ModelEstimate {
            mean: DVector::from_vec(vec![-1.0, 0.0, 0.0, 9.0]),
            ..a.clone()
        };
        let pi = DMatrix::identity(2, 2);
        let mixed = imm_mix(&[a.clone(), b.clone()], &[1.0, 0.0], &pi).unwrap();
        assert_eq!(mixed[0], a);
        // Model 2's normalizer (second column of pi against mu) vanishes.
        assert_eq!(mixed[1], b);
        assert!(matches!(
            imm_mix(&[a.clone(), b], &[0.5, 0.6], &pi),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn likelihood_update_examples() {
        let pi = DMatrix::identity(2, 2);
        let (mu, ok) = update_model_probabilities(&[0.3, 0.7], &pi, &[2.0, 2.0]);
        assert!(ok);
        assert_relative_eq!(mu[0], 0.3, epsilon = 1e-15);
        let (mu, _) = update_model_probabilities(&[0.5, 0.5], &pi, &[1.0, 0.0]);
        assert_eq!(mu, vec![1.0, 0.0]);
        let (mu, ok) = update_model_probabilities(&[0.5, 0.5], &pi, &[0.0, 0.0]);
        assert!(!ok);
        assert_eq!(mu, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn mixing_columns_sum_to_one(p in 0.0f64..1.0, a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let pi = DMatrix::from_row_slice(2, 2, &[a, 1.0 - a, 1.0 - b, b]);
            let w = mixing_weights(&[p, 1.0 - p], &pi).unwrap();
            for j in 0..2 {
                prop_assert!((w.column(j).sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn updated_probabilities_sum_to_one(p in 0.0f64..1.0, l0 in 0.0f64..10.0, l1 in 1e-6f64..10.0) {
            let (mu, _) = update_model_probabilities(&[p, 1.0 - p], &two_state_pi(), &[l0, l1]);
            prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(mu.iter().all(|&v| v >= 0.0));
        }
    }
}
