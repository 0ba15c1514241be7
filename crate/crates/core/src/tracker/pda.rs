//! Measurement prediction, Mahalanobis gating and the probabilistic data
//! association update. Measurements are ground-plane positions, so the
//! measurement function is the linear selection of `(x, y)` from either
//! model's state and its moments are computed in closed form.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::imm::ModelEstimate;
use super::models::wrap_angle;
use super::ukf::symmetrize;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdaParams {
    pub p_detection: f64,
    /// Clutter density per square meter.
    pub clutter_density: f64,
    /// Squared Mahalanobis gate.
    pub gate_threshold: f64,
}

impl PdaParams {
    /// Probability that a true 2-D measurement falls inside the gate.
    pub fn gate_probability(&self) -> f64 {
        1.0 - (-0.5 * self.gate_threshold).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedMeasurement {
    pub z: Vector2<f64>,
    pub s: Matrix2<f64>,
}

impl PredictedMeasurement {
    pub fn from_estimate(est: &ModelEstimate, r: &Matrix2<f64>) -> Self {
        let p = &est.cov;
        Self {
            z: Vector2::new(est.mean[0], est.mean[1]),
            s: Matrix2::new(p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]) + r,
        }
    }

    /// Moment-matched mixture of per-model predictions.
    pub fn combine(parts: &[PredictedMeasurement], weights: &[f64]) -> Self {
        let z = parts
            .iter()
            .zip(weights)
            .fold(Vector2::zeros(), |acc, (p, &w)| acc + p.z * w);
        let s = parts
            .iter()
            .zip(weights)
            .fold(Matrix2::zeros(), |acc, (p, &w)| {
                let d = p.z - z;
                acc + (p.s + d * d.transpose()) * w
            });
        Self { z, s }
    }

    /// Squared Mahalanobis distance of `z`; `None` if the innovation
    /// covariance is not positive definite.
    pub fn mahalanobis_sq(&self, z: &Vector2<f64>) -> Option<f64> {
        let chol = self.s.cholesky()?;
        let d = z - self.z;
        Some(d.dot(&chol.solve(&d)))
    }

    /// Gaussian density of `z`.
    pub fn likelihood(&self, z: &Vector2<f64>) -> Option<f64> {
        let det = self.s.determinant();
        let d2 = self.mahalanobis_sq(z)?;
        Some((-0.5 * d2).exp() / (2.0 * PI * det.sqrt()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// Per track, indices of the measurements inside its gate, ascending.
    pub gated: Vec<Vec<usize>>,
    /// Measurements that fell in no gate, ascending.
    pub unassigned: Vec<usize>,
}

/// Gates every measurement against every track independently; a measurement
/// may fall in several gates. `None` predictions gate nothing.
pub fn associate(
    predictions: &[Option<PredictedMeasurement>],
    measurements: &[Vector2<f64>],
    gate_threshold: f64,
) -> Association {
    let mut used = vec![false; measurements.len()];
    let gated = predictions
        .iter()
        .map(|pred| {
            let Some(pred) = pred else {
                return Vec::new();
            };
            (0..measurements.len())
                .filter(|&m| {
                    pred.mahalanobis_sq(&measurements[m])
                        .is_some_and(|d2| d2 <= gate_threshold)
                })
                .inspect(|&m| used[m] = true)
                .collect()
        })
        .collect();
    let unassigned = (0..measurements.len()).filter(|&m| !used[m]).collect();
    Association { gated, unassigned }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdaOutcome {
    pub estimate: ModelEstimate,
    /// Probability that none of the gated measurements is the target.
    pub beta_none: f64,
    /// Association probability per gated measurement.
    pub betas: Vec<f64>,
    /// Likelihood of the gated set under this model, up to a factor common
    /// to all models.
    pub likelihood: f64,
}

pub fn pda_update(
    est: &ModelEstimate,
    gated: &[Vector2<f64>],
    r: &Matrix2<f64>,
    params: &PdaParams,
) -> Result<PdaOutcome> {
    let pred = PredictedMeasurement::from_estimate(est, r);
    let p_dg = params.p_detection * params.gate_probability();
    if gated.is_empty() {
        return Ok(PdaOutcome {
            estimate: est.clone(),
            beta_none: 1.0,
            betas: Vec::new(),
            likelihood: (1.0 - p_dg) * params.clutter_density,
        });
    }
    let s_inv = pred
        .s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?
        .inverse();
    let likelihoods: Vec<f64> = gated
        .iter()
        .map(|z| pred.likelihood(z).expect("checked positive definite"))
        .collect();
    let sum_l: f64 = likelihoods.iter().sum();
    let b = params.clutter_density * (1.0 - p_dg) / params.p_detection;
    let denom = b + sum_l;
    let (beta_none, betas) = if denom > 0.0 {
        (
            b / denom,
            likelihoods.iter().map(|l| l / denom).collect::<Vec<_>>(),
        )
    } else {
        (1.0, vec![0.0; gated.len()])
    };

    let n = est.mean.len();
    let pht: DMatrix<f64> = est.cov.columns(0, 2).into_owned();
    let s_inv_d = DMatrix::from_column_slice(2, 2, s_inv.as_slice());
    let gain = &pht * &s_inv_d;
    let innovations: Vec<DVector<f64>> = gated
        .iter()
        .map(|z| DVector::from_column_slice((z - pred.z).as_slice()))
        .collect();
    let combined = innovations
        .iter()
        .zip(&betas)
        .fold(DVector::zeros(2), |acc, (v, &b)| acc + v * b);
    let spread = innovations
        .iter()
        .zip(&betas)
        .fold(DMatrix::zeros(2, 2), |acc, (v, &b)| {
            acc + v * v.transpose() * b
        })
        - &combined * combined.transpose();

    let mut mean = &est.mean + &gain * &combined;
    for &k in est.model.angle_indices() {
        mean[k] = wrap_angle(mean[k]);
    }
    let s_d = DMatrix::from_column_slice(2, 2, pred.s.as_slice());
    let mut cov = &est.cov - (&gain * s_d * gain.transpose()) * (1.0 - beta_none)
        + &gain * spread * gain.transpose();
    symmetrize(&mut cov);
    debug_assert_eq!(cov.nrows(), n);

    Ok(PdaOutcome {
        estimate: ModelEstimate {
            model: est.model,
            mean,
            cov,
        },
        beta_none,
        betas,
        likelihood: (1.0 - p_dg) * params.clutter_density + params.p_detection * sum_l,
    })
}
