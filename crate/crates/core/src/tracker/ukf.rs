//! Unscented prediction with scaled sigma points.
//!
//! The small default spread (alpha = 1e-3) makes the central weight about
//! -1e6, so means and covariances are accumulated as offsets from the
//! propagated central point instead of as raw weighted sums.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::models::{wrap_angle, MotionModel, ProcessNoise};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

struct Weights {
    mean0: f64,
    cov0: f64,
    rest: f64,
    scale: f64,
}

impl SigmaParams {
    fn weights(&self, n: usize) -> Weights {
        let n = n as f64;
        let lambda = self.alpha * self.alpha * (n + self.kappa) - n;
        let scale = n + lambda;
        Weights {
            mean0: lambda / scale,
            cov0: lambda / scale + 1.0 - self.alpha * self.alpha + self.beta,
            rest: 0.5 / scale,
            scale,
        }
    }
}

pub(crate) const JITTER: f64 = 1e-9;

/// Lower Cholesky factor of the symmetrized matrix; adds `JITTER * I` and
/// retries once before giving up.
pub(crate) fn robust_cholesky(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (p + p.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.l());
    }
    let n = sym.nrows();
    (sym + DMatrix::identity(n, n) * JITTER)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| {
            Error::Numerical(format!(
                "covariance not positive definite after jitter ({n}x{n})"
            ))
        })
}

fn residual(model: MotionModel, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut d = a - b;
    for &i in model.angle_indices() {
        d[i] = wrap_angle(d[i]);
    }
    d
}

/// Largest absolute asymmetry relative to the largest entry.
pub(crate) fn asymmetry(p: &DMatrix<f64>) -> f64 {
    let scale = p.amax().max(1.0);
    (p - p.transpose()).amax() / scale
}

pub(crate) fn symmetrize(p: &mut DMatrix<f64>) {
    debug_assert!(asymmetry(p) < 1e-9, "covariance asymmetry {}", asymmetry(p));
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

pub fn ukf_predict(
    model: MotionModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    dt: f64,
    noise: &ProcessNoise,
    sigma: &SigmaParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!(
            "prediction step must be positive, got {dt}"
        )));
    }
    let n = model.dim();
    let w = sigma.weights(n);
    let l = robust_cholesky(cov)? * w.scale.sqrt();

    let center = model.propagate(mean, dt);
    let mut offsets = Vec::with_capacity(2 * n);
    for k in 0..n {
        let col = l.column(k);
        for sign in [1.0, -1.0] {
            let chi = mean + col * sign;
            offsets.push(residual(model, &model.propagate(&chi, dt), &center));
        }
    }
    // Weights sum to one, so the central point contributes no offset.
    let shift = offsets
        .iter()
        .fold(DVector::zeros(n), |acc, d| acc + d * w.rest);
    let mut out_mean = &center + &shift;
    for &i in model.angle_indices() {
        out_mean[i] = wrap_angle(out_mean[i]);
    }
    let mut out_cov = &shift * shift.transpose() * w.cov0;
    for d in &offsets {
        let e = d - &shift;
        out_cov += &e * e.transpose() * w.rest;
    }
    out_cov += model.process_noise(mean, dt, noise);
    symmetrize(&mut out_cov);
    debug_assert!(w.mean0 + 2.0 * n as f64 * w.rest - 1.0 < 1e-9);
    Ok((out_mean, out_cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cv_f(dt: f64) -> DMatrix<f64> {
        let mut f = DMatrix::identity(4, 4);
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        f
    }

    #[test]
    fn linear_model_matches_kalman_prediction() {
        let m = DVector::from_vec(vec![10.0, -4.0, 2.0, 0.5]);
        #[rustfmt::skip]
        let p = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.2, 0.1, 0.0,
            0.2, 2.0, 0.0, 0.3,
            0.1, 0.0, 4.0, 0.5,
            0.0, 0.3, 0.5, 3.0,
        ]);
        let noise = ProcessNoise::default();
        let dt = 0.1;
        let (um, up) =
            ukf_predict(MotionModel::Cv, &m, &p, dt, &noise, &SigmaParams::default()).unwrap();
        let f = cv_f(dt);
        let q = MotionModel::Cv.process_noise(&m, dt, &noise);
        assert_relative_eq!(um, &f * &m, epsilon = 1e-9);
        assert_relative_eq!(up, &f * &p * f.transpose() + q, epsilon = 1e-9);
    }

    #[test]
    fn stationary_cv_only_grows_by_q() {
        let m = DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]);
        let p = DMatrix::identity(4, 4) * 1e-12;
        let noise = ProcessNoise::default();
        let (um, up) = ukf_predict(
            MotionModel::Cv,
            &m,
            &p,
            0.5,
            &noise,
            &SigmaParams::default(),
        )
        .unwrap();
        assert_relative_eq!(um, m, epsilon = 1e-12);
        let q = MotionModel::Cv.process_noise(&m, 0.5, &noise);
        assert_relative_eq!(up, q, epsilon = 1e-9);
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let m = DVector::zeros(4);
        let p = DMatrix::identity(4, 4);
        let r = ukf_predict(
            MotionModel::Cv,
            &m,
            &p,
            0.0,
            &ProcessNoise::default(),
            &SigmaParams::default(),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn indefinite_covariance_fails() {
        let m = DVector::zeros(4);
        let p = -DMatrix::identity(4, 4);
        let r = ukf_predict(
            MotionModel::Cv,
            &m,
            &p,
            0.1,
            &ProcessNoise::default(),
            &SigmaParams::default(),
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn singular_covariance_recovers_with_jitter() {
        let m = DVector::zeros(4);
        let p = DMatrix::zeros(4, 4);
        assert!(ukf_predict(
            MotionModel::Cv,
            &m,
            &p,
            0.1,
            &ProcessNoise::default(),
            &SigmaParams::default()
        )
        .is_ok());
    }

    #[test]
    fn ctrv_prediction_wraps_yaw() {
        let m = DVector::from_vec(vec![0.0, 0.0, 3.1, 2.0, 1.0]);
        let p = DMatrix::identity(5, 5) * 0.01;
        let (um, up) = ukf_predict(
            MotionModel::Ctrv,
            &m,
            &p,
            0.1,
            &ProcessNoise::default(),
            &SigmaParams::default(),
        )
        .unwrap();
        assert!(um[2] < 0.0 && um[2] > -3.2);
        assert!(up[(2, 2)] < 0.1);
    }
}
