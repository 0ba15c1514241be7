//! Process models and the conversions between their state spaces.
//!
//! CV state: `(x, y, vx, vy)`. CTRV state: `(x, y, yaw, speed, yaw_rate)`.
//! Every model maps into the common output space `(x, y, vx, vy)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    Cv,
    Ctrv,
}

/// Process-noise intensities shared by the models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// Linear acceleration std (m/s^2), both models.
    pub accel_std: f64,
    /// Yaw acceleration std (rad/s^2), CTRV only.
    pub yaw_accel_std: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            accel_std: 2.0,
            yaw_accel_std: 1.0,
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// `sin(a) / a`, with the series form near zero so the CTRV motion has a
/// smooth yaw-rate -> 0 limit.
fn sinc(a: f64) -> f64 {
    if a.abs() < 1e-4 {
        let a2 = a * a;
        1.0 - a2 / 6.0 + a2 * a2 / 120.0
    } else {
        a.sin() / a
    }
}

impl MotionModel {
    pub fn dim(self) -> usize {
        match self {
            MotionModel::Cv => 4,
            MotionModel::Ctrv => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionModel::Cv => "cv",
            MotionModel::Ctrv => "ctrv",
        }
    }

    /// State components that are angles; residuals on them are wrapped.
    pub fn angle_indices(self) -> &'static [usize] {
        match self {
            MotionModel::Cv => &[],
            MotionModel::Ctrv => &[2],
        }
    }

    pub fn propagate(self, s: &DVector<f64>, dt: f64) -> DVector<f64> {
        match self {
            MotionModel::Cv => {
                DVector::from_vec(vec![s[0] + s[2] * dt, s[1] + s[3] * dt, s[2], s[3]])
            }
            MotionModel::Ctrv => {
                let (yaw, v, w) = (s[2], s[3], s[4]);
                // sin(yaw + w dt) - sin(yaw) = 2 cos(yaw + w dt / 2) sin(w dt / 2),
                // likewise for cos; no division by the yaw rate.
                let half = 0.5 * w * dt;
                let arc = v * dt * sinc(half);
                let mid = yaw + half;
                DVector::from_vec(vec![
                    s[0] + arc * mid.cos(),
                    s[1] + arc * mid.sin(),
                    wrap_angle(yaw + w * dt),
                    v,
                    w,
                ])
            }
        }
    }

    /// Additive process noise for a step of `dt`, evaluated at `s`.
    pub fn process_noise(self, s: &DVector<f64>, dt: f64, noise: &ProcessNoise) -> DMatrix<f64> {
        let qa = noise.accel_std * noise.accel_std;
        let (t2, t3, t4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
        match self {
            MotionModel::Cv => {
                let mut q = DMatrix::zeros(4, 4);
                for (p, v) in [(0, 2), (1, 3)] {
                    q[(p, p)] = qa * t4 / 4.0;
                    q[(p, v)] = qa * t3 / 2.0;
                    q[(v, p)] = qa * t3 / 2.0;
                    q[(v, v)] = qa * t2;
                }
                q
            }
            MotionModel::Ctrv => {
                let (c, sn) = (s[2].cos(), s[2].sin());
                #[rustfmt::skip]
                let g = DMatrix::from_row_slice(5, 2, &[
                    0.5 * t2 * c,  0.0,
                    0.5 * t2 * sn, 0.0,
                    0.0,           0.5 * t2,
                    dt,            0.0,
                    0.0,           dt,
                ]);
                let w = DMatrix::from_diagonal(&DVector::from_vec(vec![
                    qa,
                    noise.yaw_accel_std * noise.yaw_accel_std,
                ]));
                &g * w * g.transpose()
            }
        }
    }

    /// Map into `(x, y, vx, vy)` with its Jacobian.
    pub fn to_output(self, s: &DVector<f64>) -> (Vector4<f64>, DMatrix<f64>) {
        match self {
            MotionModel::Cv => (
                Vector4::new(s[0], s[1], s[2], s[3]),
                DMatrix::identity(4, 4),
            ),
            MotionModel::Ctrv => {
                let (c, sn, v) = (s[2].cos(), s[2].sin(), s[3]);
                #[rustfmt::skip]
                let j = DMatrix::from_row_slice(4, 5, &[
                    1.0, 0.0, 0.0,    0.0, 0.0,
                    0.0, 1.0, 0.0,    0.0, 0.0,
                    0.0, 0.0, -v * sn, c,  0.0,
                    0.0, 0.0, v * c,  sn,  0.0,
                ]);
                (Vector4::new(s[0], s[1], v * c, v * sn), j)
            }
        }
    }
}

/// Output-space moments of a model's `(mean, covariance)`.
pub fn output_moments(
    model: MotionModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> (Vector4<f64>, Matrix4<f64>) {
    let (m, j) = model.to_output(mean);
    let p = &j * cov * j.transpose();
    (m, Matrix4::from_fn(|r, c| p[(r, c)]))
}

/// Converts `(mean, cov)` of model `from` into the state space of model `to`.
/// `reference` is `to`'s own current estimate; it supplies the components
/// `from` cannot observe (yaw rate, and yaw when the velocity is too small or
/// too uncertain to define a heading).
pub fn convert(
    from: MotionModel,
    to: MotionModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    reference: (&DVector<f64>, &DMatrix<f64>),
) -> (DVector<f64>, DMatrix<f64>) {
    match (from, to) {
        (a, b) if a == b => (mean.clone(), cov.clone()),
        (MotionModel::Ctrv, MotionModel::Cv) => {
            let (m, j) = MotionModel::Ctrv.to_output(mean);
            (
                DVector::from_column_slice(m.as_slice()),
                &j * cov * j.transpose(),
            )
        }
        (MotionModel::Cv, MotionModel::Ctrv) => {
            let (ref_mean, ref_cov) = reference;
            let (vx, vy) = (mean[2], mean[3]);
            let speed = vx.hypot(vy);
            let speed_std = (0.5 * (cov[(2, 2)] + cov[(3, 3)])).max(0.0).sqrt();
            let mut j = DMatrix::zeros(5, 4);
            j[(0, 0)] = 1.0;
            j[(1, 1)] = 1.0;
            let (yaw, v, fixed_yaw);
            if speed < 0.1 || speed < speed_std {
                // Heading undefined: keep the target's yaw, project velocity on it.
                yaw = ref_mean[2];
                v = vx * yaw.cos() + vy * yaw.sin();
                j[(3, 2)] = yaw.cos();
                j[(3, 3)] = yaw.sin();
                fixed_yaw = true;
            } else {
                let direct = vy.atan2(vx);
                let s2 = speed * speed;
                // Reversed heading with negative speed describes the same
                // velocity; pick whichever is closer to the target's yaw.
                let flip = wrap_angle(direct + PI - ref_mean[2]).abs()
                    < wrap_angle(direct - ref_mean[2]).abs();
                let sign = if flip { -1.0 } else { 1.0 };
                yaw = if flip {
                    wrap_angle(direct + PI)
                } else {
                    direct
                };
                v = sign * speed;
                j[(2, 2)] = -vy / s2;
                j[(2, 3)] = vx / s2;
                j[(3, 2)] = sign * vx / speed;
                j[(3, 3)] = sign * vy / speed;
                fixed_yaw = false;
            }
            let out = DVector::from_vec(vec![mean[0], mean[1], yaw, v, ref_mean[4]]);
            let mut p = &j * cov * j.transpose();
            if fixed_yaw {
                p[(2, 2)] = ref_cov[(2, 2)];
            }
            p[(4, 4)] = ref_cov[(4, 4)];
            (out, p)
        }
        _ => unreachable!("all model pairs covered"),
    }
}
