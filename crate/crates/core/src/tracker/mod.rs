//! Multi-target tracker over cluster centroids: an interacting multiple
//! model filter (CV + CTRV) with unscented prediction and probabilistic data
//! association.
//!
//! One [`Tracker::step`] per frame: mix, predict every model, gate all
//! measurements against the mixture prediction of every track, PDA update,
//! model-probability update, fusion, lifecycle. Measurements outside every
//! gate start tentative tracks.

pub mod imm;
pub mod models;
pub mod pda;
pub mod ukf;

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use imm::{imm_mix, mixing_weights, update_model_probabilities, ModelEstimate, MotionModelSet};
pub use models::{MotionModel, ProcessNoise};
pub use pda::{associate, pda_update, Association, PdaParams, PredictedMeasurement};
pub use ukf::{ukf_predict, SigmaParams};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub models: Vec<MotionModel>,
    /// Row-stochastic model transition matrix, row = from.
    pub transition: Vec<Vec<f64>>,
    pub p_detection: f64,
    pub clutter_density: f64,
    pub gate_threshold: f64,
    pub confirm_hits: u32,
    pub max_misses: u32,
    pub measurement_std: f64,
    pub noise: ProcessNoise,
    pub sigma: SigmaParams,
    pub init_speed_std: f64,
    pub init_yaw_std: f64,
    pub init_yaw_rate_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            models: vec![MotionModel::Cv, MotionModel::Ctrv],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            p_detection: 0.9,
            clutter_density: 1e-3,
            gate_threshold: 9.21,
            confirm_hits: 3,
            max_misses: 5,
            measurement_std: 0.25,
            noise: ProcessNoise::default(),
            sigma: SigmaParams::default(),
            init_speed_std: 10.0,
            init_yaw_std: std::f64::consts::PI,
            init_yaw_rate_std: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn model_set(&self) -> Result<MotionModelSet> {
        let n = self.models.len();
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!(
                "tracker: transition must be {n}x{n}"
            )));
        }
        let pi = DMatrix::from_fn(n, n, |i, j| self.transition[i][j]);
        MotionModelSet::with_uniform_prior(self.models.clone(), pi)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tracker: {m}")));
        if !(self.p_detection > 0.0 && self.p_detection <= 1.0) {
            return bad("p_detection must be in (0, 1]");
        }
        if !(self.clutter_density >= 0.0) {
            return bad("clutter_density must be non-negative");
        }
        if !(self.gate_threshold > 0.0) {
            return bad("gate_threshold must be positive");
        }
        if self.confirm_hits == 0 || self.max_misses == 0 {
            return bad("confirm_hits and max_misses must be positive");
        }
        for (name, v) in [
            ("measurement_std", self.measurement_std),
            ("init_speed_std", self.init_speed_std),
            ("init_yaw_std", self.init_yaw_std),
            ("init_yaw_rate_std", self.init_yaw_rate_std),
            ("noise.accel_std", self.noise.accel_std),
            ("noise.yaw_accel_std", self.noise.yaw_accel_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.sigma.alpha > 0.0) {
            return bad("sigma.alpha must be positive");
        }
        self.model_set().map(|_| ())
    }

    fn pda(&self) -> PdaParams {
        PdaParams {
            p_detection: self.p_detection,
            clutter_density: self.clutter_density,
            gate_threshold: self.gate_threshold,
        }
    }

    fn measurement_cov(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.measurement_std * self.measurement_std
    }

    fn initial_estimate(&self, model: MotionModel, z: &Vector2<f64>) -> ModelEstimate {
        let pos = self.measurement_std * self.measurement_std;
        let speed = self.init_speed_std * self.init_speed_std;
        let (mean, diag) = match model {
            MotionModel::Cv => (vec![z.x, z.y, 0.0, 0.0], vec![pos, pos, speed, speed]),
            MotionModel::Ctrv => (
                vec![z.x, z.y, 0.0, 0.0, 0.0],
                vec![
                    pos,
                    pos,
                    self.init_yaw_std.powi(2),
                    speed,
                    self.init_yaw_rate_std.powi(2),
                ],
            ),
        };
        ModelEstimate {
            model,
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

impl TrackStatus {
    pub fn name(self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Dead => "dead",
        }
    }
}

/// A cluster centroid on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub position: Vector2<f64>,
    pub cluster_id: usize,
    pub frame_id: u64,
}

/// The cluster a track was associated with in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub frame_id: u64,
    pub cluster_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub status: TrackStatus,
    /// Whether the track ever reached `Confirmed`; stays set after death.
    pub confirmed: bool,
    pub hits: u32,
    /// Consecutive frames without a gated measurement.
    pub misses: u32,
    pub estimates: Vec<ModelEstimate>,
    pub mu: Vec<f64>,
    /// Fused `(x, y, vx, vy)`.
    pub fused_mean: Vector4<f64>,
    pub fused_cov: Matrix4<f64>,
    pub history: Vec<Observation>,
}

impl TrackState {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.fused_mean[0], self.fused_mean[1])
    }

    fn fuse(&mut self) {
        let parts: Vec<_> = self
            .estimates
            .iter()
            .map(|e| models::output_moments(e.model, &e.mean, &e.cov))
            .collect();
        let mean = parts
            .iter()
            .zip(&self.mu)
            .fold(Vector4::zeros(), |acc, (p, &w)| acc + p.0 * w);
        let mut cov = parts
            .iter()
            .zip(&self.mu)
            .fold(Matrix4::zeros(), |acc, (p, &w)| {
                let d = p.0 - mean;
                acc + (p.1 + d * d.transpose()) * w
            });
        cov = (cov + cov.transpose()) * 0.5;
        self.fused_mean = mean;
        self.fused_cov = cov;
    }
}

/// Counters for conditions the tracker absorbs instead of failing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackerDiagnostics {
    /// Tracks killed because a covariance could not be factorized.
    pub numerical_failures: u64,
    /// Updates where every model likelihood vanished and the prior model
    /// probabilities were kept.
    pub degenerate_likelihoods: u64,
}

struct Predicted {
    estimates: Vec<ModelEstimate>,
    c: Vec<f64>,
    combined: PredictedMeasurement,
}

pub struct Tracker {
    config: TrackerConfig,
    set: MotionModelSet,
    tracks: Vec<TrackState>,
    next_id: u64,
    diagnostics: TrackerDiagnostics,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let set = config.model_set()?;
        Ok(Self {
            config,
            set,
            tracks: Vec::new(),
            next_id: 0,
            diagnostics: TrackerDiagnostics::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn model_set(&self) -> &MotionModelSet {
        &self.set
    }

    /// Live tracks in creation order.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    pub fn diagnostics(&self) -> &TrackerDiagnostics {
        &self.diagnostics
    }

    fn predict(&self, track: &TrackState, dt: f64) -> Result<Predicted> {
        let pi = self.set.transition();
        let mixed = imm_mix(&track.estimates, &track.mu, pi)?;
        let estimates = mixed
            .iter()
            .map(|e| {
                ukf_predict(
                    e.model,
                    &e.mean,
                    &e.cov,
                    dt,
                    &self.config.noise,
                    &self.config.sigma,
                )
                .map(|(mean, cov)| ModelEstimate {
                    model: e.model,
                    mean,
                    cov,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let c = imm::predicted_probabilities(&track.mu, pi);
        let r = self.config.measurement_cov();
        let parts: Vec<_> = estimates
            .iter()
            .map(|e| PredictedMeasurement::from_estimate(e, &r))
            .collect();
        let combined = PredictedMeasurement::combine(&parts, &c);
        Ok(Predicted {
            estimates,
            c,
            combined,
        })
    }

    /// Advances every track by `dt` seconds and incorporates the frame's
    /// measurements. Returns the tracks that died this frame.
    pub fn step(&mut self, measurements: &[Measurement], dt: f64) -> Result<Vec<TrackState>> {
        if !self.tracks.is_empty() && !(dt > 0.0) {
            return Err(Error::Contract(format!(
                "tracker step needs dt > 0, got {dt}"
            )));
        }
        for m in measurements {
            if !m.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Contract(format!(
                    "non-finite measurement for cluster {}",
                    m.cluster_id
                )));
            }
        }
        let predicted: Vec<Result<Predicted>> = self
            .tracks
            .par_iter()
            .map(|t| self.predict(t, dt))
            .collect();
        let positions: Vec<Vector2<f64>> = measurements.iter().map(|m| m.position).collect();
        let gates: Vec<Option<PredictedMeasurement>> = predicted
            .iter()
            .map(|p| p.as_ref().ok().map(|p| p.combined))
            .collect();
        let assoc = associate(&gates, &positions, self.config.gate_threshold);

        let config = &self.config;
        let pi = self.set.transition();
        let outcomes: Vec<Result<bool>> = self
            .tracks
            .par_iter_mut()
            .zip(predicted)
            .zip(&assoc.gated)
            .map(|((track, pred), gated)| {
                let pred = pred?;
                update_track(track, pred, gated, measurements, config, pi)
            })
            .collect();

        for (track, outcome) in self.tracks.iter_mut().zip(outcomes) {
            match outcome {
                Ok(degenerate) => self.diagnostics.degenerate_likelihoods += degenerate as u64,
                Err(e) => {
                    log::warn!("track {} dropped: {e}", track.id);
                    self.diagnostics.numerical_failures += 1;
                    track.status = TrackStatus::Dead;
                }
            }
        }

        for &m in &assoc.unassigned {
            let track = self.spawn(&measurements[m]);
            self.tracks.push(track);
        }
        let (dead, live): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| t.status == TrackStatus::Dead);
        self.tracks = live;
        Ok(dead)
    }

    /// Removes and returns every live track, e.g. at the end of a sequence.
    pub fn drain(&mut self) -> Vec<TrackState> {
        std::mem::take(&mut self.tracks)
    }

    fn spawn(&mut self, m: &Measurement) -> TrackState {
        let id = self.next_id;
        self.next_id += 1;
        let estimates: Vec<_> = self
            .set
            .models()
            .iter()
            .map(|&model| self.config.initial_estimate(model, &m.position))
            .collect();
        let mut track = TrackState {
            id,
            status: TrackStatus::Tentative,
            confirmed: false,
            hits: 1,
            misses: 0,
            estimates,
            mu: self.set.initial().to_vec(),
            fused_mean: Vector4::zeros(),
            fused_cov: Matrix4::zeros(),
            history: vec![Observation {
                frame_id: m.frame_id,
                cluster_id: m.cluster_id,
            }],
        };
        if self.config.confirm_hits <= 1 {
            track.status = TrackStatus::Confirmed;
            track.confirmed = true;
        }
        track.fuse();
        track
    }
}

/// PDA-updates every model, refreshes the model probabilities, fuses and
/// applies the lifecycle rules. Returns whether the likelihoods were
/// degenerate.
fn update_track(
    track: &mut TrackState,
    pred: Predicted,
    gated: &[usize],
    measurements: &[Measurement],
    config: &TrackerConfig,
    pi: &DMatrix<f64>,
) -> Result<bool> {
    let zs: Vec<Vector2<f64>> = gated.iter().map(|&m| measurements[m].position).collect();
    let r = config.measurement_cov();
    let params = config.pda();
    let outcomes = pred
        .estimates
        .iter()
        .map(|e| pda_update(e, &zs, &r, &params))
        .collect::<Result<Vec<_>>>()?;
    let likelihoods: Vec<f64> = outcomes.iter().map(|o| o.likelihood).collect();
    let (mu, ok) = update_model_probabilities(&track.mu, pi, &likelihoods);
    // Without usable likelihoods the predicted probabilities are the best
    // available posterior.
    track.mu = if ok { mu } else { pred.c.clone() };
    debug_assert!(imm::check_probability(&track.mu).is_ok());

    if !zs.is_empty() {
        let best = (0..zs.len())
            .map(|k| {
                (
                    k,
                    outcomes
                        .iter()
                        .zip(&track.mu)
                        .map(|(o, w)| o.betas[k] * w)
                        .sum::<f64>(),
                )
            })
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, b)| if b > acc.1 { (k, b) } else { acc },
            );
        let m = &measurements[gated[best.0]];
        track.history.push(Observation {
            frame_id: m.frame_id,
            cluster_id: m.cluster_id,
        });
        track.hits += 1;
        track.misses = 0;
        if track.status == TrackStatus::Tentative && track.hits >= config.confirm_hits {
            track.status = TrackStatus::Confirmed;
            track.confirmed = true;
        }
    } else {
        track.misses += 1;
        if track.misses >= config.max_misses {
            track.status = TrackStatus::Dead;
        }
    }
    track.estimates = outcomes.into_iter().map(|o| o.estimate).collect();
    track.fuse();
    Ok(!ok)
}

/// Writes the per-frame track dump header for `models` motion models.
pub fn write_dump_header(out: &mut impl Write, models: usize) -> std::io::Result<()> {
    write!(out, "frame_id,track_id,x,y,status")?;
    for i in 1..=models {
        write!(out, ",mu_{i}")?;
    }
    writeln!(out)
}

pub fn write_dump_rows(
    out: &mut impl Write,
    frame_id: u64,
    tracks: &[TrackState],
) -> std::io::Result<()> {
    for t in tracks {
        write!(
            out,
            "{frame_id},{},{},{},{}",
            t.id,
            t.fused_mean[0],
            t.fused_mean[1],
            t.status.name()
        )?;
        for mu in &t.mu {
            write!(out, ",{mu}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
