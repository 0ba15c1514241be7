//! Track-level label decisions. Every camera pre-label along a track adds
//! its log-odds to that class; a confirmed track whose best class reaches the
//! probability threshold labels every cluster it observed, including the
//! frames the camera never saw.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotate::PreLabel;
use crate::error::{Error, Result};
use crate::ingest::ObjectClass;
use crate::tracker::{Observation, TrackState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub threshold: f64,
    /// Detector scores are clamped to `[score_min, score_max]` before
    /// conversion to odds.
    pub score_min: f64,
    pub score_max: f64,
    /// Frames between label flushes of a live confirmed track.
    pub flush_interval: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            score_min: 0.01,
            score_max: 0.99,
            flush_interval: 10,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.score_min && self.score_min <= self.score_max && self.score_max < 1.0) {
            return Err(Error::Config(
                "discriminator: need 0 < score_min <= score_max < 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(
                "discriminator: threshold must be in [0, 1]".into(),
            ));
        }
        if self.flush_interval == 0 {
            return Err(Error::Config(
                "discriminator: flush_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackEvidence {
    pub track_id: u64,
    /// Cumulative log-odds per class, indexed by `ObjectClass::index`.
    pub log_odds: [f64; ObjectClass::COUNT],
    pub observation_count: u64,
    pub labelled_observation_count: u64,
}

impl TrackEvidence {
    pub fn new(track_id: u64) -> Self {
        Self {
            track_id,
            log_odds: [0.0; ObjectClass::COUNT],
            observation_count: 0,
            labelled_observation_count: 0,
        }
    }

    /// Most probable class and its probability; ties go to the lower class
    /// index.
    pub fn best(&self) -> (ObjectClass, f64) {
        let mut best = ObjectClass::ALL[0];
        for c in ObjectClass::ALL {
            if self.log_odds[c.index()] > self.log_odds[best.index()] {
                best = c;
            }
        }
        (best, track_probability(self, best))
    }
}

/// Adds one pre-label's evidence. `observation_count` is advanced by the
/// caller for every track observation, labelled or not.
pub fn accumulate(evidence: &mut TrackEvidence, prelabel: &PreLabel, config: &DiscriminatorConfig) {
    let p = prelabel.score.clamp(config.score_min, config.score_max);
    evidence.log_odds[prelabel.class_label.index()] += (p / (1.0 - p)).ln();
    evidence.labelled_observation_count += 1;
    evidence.observation_count = evidence
        .observation_count
        .max(evidence.labelled_observation_count);
}

/// `odds / (1 + odds)` from the cumulative log-odds, without overflow.
pub fn track_probability(evidence: &TrackEvidence, class: ObjectClass) -> f64 {
    sigmoid(evidence.log_odds[class.index()])
}

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// One training label produced by a track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelledSample {
    pub track_id: u64,
    pub frame_id: u64,
    pub cluster_id: usize,
    pub label: ObjectClass,
    pub track_probability: f64,
}

/// One sample per history entry when the best class clears `threshold`,
/// otherwise none.
pub fn finalize(
    history: &[Observation],
    evidence: &TrackEvidence,
    threshold: f64,
) -> Vec<LabelledSample> {
    let (label, p) = evidence.best();
    if p < threshold {
        return Vec::new();
    }
    history
        .iter()
        .map(|o| LabelledSample {
            track_id: evidence.track_id,
            frame_id: o.frame_id,
            cluster_id: o.cluster_id,
            label,
            track_probability: p,
        })
        .collect()
}

/// Per-track evidence plus the flush schedule and duplicate suppression.
#[derive(Clone, Debug, Default)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    evidence: BTreeMap<u64, TrackEvidence>,
    last_flush: BTreeMap<u64, u64>,
    emitted: BTreeSet<(u64, u64)>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn evidence(&self, track_id: u64) -> Option<&TrackEvidence> {
        self.evidence.get(&track_id)
    }

    /// Records one track observation and its pre-label, if the cluster had
    /// one.
    pub fn observe(&mut self, track_id: u64, prelabel: Option<&PreLabel>) {
        let ev = self
            .evidence
            .entry(track_id)
            .or_insert_with(|| TrackEvidence::new(track_id));
        ev.observation_count += 1;
        if let Some(p) = prelabel {
            accumulate(ev, p, &self.config);
        }
    }

    /// Periodic flush for a live track at `frame_id`: emits labels for a
    /// confirmed track once `flush_interval` frames have passed since its
    /// first observation or last flush.
    pub fn flush_due(&mut self, track: &TrackState, frame_id: u64) -> Vec<LabelledSample> {
        let Some(first) = track.history.first() else {
            return Vec::new();
        };
        let last = *self.last_flush.entry(track.id).or_insert(first.frame_id);
        if !track.confirmed || frame_id < last + self.config.flush_interval {
            return Vec::new();
        }
        self.last_flush.insert(track.id, frame_id);
        self.emit(track)
    }

    /// Final flush for a track that died or outlived the sequence; forgets
    /// its evidence.
    pub fn retire(&mut self, track: &TrackState) -> Vec<LabelledSample> {
        let out = if track.confirmed {
            self.emit(track)
        } else {
            Vec::new()
        };
        self.evidence.remove(&track.id);
        self.last_flush.remove(&track.id);
        out
    }

    fn emit(&mut self, track: &TrackState) -> Vec<LabelledSample> {
        let Some(ev) = self.evidence.get(&track.id) else {
            return Vec::new();
        };
        finalize(&track.history, ev, self.config.threshold)
            .into_iter()
            .filter(|s| self.emitted.insert((s.track_id, s.frame_id)))
            .collect()
    }
}

pub fn write_sample_log_header(out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "frame_id,track_id,label,track_probability")
}

pub fn write_sample_log_rows(
    out: &mut impl Write,
    samples: &[LabelledSample],
) -> std::io::Result<()> {
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            s.frame_id,
            s.track_id,
            s.label.name(),
            s.track_probability
        )?;
    }
    Ok(())
}
