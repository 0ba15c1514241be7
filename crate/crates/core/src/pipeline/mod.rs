//! The online frame loop and the evaluation protocol around it.
//!
//! Per frame: segment, volumetric filter, project and match detections,
//! tracker step, discriminator, under-sampling, descriptor lookup and one
//! forest batch update. The forest is checkpointed and scored on the
//! held-out set each time the learned-sample count reaches a multiple of
//! `checkpoint_interval`.

mod config;
mod eval;
mod report;
mod undersample;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;

pub use config::{
    DatasetConfig, Mode, RunConfig, TemplateConfig, UndersampleConfig, VolumetricTemplate,
};
pub use eval::{confusion, evaluate, ConfusionMatrix, EvalReport, SeriesPoint};
pub use report::{report_csv, write_report_csv, Stage, Telemetry, BUCKET_EDGES_MS};
pub use undersample::Undersampler;

use crate::annotate::{match_detections, project_bbox, PreLabel};
use crate::descriptor::{
    extract, read_feature_csv, write_feature_csv, FeatureVector, LabelledFeatures,
};
use crate::discriminator::{accumulate, Discriminator, LabelledSample, TrackEvidence};
use crate::error::{Error, Result};
use crate::ingest::{load_sequence, FrameBundle, ObjectClass};
use crate::orf::{self, ForestModel, Sample};
use crate::segmentation::{euclidean_cluster, volumetric_filter, Cluster};
use crate::tracker::{Measurement, TrackState, Tracker};

/// Features tagged with the frame they were observed in, and their label.
type FrameSample = ((u64, Vec<f64>), ObjectClass);

/// Sample and frame accounting of one run. `emitted == learned +
/// undersampled_away` always holds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunCounters {
    pub frames: u64,
    /// Frames dropped after a numerical failure or a broken precondition.
    pub frames_skipped: u64,
    pub clusters: u64,
    pub prelabelled_clusters: u64,
    /// Tracks that reached confirmation, counted when they end.
    pub tracks_confirmed: u64,
    /// Tracks the tracker dropped after a numerical failure.
    pub track_failures: u64,
    /// Labelled samples produced by the discriminator (or, without a
    /// tracker, by single observations; in orf-only mode, feature rows).
    pub emitted: u64,
    pub learned: u64,
    pub undersampled_away: u64,
    pub per_class_learned: [u64; ObjectClass::COUNT],
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub counters: RunCounters,
    pub telemetry: Telemetry,
    pub model: ForestModel,
    /// Checkpoint files in the order written.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(samples_learned: u64) -> String {
    format!("ckpt-{samples_learned:08}.bin")
}

pub const FINAL_MODEL_NAME: &str = "final.bin";

/// Under-sampling, batch updates, checkpoints and the learning curve.
struct Learner<'a> {
    model: ForestModel,
    gate: Undersampler,
    interval: u64,
    test_set: &'a [LabelledFeatures],
    checkpoint_dir: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
    series: Vec<SeriesPoint>,
    dump: Option<Vec<LabelledFeatures>>,
    counters: RunCounters,
}

impl Learner<'_> {
    fn learn(&mut self, samples: Vec<FrameSample>) -> Result<()> {
        self.counters.emitted += samples.len() as u64;
        let kept = self.gate.filter(samples);
        self.counters.undersampled_away = self.gate.dropped();
        let mut rest: &[FrameSample] = &kept;
        while !rest.is_empty() {
            let room = self.interval - self.counters.learned % self.interval;
            let (now, later) = rest.split_at((room as usize).min(rest.len()));
            let batch: Vec<Sample> = now
                .iter()
                .map(|((_, x), c)| (x.clone(), c.index()))
                .collect();
            self.model.update_batch(&batch)?;
            self.counters.learned += now.len() as u64;
            for ((frame_id, x), c) in now {
                self.counters.per_class_learned[c.index()] += 1;
                if let Some(dump) = &mut self.dump {
                    dump.push(LabelledFeatures {
                        frame_id: *frame_id,
                        label: *c,
                        features: FeatureVector::new(x.clone())?,
                    });
                }
            }
            if self.counters.learned.is_multiple_of(self.interval) {
                self.checkpoint()?;
            }
            rest = later;
        }
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<()> {
        let learned = self.counters.learned;
        if let Some(dir) = &self.checkpoint_dir {
            let path = dir.join(checkpoint_name(learned));
            orf::save(&self.model, &path)?;
            self.checkpoints.push(path);
        }
        self.series.push(SeriesPoint {
            samples_learned: learned,
            confusion: confusion(&self.model, self.test_set)?,
        });
        Ok(())
    }
}

/// Per-frame labels and descriptors, before tracking.
struct FrameClusters {
    clusters: Vec<Cluster>,
    prelabels: Vec<Option<PreLabel>>,
    features: Vec<Vec<f64>>,
}

/// Time a stage and record it.
fn timed<T>(telemetry: &mut Telemetry, stage: Stage, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    telemetry.record(stage, start.elapsed());
    out
}

fn is_frame_local(e: &Error) -> bool {
    matches!(e, Error::Numerical(_) | Error::Contract(_))
}

struct FrameLoop<'a> {
    config: &'a RunConfig,
    telemetry: Telemetry,
    tracker: Option<Tracker>,
    discriminator: Discriminator,
    /// Descriptors of clusters that sit in some live track's history.
    cache: BTreeMap<(u64, usize), Vec<f64>>,
    last_timestamp: Option<f64>,
}

impl<'a> FrameLoop<'a> {
    fn new(config: &'a RunConfig) -> Result<Self> {
        let tracker = match config.mode {
            Mode::Full | Mode::VolumetricOnly => Some(Tracker::new(config.tracker.clone())?),
            Mode::NoTracker | Mode::OrfOnly => None,
        };
        Ok(Self {
            config,
            telemetry: Telemetry::default(),
            tracker,
            discriminator: Discriminator::new(config.discriminator.clone())?,
            cache: BTreeMap::new(),
            last_timestamp: None,
        })
    }

    fn perceive(&mut self, bundle: &FrameBundle) -> Result<FrameClusters> {
        let cfg = self.config;
        let cloud = &bundle.cloud;
        let clusters = timed(&mut self.telemetry, Stage::Segment, || {
            volumetric_filter(euclidean_cluster(cloud, &cfg.cluster), &cfg.filter)
        });
        let prelabels = timed(&mut self.telemetry, Stage::Annotate, || match cfg.mode {
            Mode::VolumetricOnly => clusters
                .iter()
                .map(|c| {
                    cfg.templates.classify(c).map(|class_label| PreLabel {
                        class_label,
                        score: cfg.templates.score,
                        source_detection: 0,
                    })
                })
                .collect(),
            _ => {
                let boxes: Vec<_> = clusters
                    .par_iter()
                    .map(|c| project_bbox(c, &bundle.calib))
                    .collect();
                match_detections(&clusters, &boxes, &bundle.detections, &cfg.matching)
            }
        });
        let features = timed(&mut self.telemetry, Stage::Describe, || {
            clusters
                .par_iter()
                .map(|c| extract(c, cloud).map(|f| f.as_slice().to_vec()))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(FrameClusters {
            clusters,
            prelabels,
            features,
        })
    }

    /// Labelled samples released by this frame.
    fn step(
        &mut self,
        bundle: &FrameBundle,
        counters: &mut RunCounters,
    ) -> Result<Vec<FrameSample>> {
        let frame_id = bundle.cloud.frame_id;
        let frame = self.perceive(bundle)?;
        counters.clusters += frame.clusters.len() as u64;
        counters.prelabelled_clusters += frame.prelabels.iter().flatten().count() as u64;

        let Some(tracker) = &mut self.tracker else {
            // Every pre-labelled cluster is a one-observation track.
            let start = Instant::now();
            let cfg = &self.config.discriminator;
            let out = frame
                .prelabels
                .iter()
                .zip(frame.features)
                .filter_map(|(p, x)| {
                    let mut ev = TrackEvidence::new(0);
                    accumulate(&mut ev, p.as_ref()?, cfg);
                    let (label, prob) = ev.best();
                    (prob >= cfg.threshold).then_some(((frame_id, x), label))
                })
                .collect();
            self.telemetry.record(Stage::Discriminate, start.elapsed());
            return Ok(out);
        };

        let dt = match self.last_timestamp {
            Some(t) => bundle.cloud.timestamp - t,
            None => 0.0,
        };
        let measurements: Vec<Measurement> = frame
            .clusters
            .iter()
            .map(|c| Measurement {
                position: Vector2::new(c.centroid.x, c.centroid.y),
                cluster_id: c.id,
                frame_id,
            })
            .collect();
        let failures_before = tracker.diagnostics().numerical_failures;
        let dead = timed(&mut self.telemetry, Stage::Track, || {
            tracker.step(&measurements, dt)
        })?;
        self.last_timestamp = Some(bundle.cloud.timestamp);
        counters.track_failures += tracker.diagnostics().numerical_failures - failures_before;

        let start = Instant::now();
        let by_cluster: BTreeMap<usize, usize> = frame
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();
        let mut released = Vec::new();
        for track in &dead {
            counters.tracks_confirmed += track.confirmed as u64;
            released.extend(self.discriminator.retire(track));
        }
        let tracker = self.tracker.as_ref().expect("checked above");
        for track in tracker.tracks() {
            let Some(obs) = track.history.last().filter(|o| o.frame_id == frame_id) else {
                continue;
            };
            let i = by_cluster[&obs.cluster_id];
            self.discriminator
                .observe(track.id, frame.prelabels[i].as_ref());
            self.cache
                .entry((frame_id, obs.cluster_id))
                .or_insert_with(|| frame.features[i].clone());
        }
        for track in tracker.tracks() {
            released.extend(self.discriminator.flush_due(track, frame_id));
        }
        let out = self.resolve(released);
        self.prune();
        self.telemetry.record(Stage::Discriminate, start.elapsed());
        Ok(out)
    }

    fn resolve(&self, released: Vec<LabelledSample>) -> Vec<FrameSample> {
        released
            .into_iter()
            .map(|s| {
                let x = self.cache[&(s.frame_id, s.cluster_id)].clone();
                ((s.frame_id, x), s.label)
            })
            .collect()
    }

    /// Drops descriptors older than every live track's first observation.
    fn prune(&mut self) {
        let Some(tracker) = &self.tracker else { return };
        let oldest = tracker
            .tracks()
            .iter()
            .filter_map(|t| t.history.first())
            .map(|o| o.frame_id)
            .min();
        match oldest {
            Some(f) => self.cache = self.cache.split_off(&(f, 0)),
            None => self.cache.clear(),
        }
    }

    /// Retires every live track at the end of the sequence.
    fn finish(&mut self, counters: &mut RunCounters) -> Vec<FrameSample> {
        let Some(tracker) = &mut self.tracker else {
            return Vec::new();
        };
        let live: Vec<TrackState> = tracker.drain();
        counters.tracks_confirmed += live.iter().filter(|t| t.confirmed).count() as u64;
        let released: Vec<_> = live
            .iter()
            .flat_map(|t| self.discriminator.retire(t))
            .collect();
        let out = self.resolve(released);
        self.cache.clear();
        out
    }
}

fn load_test_set(config: &RunConfig) -> Result<Vec<LabelledFeatures>> {
    let path = config.dataset.test_path();
    let rows = read_feature_csv(&path)?;
    if rows.is_empty() {
        return Err(Error::format(&path, "test set is empty"));
    }
    Ok(rows)
}

/// Runs the online loop of `config.mode` over the configured sequence and
/// scores the final model on the held-out set.
///
/// I/O errors abort. A frame whose processing hits a numerical failure or a
/// broken precondition (e.g. a non-increasing timestamp) is skipped and
/// counted.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let test_set = load_test_set(config)?;
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut learner = Learner {
        model: ForestModel::new(config.orf.clone())?,
        gate: Undersampler::new(config.undersample.clone()),
        interval: config.checkpoint_interval,
        test_set: &test_set,
        checkpoint_dir: config.checkpoint_dir.clone(),
        checkpoints: Vec::new(),
        series: Vec::new(),
        dump: config.dump_features.as_ref().map(|_| Vec::new()),
        counters: RunCounters::default(),
    };
    let mut telemetry = Telemetry::default();

    if config.mode == Mode::OrfOnly {
        let rows = read_feature_csv(&config.dataset.features_path())?;
        let mut by_frame: BTreeMap<u64, Vec<FrameSample>> = BTreeMap::new();
        for r in rows {
            by_frame
                .entry(r.frame_id)
                .or_default()
                .push(((r.frame_id, r.features.as_slice().to_vec()), r.label));
        }
        for (_, samples) in by_frame {
            learner.counters.frames += 1;
            let start = Instant::now();
            learner.learn(samples)?;
            telemetry.record(Stage::Learn, start.elapsed());
        }
    } else {
        let sequence = load_sequence(&config.dataset.sequence, &config.dataset.read_options())?;
        let mut frames = FrameLoop::new(config)?;
        for bundle in &sequence.bundles {
            learner.counters.frames += 1;
            let samples = match frames.step(bundle, &mut learner.counters) {
                Ok(s) => s,
                Err(e) if is_frame_local(&e) => {
                    log::warn!("frame {} skipped: {e}", bundle.cloud.frame_id);
                    learner.counters.frames_skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let start = Instant::now();
            learner.learn(samples)?;
            frames.telemetry.record(Stage::Learn, start.elapsed());
        }
        let tail = frames.finish(&mut learner.counters);
        learner.learn(tail)?;
        telemetry = frames.telemetry;
    }

    let final_confusion = confusion(&learner.model, &test_set)?;
    if let Some(dir) = &config.checkpoint_dir {
        orf::save(&learner.model, &dir.join(FINAL_MODEL_NAME))?;
    }
    if let (Some(path), Some(rows)) = (&config.dump_features, &learner.dump) {
        write_feature_csv(path, rows)?;
    }
    debug_assert_eq!(
        learner.counters.emitted,
        learner.counters.learned + learner.counters.undersampled_away
    );
    Ok(RunOutcome {
        report: EvalReport::from_confusion(final_confusion, learner.series),
        counters: learner.counters,
        telemetry,
        model: learner.model,
        checkpoints: learner.checkpoints,
    })
}
