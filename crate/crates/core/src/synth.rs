//! Scripted traffic scenes: the desk-scale stand-in for a recorded drive
//! plus an image detector.
//!
//! The sensor sits at the origin, 1.73 m above a flat ground, looking along
//! +x; the camera covers roughly +-40 degrees around +x. Road users move on
//! straight lanes parallel to x, so most of each trajectory lies outside the
//! camera's view. Points are sampled on the box faces that face the sensor,
//! with density falling off as 1/range^2. Detections are the projected
//! ground-truth boxes with pixel noise, random scores and random dropout.
//! Static clutter (hedges, posts, bike racks, bins) is never detected; some of
//! it has the proportions of a road user.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::annotate::{project_hull, Box2D};
use crate::descriptor::{extract, write_feature_csv, LabelledFeatures};
use crate::error::{Error, Result};
use crate::ingest::{
    write_cloud, write_detections_csv, Calibration, Detection2D, ObjectClass, Point, PointCloud,
};
use crate::segmentation::{
    euclidean_cluster, volumetric_filter, SegmentationParams, VolumetricFilter,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Two-way road with cars, cyclists, pedestrians and roadside clutter.
    MixedTraffic,
    /// One car driving past the sensor, nothing else.
    SingleCar,
    /// Mixed traffic with the detector switched off.
    NoDetections,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::MixedTraffic,
        Scenario::SingleCar,
        Scenario::NoDetections,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::MixedTraffic => "mixed-traffic",
            Scenario::SingleCar => "single-car",
            Scenario::NoDetections => "no-detections",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario '{s}' (expected one of: mixed-traffic, single-car, no-detections)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub frames: usize,
    pub frame_period: f64,
    pub seed: u64,
    pub detection_dropout: f64,
    pub score_range: (f64, f64),
    /// Std of each box edge, as a fraction of the box size.
    pub box_noise: f64,
    /// Probability that a detection carries a wrong class.
    pub label_flip: f64,
    /// Expected points per square meter of face at 1 m, head-on.
    pub point_density: f64,
    pub max_points_per_face: usize,
    pub point_noise: f64,
    pub max_range: f64,
    pub detector_range: f64,
    pub sensor_height: f64,
    /// Every `test_stride`-th frame of the held-out scene goes into the test
    /// features.
    pub test_stride: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 300,
            frame_period: 0.1,
            seed: 0,
            detection_dropout: 0.3,
            score_range: (0.6, 0.95),
            box_noise: 0.03,
            label_flip: 0.0,
            point_density: 8000.0,
            max_points_per_face: 400,
            point_noise: 0.01,
            max_range: 60.0,
            detector_range: 45.0,
            sensor_height: 1.73,
            test_stride: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActorKind {
    Object(ObjectClass),
    Clutter,
}

impl ActorKind {
    pub fn class(self) -> Option<ObjectClass> {
        match self {
            ActorKind::Object(c) => Some(c),
            ActorKind::Clutter => None,
        }
    }
}

/// A box rigidly attached to an actor: `offset` is the bottom-center in the
/// actor frame, `size` is `(length, width, height)` along the actor axes.
#[derive(Clone, Debug, PartialEq)]
struct Part {
    offset: Vector3<f64>,
    size: Vector3<f64>,
    intensity: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub id: usize,
    pub kind: ActorKind,
    parts: Vec<Part>,
    spawn_time: f64,
    start: (f64, f64),
    yaw: f64,
    speed: f64,
    /// Alive while its x coordinate lies in this interval.
    x_span: (f64, f64),
}

impl Actor {
    /// Ground-plane position and yaw at time `t`, if alive.
    pub fn pose(&self, t: f64) -> Option<(f64, f64, f64)> {
        if t < self.spawn_time {
            return None;
        }
        let d = self.speed * (t - self.spawn_time);
        let x = self.start.0 + d * self.yaw.cos();
        let y = self.start.1 + d * self.yaw.sin();
        (self.x_span.0..=self.x_span.1)
            .contains(&x)
            .then_some((x, y, self.yaw))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub actor_id: usize,
    pub kind: ActorKind,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub cloud: PointCloud,
    /// Actor index per point.
    pub owners: Vec<usize>,
    pub detections: Vec<Detection2D>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    pub calib: Calibration,
    pub actors: Vec<Actor>,
    detections_enabled: bool,
}

/// KITTI-like camera: LiDAR (x forward, y left, z up) to camera (x right,
/// y down, z forward), 1242x375 image.
pub fn default_calibration() -> Calibration {
    let mut calib =
        Calibration::pinhole(721.5, 721.5, 621.0, 187.5, Calibration::DEFAULT_IMAGE_SIZE);
    #[rustfmt::skip]
    let axes = Matrix4::new(
        0.0, -1.0,  0.0, 0.0,
        0.0,  0.0, -1.0, 0.0,
        1.0,  0.0,  0.0, 0.0,
        0.0,  0.0,  0.0, 1.0,
    );
    calib.lidar_to_cam = axes;
    calib
}

const LANE_X: (f64, f64) = (-40.0, 50.0);

struct Lane {
    class: ObjectClass,
    y: f64,
    forward: bool,
    speed: (f64, f64),
    period: (f64, f64),
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn object_parts(class: ObjectClass, rng: &mut ChaCha8Rng) -> Vec<Part> {
    let part = |l: f64, w: f64, h: f64, base: f64, dx: f64, intensity| Part {
        offset: Vector3::new(dx, 0.0, base),
        size: Vector3::new(l, w, h),
        intensity,
    };
    match class {
        ObjectClass::Car => {
            let (l, w, h) = (
                uniform(rng, (3.8, 4.8)),
                uniform(rng, (1.6, 1.9)),
                uniform(rng, (1.4, 1.65)),
            );
            vec![part(l, w, h, 0.0, 0.0, (0.30, 0.08))]
        }
        ObjectClass::Pedestrian => {
            let (l, w, h) = (
                uniform(rng, (0.35, 0.5)),
                uniform(rng, (0.45, 0.65)),
                uniform(rng, (1.55, 1.9)),
            );
            vec![part(l, w, h, 0.0, 0.0, (0.12, 0.05))]
        }
        ObjectClass::Cyclist => {
            let (l, h) = (uniform(rng, (1.6, 1.85)), uniform(rng, (0.95, 1.1)));
            let rider_h = uniform(rng, (0.7, 0.85));
            vec![
                part(l, 0.5, h, 0.0, 0.0, (0.50, 0.12)),
                part(0.5, 0.45, rider_h, h, -0.15, (0.14, 0.05)),
            ]
        }
    }
}

fn clutter_parts(rng: &mut ChaCha8Rng) -> Vec<Part> {
    let part = |l: f64, w: f64, h: f64, intensity| Part {
        offset: Vector3::zeros(),
        size: Vector3::new(l, w, h),
        intensity,
    };
    match rng.random_range(0..4) {
        // hedge: car-sized footprint and height
        0 => vec![part(
            uniform(rng, (3.5, 4.5)),
            uniform(rng, (1.5, 2.0)),
            uniform(rng, (1.25, 1.6)),
            (0.07, 0.04),
        )],
        // post with a sign: pedestrian-sized
        1 => vec![part(0.35, 0.35, uniform(rng, (1.3, 1.8)), (0.55, 0.15))],
        // bike rack: cyclist-sized
        2 => vec![part(2.0, 0.6, 1.3, (0.60, 0.15))],
        // bin
        _ => vec![part(0.7, 0.7, 1.1, (0.25, 0.10))],
    }
}

impl Scene {
    pub fn build(scenario: Scenario, config: SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut actors = Vec::new();
        let duration = config.frames as f64 * config.frame_period;
        match scenario {
            Scenario::SingleCar => {
                actors.push(Actor {
                    id: 0,
                    kind: ActorKind::Object(ObjectClass::Car),
                    parts: object_parts(ObjectClass::Car, &mut rng),
                    spawn_time: 0.0,
                    start: (-15.0, -3.0),
                    yaw: 0.0,
                    speed: 8.0,
                    x_span: (-100.0, 1000.0),
                });
            }
            Scenario::MixedTraffic | Scenario::NoDetections => {
                let lanes = [
                    Lane {
                        class: ObjectClass::Car,
                        y: -1.9,
                        forward: true,
                        speed: (7.0, 11.0),
                        period: (4.0, 6.0),
                    },
                    Lane {
                        class: ObjectClass::Car,
                        y: 1.9,
                        forward: false,
                        speed: (7.0, 11.0),
                        period: (4.0, 6.0),
                    },
                    Lane {
                        class: ObjectClass::Cyclist,
                        y: -4.6,
                        forward: true,
                        speed: (3.5, 5.5),
                        period: (5.0, 7.0),
                    },
                    Lane {
                        class: ObjectClass::Cyclist,
                        y: 4.6,
                        forward: false,
                        speed: (3.5, 5.5),
                        period: (5.0, 7.0),
                    },
                    Lane {
                        class: ObjectClass::Pedestrian,
                        y: -6.8,
                        forward: true,
                        speed: (1.1, 1.6),
                        period: (14.0, 20.0),
                    },
                    Lane {
                        class: ObjectClass::Pedestrian,
                        y: -8.2,
                        forward: false,
                        speed: (1.1, 1.6),
                        period: (14.0, 20.0),
                    },
                    Lane {
                        class: ObjectClass::Pedestrian,
                        y: 6.8,
                        forward: true,
                        speed: (1.1, 1.6),
                        period: (14.0, 20.0),
                    },
                    Lane {
                        class: ObjectClass::Pedestrian,
                        y: 8.2,
                        forward: false,
                        speed: (1.1, 1.6),
                        period: (14.0, 20.0),
                    },
                ];
                for lane in &lanes {
                    // One speed per lane, so lane-mates never overlap.
                    let speed = uniform(&mut rng, lane.speed);
                    let traverse = (LANE_X.1 - LANE_X.0) / speed;
                    let mut t = -traverse + uniform(&mut rng, (0.0, lane.period.1));
                    while t < duration {
                        let (x0, yaw) = if lane.forward {
                            (LANE_X.0, 0.0)
                        } else {
                            (LANE_X.1, std::f64::consts::PI)
                        };
                        actors.push(Actor {
                            id: actors.len(),
                            kind: ActorKind::Object(lane.class),
                            parts: object_parts(lane.class, &mut rng),
                            spawn_time: t,
                            start: (x0, lane.y + uniform(&mut rng, (-0.15, 0.15))),
                            yaw,
                            speed,
                            x_span: LANE_X,
                        });
                        t += uniform(&mut rng, lane.period);
                    }
                }
                for side in [-1.0, 1.0] {
                    let mut x = LANE_X.0 + uniform(&mut rng, (0.0, 6.0));
                    while x < LANE_X.1 {
                        actors.push(Actor {
                            id: actors.len(),
                            kind: ActorKind::Clutter,
                            parts: clutter_parts(&mut rng),
                            spawn_time: 0.0,
                            start: (x, side * uniform(&mut rng, (10.6, 11.4))),
                            yaw: 0.0,
                            speed: 0.0,
                            x_span: (f64::NEG_INFINITY, f64::INFINITY),
                        });
                        x += uniform(&mut rng, (8.0, 16.0));
                    }
                }
            }
        }
        Self {
            config,
            calib: default_calibration(),
            actors,
            detections_enabled: scenario != Scenario::NoDetections,
        }
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.config.frame_period
    }

    fn part_frame(&self, pose: (f64, f64, f64), part: &Part) -> (Vector3<f64>, Rotation3<f64>) {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), pose.2);
        let bottom = Vector3::new(pose.0, pose.1, -self.config.sensor_height) + rot * part.offset;
        (bottom + Vector3::new(0.0, 0.0, part.size.z / 2.0), rot)
    }

    fn corners(&self, pose: (f64, f64, f64), actor: &Actor) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(8 * actor.parts.len());
        for part in &actor.parts {
            let (center, rot) = self.part_frame(pose, part);
            let h = part.size / 2.0;
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        out.push(center + rot * Vector3::new(sx * h.x, sy * h.y, sz * h.z));
                    }
                }
            }
        }
        out
    }

    fn sample_part(
        &self,
        pose: (f64, f64, f64),
        part: &Part,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<Point>,
    ) {
        let (center, rot) = self.part_frame(pose, part);
        let noise = Normal::new(0.0, self.config.point_noise).expect("valid std");
        let intensity = Normal::new(part.intensity.0, part.intensity.1).expect("valid std");
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut local = Vector3::zeros();
                local[axis] = sign;
                let normal = rot * local;
                let face_center = center + normal * (part.size[axis] / 2.0);
                let range = face_center.norm().max(1.0);
                let facing = -normal.dot(&face_center) / range;
                if facing <= 0.0 {
                    continue;
                }
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let area = part.size[a] * part.size[b];
                let lambda = self.config.point_density * area * facing / (range * range);
                let count = (Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0) as usize)
                    .min(self.config.max_points_per_face);
                let mut ta = Vector3::zeros();
                ta[a] = 1.0;
                let mut tb = Vector3::zeros();
                tb[b] = 1.0;
                let (ta, tb) = (rot * ta, rot * tb);
                for _ in 0..count {
                    let u = (rng.random::<f64>() - 0.5) * part.size[a];
                    let v = (rng.random::<f64>() - 0.5) * part.size[b];
                    let p = face_center
                        + ta * u
                        + tb * v
                        + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                    let i = intensity.sample(rng).clamp(0.0, 1.0);
                    out.push(Point::new(p.x as f32, p.y as f32, p.z as f32, i as f32));
                }
            }
        }
    }

    fn detect(
        &self,
        pose: (f64, f64, f64),
        actor: &Actor,
        class: ObjectClass,
        rng: &mut ChaCha8Rng,
    ) -> Option<Detection2D> {
        let range = pose.0.hypot(pose.1);
        if pose.0 < 1.5 || range > self.config.detector_range {
            return None;
        }
        let hull = project_hull(&self.corners(pose, actor), &self.calib)?;
        if hull.area() < 50.0 || rng.random::<f64>() < self.config.detection_dropout {
            return None;
        }
        let (w, h) = (hull.u_max - hull.u_min, hull.v_max - hull.v_min);
        let (iw, ih) = (
            self.calib.image_size.0 as f64,
            self.calib.image_size.1 as f64,
        );
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut jitter = |v: f64, scale: f64, hi: f64| {
            (v + n.sample(rng) * self.config.box_noise * scale).clamp(0.0, hi)
        };
        let bbox = Box2D::new(
            jitter(hull.u_min, w, iw),
            jitter(hull.v_min, h, ih),
            jitter(hull.u_max, w, iw),
            jitter(hull.v_max, h, ih),
        );
        if !(bbox.u_max > bbox.u_min && bbox.v_max > bbox.v_min) {
            return None;
        }
        let class_label = if rng.random::<f64>() < self.config.label_flip {
            ObjectClass::from_index(
                (class.index() + rng.random_range(1..ObjectClass::COUNT)) % ObjectClass::COUNT,
            )
            .unwrap()
        } else {
            class
        };
        Some(Detection2D {
            class_label,
            score: uniform(rng, self.config.score_range),
            bbox,
        })
    }

    /// Renders one frame. Each frame draws from its own generator stream, so
    /// frames can be rendered in any order.
    pub fn render(&self, frame: usize) -> RenderedFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(frame as u64 + 1);
        let t = self.timestamp(frame);
        let mut points = Vec::new();
        let mut owners = Vec::new();
        let mut detections = Vec::new();
        let mut ground_truth = Vec::new();
        for (idx, actor) in self.actors.iter().enumerate() {
            let Some(pose) = actor.pose(t) else { continue };
            if pose.0.hypot(pose.1) > self.config.max_range {
                continue;
            }
            ground_truth.push(GroundTruth {
                actor_id: actor.id,
                kind: actor.kind,
                x: pose.0,
                y: pose.1,
                yaw: pose.2,
            });
            let before = points.len();
            for part in &actor.parts {
                self.sample_part(pose, part, &mut rng, &mut points);
            }
            owners.resize(points.len(), idx);
            debug_assert!(owners.len() >= before);
            if let (true, Some(class)) = (self.detections_enabled, actor.kind.class()) {
                detections.extend(self.detect(pose, actor, class, &mut rng));
            }
        }
        RenderedFrame {
            cloud: PointCloud {
                frame_id: frame as u64,
                timestamp: t,
                points,
            },
            owners,
            detections,
            ground_truth,
        }
    }

    /// Descriptors of the clusters that belong to a road user: clusters are
    /// formed exactly as the pipeline forms them, and a cluster is labelled
    /// when at least `min_fraction` of its points come from one object.
    pub fn labelled_features(
        &self,
        frame: &RenderedFrame,
        seg: &SegmentationParams,
        filter: &VolumetricFilter,
        min_fraction: f64,
    ) -> Result<Vec<LabelledFeatures>> {
        let clusters = volumetric_filter(euclidean_cluster(&frame.cloud, seg), filter);
        let mut out = Vec::new();
        for c in &clusters {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &c.point_indices {
                *counts.entry(frame.owners[i]).or_default() += 1;
            }
            let (&owner, &n) = counts
                .iter()
                .max_by_key(|(_, &n)| n)
                .expect("clusters are non-empty");
            let Some(label) = self.actors[owner].kind.class() else {
                continue;
            };
            if (n as f64) < min_fraction * c.len() as f64 {
                continue;
            }
            out.push(LabelledFeatures {
                frame_id: frame.cloud.frame_id,
                label,
                features: extract(c, &frame.cloud)?,
            });
        }
        Ok(out)
    }

    /// Writes the sequence layout read by `ingest::load_sequence`, plus
    /// `labels.csv` with the per-frame ground truth.
    pub fn write_sequence(&self, dir: &Path) -> Result<SequenceSummary> {
        let velodyne = dir.join("velodyne");
        fs::create_dir_all(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
        let mut timestamps = String::new();
        let mut labels = String::from("frame_id,actor_id,kind,x,y,yaw\n");
        let mut by_frame = BTreeMap::new();
        let mut summary = SequenceSummary::default();
        for f in 0..self.config.frames {
            let frame = self.render(f);
            write_cloud(&velodyne.join(format!("{f:06}.bin")), &frame.cloud)?;
            writeln!(timestamps, "{}", frame.cloud.timestamp).unwrap();
            for g in &frame.ground_truth {
                let kind = g.kind.class().map_or("Clutter", ObjectClass::name);
                writeln!(
                    labels,
                    "{f},{},{kind},{},{},{}",
                    g.actor_id, g.x, g.y, g.yaw
                )
                .unwrap();
            }
            summary.frames += 1;
            summary.points += frame.cloud.len();
            summary.detections += frame.detections.len();
            if !frame.detections.is_empty() {
                by_frame.insert(f as u64, frame.detections);
            }
        }
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("timestamps.txt", timestamps)?;
        write("labels.csv", labels)?;
        write("calib.txt", self.calib.to_kitti_text())?;
        write_detections_csv(&dir.join("detections.csv"), &by_frame)?;
        Ok(summary)
    }

    /// Labelled descriptors of every `stride`-th frame.
    pub fn feature_set(
        &self,
        stride: usize,
        seg: &SegmentationParams,
        filter: &VolumetricFilter,
    ) -> Result<Vec<LabelledFeatures>> {
        let mut out = Vec::new();
        for f in (0..self.config.frames).step_by(stride.max(1)) {
            out.extend(self.labelled_features(&self.render(f), seg, filter, LABEL_PURITY)?);
        }
        Ok(out)
    }
}

/// Fraction of a cluster's points that must come from one object for the
/// cluster to carry that object's label.
pub const LABEL_PURITY: f64 = 0.8;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequenceSummary {
    pub frames: usize,
    pub points: usize,
    pub detections: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScenarioSummary {
    pub sequence: SequenceSummary,
    pub train_features: usize,
    pub test_features: usize,
}

/// Seed of the held-out scene generated next to a scene with `seed`.
pub fn held_out_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Writes a complete scenario directory:
///
/// ```text
/// <dir>/velodyne/NNNNNN.bin, timestamps.txt, detections.csv, calib.txt, labels.csv
/// <dir>/features.csv        ground-truth labelled descriptors of this scene
/// <dir>/test/features.csv   held-out scene (different seed), every test_stride-th frame
/// ```
pub fn write_scenario(
    scenario: Scenario,
    config: &SceneConfig,
    seg: &SegmentationParams,
    filter: &VolumetricFilter,
    dir: &Path,
) -> Result<ScenarioSummary> {
    let scene = Scene::build(scenario, config.clone());
    let sequence = scene.write_sequence(dir)?;
    let train = scene.feature_set(1, seg, filter)?;
    write_feature_csv(&dir.join("features.csv"), &train)?;

    let held_out = Scene::build(
        scenario,
        SceneConfig {
            seed: held_out_seed(config.seed),
            ..config.clone()
        },
    );
    let test = held_out.feature_set(config.test_stride, seg, filter)?;
    let test_dir = dir.join("test");
    fs::create_dir_all(&test_dir).map_err(|e| Error::io(&test_dir, e))?;
    write_feature_csv(&test_dir.join("features.csv"), &test)?;
    Ok(ScenarioSummary {
        sequence,
        train_features: train.len(),
        test_features: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::project_point;

    fn small() -> SceneConfig {
        SceneConfig {
            frames: 20,
            ..Default::default()
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("highway".parse::<Scenario>().is_err());
    }

    #[test]
    fn camera_looks_forward() {
        let calib = default_calibration();
        calib.validate().unwrap();
        let (u, v) = project_point(&Vector3::new(10.0, 0.0, 0.0), &calib).unwrap();
        assert!((u - 621.0).abs() < 1e-9 && (v - 187.5).abs() < 1e-9);
        // Left of the sensor projects to the left half of the image.
        assert!(
            project_point(&Vector3::new(10.0, 2.0, 0.0), &calib)
                .unwrap()
                .0
                < 621.0
        );
        assert!(project_point(&Vector3::new(-10.0, 0.0, 0.0), &calib).is_none());
    }

    #[test]
    fn rendering_is_deterministic_and_order_free() {
        let scene = Scene::build(Scenario::MixedTraffic, small());
        let a = scene.render(7);
        let _ = scene.render(3);
        let b = scene.render(7);
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.owners.len(), a.cloud.len());
    }

    #[test]
    fn only_sensor_facing_faces_are_sampled() {
        let scene = Scene::build(Scenario::SingleCar, small());
        let frame = scene.render(0);
        let (x, _, _) = scene.actors[0].pose(0.0).unwrap();
        let car = &scene.actors[0].parts[0];
        // Car behind the sensor: its rear face (far side) gets no points.
        let far_face = x - car.size.x / 2.0;
        assert!(frame
            .cloud
            .points
            .iter()
            .all(|p| (p.x as f64) > far_face + 0.05));
        assert!(frame.cloud.len() > 100);
    }

    #[test]
    fn clutter_is_rendered_but_never_detected() {
        let scene = Scene::build(Scenario::MixedTraffic, small());
        let frame = scene.render(10);
        let clutter: Vec<usize> = (0..scene.actors.len())
            .filter(|&i| scene.actors[i].kind == ActorKind::Clutter)
            .collect();
        assert!(!clutter.is_empty());
        assert!(frame.owners.iter().any(|o| clutter.contains(o)));
        assert!(frame
            .ground_truth
            .iter()
            .any(|g| g.kind == ActorKind::Clutter));
    }

    #[test]
    fn no_detections_scenario_is_silent() {
        let scene = Scene::build(Scenario::NoDetections, small());
        assert!((0..20).all(|f| scene.render(f).detections.is_empty()));
    }

    #[test]
    fn detections_only_in_front() {
        let scene = Scene::build(Scenario::MixedTraffic, small());
        let mut total = 0;
        for f in 0..20 {
            let frame = scene.render(f);
            total += frame.detections.len();
            for d in &frame.detections {
                assert!(d.score >= 0.6 && d.score < 0.95);
                assert!(d.bbox.u_min >= 0.0 && d.bbox.u_max <= 1242.0);
            }
        }
        assert!(total > 0);
    }

    #[test]
    fn written_sequence_loads() {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene::build(Scenario::MixedTraffic, small());
        let summary = scene.write_sequence(dir.path()).unwrap();
        let seq = crate::ingest::load_sequence(dir.path(), &Default::default()).unwrap();
        assert_eq!(seq.bundles.len(), 20);
        assert_eq!(
            summary.detections,
            seq.bundles
                .iter()
                .map(|b| b.detections.len())
                .sum::<usize>()
        );
        assert!((seq.bundles[5].cloud.timestamp - 0.5).abs() < 1e-12);
        assert_eq!(seq.bundles[5].cloud, scene.render(5).cloud);
    }

    #[test]
    fn labelled_features_cover_all_classes() {
        let scene = Scene::build(Scenario::MixedTraffic, small());
        let rows = scene
            .feature_set(
                5,
                &SegmentationParams::default(),
                &VolumetricFilter::default(),
            )
            .unwrap();
        for c in ObjectClass::ALL {
            assert!(rows.iter().any(|r| r.label == c), "no {c} samples");
        }
    }
}
