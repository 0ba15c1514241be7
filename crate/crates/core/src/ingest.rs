//! Reading LiDAR sweeps, camera detections and calibration from a
//! KITTI-style layout, and pairing them into per-frame bundles.
//!
//! Point clouds are raw velodyne `.bin` files: 16 bytes per point, four
//! little-endian `f32` values `(x, y, z, intensity)`. Detections are one per
//! line, `frame_id,class,score,u_min,v_min,u_max,v_max`. Calibration is the
//! KITTI `key: v0 v1 ...` text format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::annotate::Box2D;
use crate::error::{Error, Result};

/// Object categories handled by the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            ObjectClass::Car => 0,
            ObjectClass::Pedestrian => 1,
            ObjectClass::Cyclist => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(format!("unknown class '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub frame_id: u64,
    /// Seconds.
    pub timestamp: f64,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-file counters for records that were altered or dropped while decoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CloudDecodeStats {
    pub rejected_non_finite: usize,
    pub clamped_intensity: usize,
}

const POINT_RECORD_BYTES: usize = 16;

/// Decodes raw velodyne bytes. Non-finite records are dropped and counted;
/// intensities outside `[0, 1]` are clamped and counted.
pub fn decode_cloud(
    bytes: &[u8],
    frame_id: u64,
    timestamp: f64,
) -> std::result::Result<(PointCloud, CloudDecodeStats), String> {
    if !bytes.len().is_multiple_of(POINT_RECORD_BYTES) {
        return Err(format!(
            "truncated point cloud: {} bytes is not a multiple of {POINT_RECORD_BYTES}",
            bytes.len()
        ));
    }
    let mut stats = CloudDecodeStats::default();
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD_BYTES);
    for record in bytes.chunks_exact(POINT_RECORD_BYTES) {
        let field = |i: usize| f32::from_le_bytes(record[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, mut intensity) = (field(0), field(1), field(2), field(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            stats.rejected_non_finite += 1;
            continue;
        }
        if !(0.0..=1.0).contains(&intensity) {
            intensity = intensity.clamp(0.0, 1.0);
            stats.clamped_intensity += 1;
        }
        points.push(Point { x, y, z, intensity });
    }
    Ok((
        PointCloud {
            frame_id,
            timestamp,
            points,
        },
        stats,
    ))
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.points.len() * POINT_RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne `.bin` file. The frame id is taken from a numeric file
/// stem (`000042.bin` is frame 42), otherwise 0; the timestamp is 0 and is
/// filled in by [`load_sequence`] when a timestamp file exists.
pub fn read_cloud(path: &Path) -> Result<(PointCloud, CloudDecodeStats)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame_id = frame_id_from_path(path).unwrap_or(0);
    let (cloud, stats) = decode_cloud(&bytes, frame_id, 0.0).map_err(|m| Error::format(path, m))?;
    if stats.rejected_non_finite > 0 {
        log::warn!(
            "{}: rejected {} non-finite records",
            path.display(),
            stats.rejected_non_finite
        );
    }
    if stats.clamped_intensity > 0 {
        log::warn!(
            "{}: clamped {} intensities into [0,1]",
            path.display(),
            stats.clamped_intensity
        );
    }
    Ok((cloud, stats))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

fn frame_id_from_path(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub class_label: ObjectClass,
    pub score: f64,
    pub bbox: Box2D,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionReadOptions {
    /// Detections scoring below this are dropped; equality passes.
    pub score_threshold: f64,
    pub has_header: bool,
}

impl Default for DetectionReadOptions {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            has_header: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet {
    pub by_frame: BTreeMap<u64, Vec<Detection2D>>,
    pub dropped_low_score: usize,
    pub skipped_unknown_class: usize,
}

impl DetectionSet {
    pub fn total(&self) -> usize {
        self.by_frame.values().map(Vec::len).sum()
    }

    fn push(&mut self, frame_id: u64, det: Detection2D, threshold: f64) {
        if det.score < threshold {
            self.dropped_low_score += 1;
        } else {
            self.by_frame.entry(frame_id).or_default().push(det);
        }
    }
}

enum RecordError {
    UnknownClass(String),
    Malformed(String),
}

fn build_detection(
    class: &str,
    score: f64,
    b: [f64; 4],
) -> std::result::Result<Detection2D, RecordError> {
    let class_label = class
        .parse::<ObjectClass>()
        .map_err(RecordError::UnknownClass)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(RecordError::Malformed(format!(
            "score {score} outside [0,1]"
        )));
    }
    if b.iter().any(|v| !v.is_finite()) || !(b[0] < b[2] && b[1] < b[3]) {
        return Err(RecordError::Malformed(format!("ill-formed box {b:?}")));
    }
    Ok(Detection2D {
        class_label,
        score,
        bbox: Box2D::new(b[0], b[1], b[2], b[3]),
    })
}

/// Parses comma-separated detection text. `path` only labels error messages.
pub fn parse_detections(
    text: &str,
    path: &Path,
    opts: &DetectionReadOptions,
) -> Result<DetectionSet> {
    let mut set = DetectionSet::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if (opts.has_header && i == 0) || raw.trim().is_empty() || raw.trim_start().starts_with('#')
        {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(parse_err(format!(
                "expected 7 fields, found {}",
                fields.len()
            )));
        }
        let frame_id: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad frame id '{}'", fields[0])))?;
        let mut nums = [0.0f64; 5];
        for (slot, s) in nums.iter_mut().zip(&fields[2..]) {
            *slot = s
                .parse()
                .map_err(|_| parse_err(format!("bad number '{s}'")))?;
        }
        match build_detection(fields[1], nums[0], [nums[1], nums[2], nums[3], nums[4]]) {
            Ok(det) => set.push(frame_id, det, opts.score_threshold),
            Err(RecordError::UnknownClass(msg)) => {
                log::warn!("{}:{line_no}: {msg}, record skipped", path.display());
                set.skipped_unknown_class += 1;
            }
            Err(RecordError::Malformed(msg)) => return Err(parse_err(msg)),
        }
    }
    Ok(set)
}

pub fn read_detections(path: &Path, opts: &DetectionReadOptions) -> Result<DetectionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path, opts)
}

#[derive(Deserialize)]
struct JsonDetection {
    frame_id: u64,
    class: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// JSON-lines variant of [`parse_detections`]: one object per line with
/// keys `frame_id`, `class`, `score` and `box` (`[u_min, v_min, u_max, v_max]`).
pub fn parse_detections_jsonl(
    text: &str,
    path: &Path,
    opts: &DetectionReadOptions,
) -> Result<DetectionSet> {
    let mut set = DetectionSet::default();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: JsonDetection = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        match build_detection(&rec.class, rec.score, rec.bbox) {
            Ok(det) => set.push(rec.frame_id, det, opts.score_threshold),
            Err(RecordError::UnknownClass(_)) => set.skipped_unknown_class += 1,
            Err(RecordError::Malformed(msg)) => return Err(parse_err(msg)),
        }
    }
    Ok(set)
}

pub fn write_detections_csv(path: &Path, by_frame: &BTreeMap<u64, Vec<Detection2D>>) -> Result<()> {
    let mut out = String::new();
    for (frame, dets) in by_frame {
        for d in dets {
            let b = d.bbox;
            out.push_str(&format!(
                "{frame},{},{},{},{},{},{}\n",
                d.class_label, d.score, b.u_min, b.v_min, b.u_max, b.v_max
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Camera model and LiDAR-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Rectified camera frame to homogeneous pixel coordinates.
    pub projection: Matrix3x4<f64>,
    /// Rectifying rotation, homogenized.
    pub rect: Matrix4<f64>,
    /// Rigid LiDAR-to-camera transform.
    pub lidar_to_cam: Matrix4<f64>,
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
}

impl Calibration {
    pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (1242, 375);

    /// Pinhole intrinsics with identity rectification and extrinsics: the
    /// LiDAR frame coincides with the camera frame.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, image_size: (u32, u32)) -> Self {
        #[rustfmt::skip]
        let projection = Matrix3x4::new(
            fx, 0.0, cx, 0.0,
            0.0, fy, cy, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Self {
            projection,
            rect: Matrix4::identity(),
            lidar_to_cam: Matrix4::identity(),
            image_size,
        }
    }

    /// LiDAR frame to rectified camera frame.
    pub fn lidar_to_rect(&self) -> Matrix4<f64> {
        self.rect * self.lidar_to_cam
    }

    /// Checks the structural invariants: rigid bottom row and a rank-3 projection.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let bottom = self.lidar_to_cam.row(3);
        if bottom != Vector4::new(0.0, 0.0, 0.0, 1.0).transpose() {
            return Err("lidar-to-camera bottom row is not (0,0,0,1)".into());
        }
        let sv = self.projection.svd(false, false).singular_values;
        let max = sv.max();
        if !(max > 0.0) || sv.iter().any(|&s| s <= max * 1e-12) {
            return Err("projection matrix is rank deficient".into());
        }
        Ok(())
    }

    pub fn to_kitti_text(&self) -> String {
        let row = |vals: Vec<f64>| {
            vals.iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let p: Vec<f64> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| self.projection[(r, c)])
            .collect();
        let r: Vec<f64> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| self.rect[(r, c)])
            .collect();
        let t: Vec<f64> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| self.lidar_to_cam[(r, c)])
            .collect();
        format!(
            "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\nimage_size: {} {}\n",
            row(p),
            row(r),
            row(t),
            self.image_size.0,
            self.image_size.1
        )
    }
}

const PROJECTION_KEYS: &[&str] = &["P2", "P_rect_02"];
const RECT_KEYS: &[&str] = &["R0_rect", "R_rect_00"];
const LIDAR_KEYS: &[&str] = &["Tr_velo_to_cam", "Tr_velo_cam"];
const SIZE_KEYS: &[&str] = &["image_size", "S_rect_02"];

/// Parses KITTI calibration text. `path` only labels error messages.
pub fn parse_calibration(text: &str, path: &Path) -> Result<Calibration> {
    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let Some((key, values)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        let parsed: std::result::Result<Vec<f64>, _> =
            values.split_whitespace().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                rows.insert(key.to_string(), v);
            }
            // Non-numeric rows (e.g. calib_time in raw recordings) are ignored
            // unless they carry one of the keys we need.
            Err(_) if is_known_key(key) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("non-numeric value in '{key}'"),
                })
            }
            Err(_) => {}
        }
    }
    let fetch = |keys: &[&str], what: &str, len: usize| -> Result<Vec<f64>> {
        let v = keys
            .iter()
            .find_map(|k| rows.get(*k))
            .ok_or_else(|| Error::format(path, format!("missing {what}")))?;
        if v.len() != len {
            return Err(Error::format(
                path,
                format!("{what} has {} values, expected {len}", v.len()),
            ));
        }
        Ok(v.clone())
    };

    let projection = Matrix3x4::from_row_slice(&fetch(PROJECTION_KEYS, "projection", 12)?);
    let r = Matrix3::from_row_slice(&fetch(RECT_KEYS, "rectification", 9)?);
    let t = Matrix3x4::from_row_slice(&fetch(LIDAR_KEYS, "lidar-to-camera", 12)?);

    let mut rect = Matrix4::identity();
    rect.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    let mut lidar_to_cam = Matrix4::identity();
    lidar_to_cam.fixed_view_mut::<3, 4>(0, 0).copy_from(&t);

    let image_size = match SIZE_KEYS.iter().find_map(|k| rows.get(*k)) {
        Some(v) if v.len() == 2 && v[0] > 0.0 && v[1] > 0.0 => (v[0] as u32, v[1] as u32),
        Some(_) => return Err(Error::format(path, "image_size needs two positive values")),
        None => Calibration::DEFAULT_IMAGE_SIZE,
    };

    let calib = Calibration {
        projection,
        rect,
        lidar_to_cam,
        image_size,
    };
    calib.validate().map_err(|m| Error::format(path, m))?;
    Ok(calib)
}

fn is_known_key(key: &str) -> bool {
    [PROJECTION_KEYS, RECT_KEYS, LIDAR_KEYS, SIZE_KEYS]
        .iter()
        .any(|ks| ks.contains(&key))
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text, path)
}

#[derive(Clone, Debug)]
pub struct FrameBundle {
    pub cloud: PointCloud,
    pub detections: Vec<Detection2D>,
    pub calib: Calibration,
}

/// Pairs every cloud with the detections carrying the same frame id. Frames
/// without detections get an empty list.
pub fn synchronize(
    clouds: Vec<PointCloud>,
    detections: &BTreeMap<u64, Vec<Detection2D>>,
    calib: &Calibration,
) -> Vec<FrameBundle> {
    clouds
        .into_iter()
        .map(|cloud| FrameBundle {
            detections: detections.get(&cloud.frame_id).cloned().unwrap_or_default(),
            calib: calib.clone(),
            cloud,
        })
        .collect()
}

/// A sequence directory laid out as
///
/// ```text
/// <dir>/velodyne/NNNNNN.bin
/// <dir>/timestamps.txt      optional, one float (seconds) per frame
/// <dir>/detections.csv      or detections.jsonl; optional
/// <dir>/calib.txt
/// ```
#[derive(Clone, Debug)]
pub struct Sequence {
    pub bundles: Vec<FrameBundle>,
    pub cloud_stats: CloudDecodeStats,
    pub dropped_low_score: usize,
    pub skipped_unknown_class: usize,
}

/// Nominal sweep period used when no timestamp file is present.
pub const DEFAULT_FRAME_PERIOD: f64 = 0.1;

pub fn load_sequence(dir: &Path, opts: &DetectionReadOptions) -> Result<Sequence> {
    let velodyne = dir.join("velodyne");
    let mut files: Vec<PathBuf> = fs::read_dir(&velodyne)
        .map_err(|e| Error::io(&velodyne, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();

    let timestamps = read_timestamps(&dir.join("timestamps.txt"))?;
    let mut cloud_stats = CloudDecodeStats::default();
    let mut clouds = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let (mut cloud, stats) = read_cloud(f)?;
        if frame_id_from_path(f).is_none() {
            cloud.frame_id = i as u64;
        }
        cloud.timestamp = match &timestamps {
            Some(ts) => *ts.get(i).ok_or_else(|| {
                Error::format(
                    dir.join("timestamps.txt"),
                    format!("no timestamp for frame index {i}"),
                )
            })?,
            None => cloud.frame_id as f64 * DEFAULT_FRAME_PERIOD,
        };
        cloud_stats.rejected_non_finite += stats.rejected_non_finite;
        cloud_stats.clamped_intensity += stats.clamped_intensity;
        clouds.push(cloud);
    }

    let csv = dir.join("detections.csv");
    let jsonl = dir.join("detections.jsonl");
    let detections = if csv.exists() {
        read_detections(&csv, opts)?
    } else if jsonl.exists() {
        let text = fs::read_to_string(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
        parse_detections_jsonl(&text, &jsonl, opts)?
    } else {
        DetectionSet::default()
    };
    let calib = read_calibration(&dir.join("calib.txt"))?;

    Ok(Sequence {
        bundles: synchronize(clouds, &detections.by_frame, &calib),
        cloud_stats,
        dropped_low_score: detections.dropped_low_score,
        skipped_unknown_class: detections.skipped_unknown_class,
    })
}

fn read_timestamps(path: &Path) -> Result<Option<Vec<f64>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let t: f64 = line.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad timestamp '{}'", line.trim()),
        })?;
        if out.last().is_some_and(|&prev| t < prev) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "timestamps must be non-decreasing".into(),
            });
        }
        out.push(t);
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(vals: [f32; 4]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn two_records_give_two_points() {
        let mut bytes = record([3.0, 4.0, 0.0, 0.5]);
        bytes.extend(record([1.0, 2.0, 3.0, 0.25]));
        assert_eq!(bytes.len(), 32);
        let (cloud, stats) = decode_cloud(&bytes, 0, 0.0).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[0], Point::new(3.0, 4.0, 0.0, 0.5));
        assert_eq!(cloud.points[1], Point::new(1.0, 2.0, 3.0, 0.25));
        assert_eq!(stats, CloudDecodeStats::default());
    }

    #[test]
    fn empty_file_is_an_empty_cloud() {
        let (cloud, _) = decode_cloud(&[], 7, 0.0).unwrap();
        assert!(cloud.is_empty());
        assert_eq!(cloud.frame_id, 7);
    }

    #[test]
    fn truncated_file_is_rejected() {
        assert!(decode_cloud(&[0u8; 17], 0, 0.0).is_err());
    }

    #[test]
    fn non_finite_records_are_counted_and_dropped() {
        let mut bytes = record([f32::NAN, 0.0, 0.0, 0.1]);
        bytes.extend(record([1.0, f32::INFINITY, 0.0, 0.1]));
        bytes.extend(record([1.0, 1.0, 1.0, 1.7]));
        let (cloud, stats) = decode_cloud(&bytes, 0, 0.0).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(stats.rejected_non_finite, 2);
        assert_eq!(stats.clamped_intensity, 1);
        assert_eq!(cloud.points[0].intensity, 1.0);
    }

    #[test]
    fn read_cloud_uses_numeric_stem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000042.bin");
        fs::write(&path, record([1.0, 2.0, 3.0, 0.0])).unwrap();
        let (cloud, _) = read_cloud(&path).unwrap();
        assert_eq!(cloud.frame_id, 42);
        let truncated = dir.path().join("000043.bin");
        fs::write(&truncated, [0u8; 5]).unwrap();
        assert!(matches!(read_cloud(&truncated), Err(Error::Format { .. })));
    }

    fn opts() -> DetectionReadOptions {
        DetectionReadOptions::default()
    }

    #[test]
    fn score_threshold_is_inclusive() {
        let text = "0,Car,0.49,0,0,10,10\n0,Car,0.50,0,0,10,10\n";
        let set = parse_detections(text, Path::new("d.csv"), &opts()).unwrap();
        assert_eq!(set.total(), 1);
        assert_eq!(set.by_frame[&0][0].score, 0.5);
        assert_eq!(set.dropped_low_score, 1);
    }

    #[test]
    fn empty_detection_file_is_empty_map() {
        let set = parse_detections("", Path::new("d.csv"), &opts()).unwrap();
        assert!(set.by_frame.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "0,Car,0.9,0,0,10,10\n1,Car,zero,0,0,10,10\n";
        match parse_detections(text, Path::new("d.csv"), &opts()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let inverted = "0,Car,0.9,10,0,5,10\n";
        assert!(matches!(
            parse_detections(inverted, Path::new("d.csv"), &opts()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_class_is_skipped_and_counted() {
        let text = "0,Tram,0.9,0,0,10,10\n0,pedestrian,0.8,0,0,10,20\n";
        let set = parse_detections(text, Path::new("d.csv"), &opts()).unwrap();
        assert_eq!(set.skipped_unknown_class, 1);
        assert_eq!(set.by_frame[&0][0].class_label, ObjectClass::Pedestrian);
    }

    #[test]
    fn header_flag_skips_first_line() {
        let text = "frame,class,score,u0,v0,u1,v1\n3,Cyclist,0.7,1,2,3,4\n";
        let with_header = DetectionReadOptions {
            has_header: true,
            ..opts()
        };
        let set = parse_detections(text, Path::new("d.csv"), &with_header).unwrap();
        assert_eq!(set.by_frame[&3].len(), 1);
        assert!(parse_detections(text, Path::new("d.csv"), &opts()).is_err());
    }

    #[test]
    fn jsonl_reader_matches_csv_reader() {
        let csv = "0,Car,0.9,1,2,30,40\n0,Cyclist,0.4,1,2,30,40\n2,Pedestrian,0.6,5,5,9,20\n";
        let jsonl = concat!(
            "{\"frame_id\":0,\"class\":\"Car\",\"score\":0.9,\"box\":[1,2,30,40]}\n",
            "{\"frame_id\":0,\"class\":\"Cyclist\",\"score\":0.4,\"box\":[1,2,30,40]}\n",
            "{\"frame_id\":2,\"class\":\"Pedestrian\",\"score\":0.6,\"box\":[5,5,9,20]}\n",
        );
        let a = parse_detections(csv, Path::new("a"), &opts()).unwrap();
        let b = parse_detections_jsonl(jsonl, Path::new("b"), &opts()).unwrap();
        assert_eq!(a, b);
    }

    const KITTI_CALIB: &str = "\
P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
";

    #[test]
    fn kitti_calibration_parses_against_independent_reference() {
        let calib = parse_calibration(KITTI_CALIB, Path::new("calib.txt")).unwrap();
        // Reference values come from splitting the fixture text by hand, not
        // through the parser.
        let line = KITTI_CALIB.lines().find(|l| l.starts_with("P2:")).unwrap();
        let p2: Vec<f64> = line[3..]
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(calib.projection[(r, c)], p2[4 * r + c]);
            }
        }
        assert_eq!(calib.rect[(0, 1)], 9.837760e-03);
        assert_eq!(calib.rect[(3, 3)], 1.0);
        assert_eq!(calib.rect[(0, 3)], 0.0);
        assert_eq!(calib.lidar_to_cam[(2, 3)], -2.717806e-01);
        assert_eq!(
            calib.lidar_to_cam.row(3),
            Vector4::new(0.0, 0.0, 0.0, 1.0).transpose()
        );
        assert_eq!(calib.image_size, Calibration::DEFAULT_IMAGE_SIZE);
    }

    #[test]
    fn identity_calibration_parses() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let calib = parse_calibration(text, Path::new("c")).unwrap();
        assert_eq!(calib.rect, Matrix4::identity());
        assert_eq!(calib.lidar_to_cam, Matrix4::identity());
    }

    #[test]
    fn missing_projection_is_named() {
        let text = "R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let err = parse_calibration(text, Path::new("c")).unwrap_err();
        assert!(err.to_string().contains("missing projection"), "{err}");
    }

    #[test]
    fn calibration_text_round_trips() {
        let calib = parse_calibration(KITTI_CALIB, Path::new("c")).unwrap();
        let again = parse_calibration(&calib.to_kitti_text(), Path::new("c")).unwrap();
        assert_eq!(calib, again);
    }

    #[test]
    fn synchronize_pairs_by_frame_id() {
        let clouds: Vec<PointCloud> = (0..3)
            .map(|i| PointCloud {
                frame_id: i,
                ..Default::default()
            })
            .collect();
        let mut dets = BTreeMap::new();
        let d = Detection2D {
            class_label: ObjectClass::Car,
            score: 0.9,
            bbox: Box2D::new(0.0, 0.0, 1.0, 1.0),
        };
        dets.insert(1, vec![d]);
        dets.insert(9, vec![d]);
        let calib = Calibration::pinhole(500.0, 500.0, 320.0, 240.0, (640, 480));
        let bundles = synchronize(clouds, &dets, &calib);
        assert_eq!(bundles.len(), 3);
        assert!(bundles[0].detections.is_empty());
        assert_eq!(bundles[1].detections, vec![d]);
        assert!(bundles[2].detections.is_empty());
        assert!(synchronize(vec![], &dets, &calib).is_empty());
    }

    proptest! {
        #[test]
        fn decode_encode_is_byte_identical(vals in proptest::collection::vec((-100f32..100.0, -100f32..100.0, -5f32..5.0, 0f32..=1.0), 0..64)) {
            let bytes: Vec<u8> = vals.iter().flat_map(|&(x, y, z, i)| record([x, y, z, i])).collect();
            let (cloud, _) = decode_cloud(&bytes, 0, 0.0).unwrap();
            prop_assert_eq!(encode_cloud(&cloud), bytes);
        }

        #[test]
        fn emitted_detections_clear_threshold(rows in proptest::collection::vec((0u64..5, 0usize..3, 0f64..=1.0), 0..50), threshold in 0f64..=1.0) {
            let text: String = rows.iter().map(|&(f, c, s)| format!("{f},{},{s},0,0,10,10\n", ObjectClass::ALL[c])).collect();
            let o = DetectionReadOptions { score_threshold: threshold, has_header: false };
            let set = parse_detections(&text, Path::new("p"), &o).unwrap();
            prop_assert!(set.by_frame.values().flatten().all(|d| d.score >= threshold));
            prop_assert_eq!(set.total() + set.dropped_low_score, rows.len());
        }

        #[test]
        fn synchronize_preserves_cloud_count(n in 0u64..20, det_frames in proptest::collection::btree_set(0u64..30, 0..10)) {
            let clouds: Vec<PointCloud> = (0..n).map(|i| PointCloud { frame_id: i, ..Default::default() }).collect();
            let dets: BTreeMap<u64, Vec<Detection2D>> = det_frames.into_iter().map(|f| (f, vec![])).collect();
            let calib = Calibration::pinhole(1.0, 1.0, 0.0, 0.0, (10, 10));
            prop_assert_eq!(synchronize(clouds, &dets, &calib).len(), n as usize);
        }
    }
}
