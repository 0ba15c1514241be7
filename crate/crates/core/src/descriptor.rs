//! Cluster descriptor: a fixed 61-dimensional feature vector.
//!
//! Layout (offsets into the vector):
//!
//! | range   | feature                                                     |
//! |---------|-------------------------------------------------------------|
//! | 0       | point count                                                 |
//! | 1       | minimum range of a member point from the sensor             |
//! | 2..8    | covariance about the centroid, `xx xy xz yy yz zz`          |
//! | 8..14   | inertia tensor about the centroid / N, same packing         |
//! | 14..34  | 10 z-slices, `(x-extent, y-extent)` per slice               |
//! | 34..61  | 25-bin intensity histogram over [0,1], then mean and std    |

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{ObjectClass, PointCloud};
use crate::segmentation::Cluster;

pub const FEATURE_DIM: usize = 61;
pub const SLICE_COUNT: usize = 10;
pub const INTENSITY_BINS: usize = 25;

pub const OFFSET_COUNT: usize = 0;
pub const OFFSET_MIN_RANGE: usize = 1;
pub const OFFSET_COVARIANCE: usize = 2;
pub const OFFSET_INERTIA: usize = 8;
pub const OFFSET_SLICES: usize = 14;
pub const OFFSET_INTENSITY: usize = 34;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Contract(format!(
                "feature vector needs {FEATURE_DIM} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "feature vector has non-finite values".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn covariance(&self) -> &[f64] {
        &self.0[OFFSET_COVARIANCE..OFFSET_INERTIA]
    }

    pub fn inertia(&self) -> &[f64] {
        &self.0[OFFSET_INERTIA..OFFSET_SLICES]
    }

    pub fn slices(&self) -> &[f64] {
        &self.0[OFFSET_SLICES..OFFSET_INTENSITY]
    }

    pub fn intensity_histogram(&self) -> &[f64] {
        &self.0[OFFSET_INTENSITY..OFFSET_INTENSITY + INTENSITY_BINS]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn upper_triangle(m: &Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 2)],
    ]
}

/// Computes the descriptor of `cluster`, whose indices point into `cloud`.
pub fn extract(cluster: &Cluster, cloud: &PointCloud) -> Result<FeatureVector> {
    if cluster.point_indices.is_empty() {
        return Err(Error::Contract("cannot describe an empty cluster".into()));
    }
    let points: Vec<_> = cluster
        .point_indices
        .iter()
        .map(|&i| cloud.points[i])
        .collect();
    let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position()).collect();
    let n = positions.len() as f64;

    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.push(n);
    f.push(
        positions
            .iter()
            .map(|p| p.norm())
            .fold(f64::INFINITY, f64::min),
    );

    let centroid = positions.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut inertia = Matrix3::zeros();
    for p in &positions {
        let q = p - centroid;
        cov += q * q.transpose();
        let r2 = q.norm_squared();
        inertia += Matrix3::identity() * r2 - q * q.transpose();
    }
    f.extend(upper_triangle(&(cov / n)));
    f.extend(upper_triangle(&(inertia / n)));

    f.extend(slice_extents(&positions));

    let mut hist = [0.0; INTENSITY_BINS];
    let mut sum = 0.0;
    for p in &points {
        let v = (p.intensity as f64).clamp(0.0, 1.0);
        let bin = ((v * INTENSITY_BINS as f64) as usize).min(INTENSITY_BINS - 1);
        hist[bin] += 1.0;
        sum += v;
    }
    let mean = sum / n;
    let var = points
        .iter()
        .map(|p| ((p.intensity as f64).clamp(0.0, 1.0) - mean).powi(2))
        .sum::<f64>()
        / n;
    f.extend(hist.iter().map(|h| h / n));
    f.push(mean);
    f.push(var.sqrt());

    FeatureVector::new(f)
}

/// Per z-slice `(x-extent, y-extent)`. Slices are half-open except the top
/// one; a flat cluster lands entirely in the first slice.
fn slice_extents(positions: &[Vector3<f64>]) -> Vec<f64> {
    let z_min = positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_max = positions
        .iter()
        .map(|p| p.z)
        .fold(f64::NEG_INFINITY, f64::max);
    let height = z_max - z_min;

    let mut lo = [Vector3::repeat(f64::INFINITY); SLICE_COUNT];
    let mut hi = [Vector3::repeat(f64::NEG_INFINITY); SLICE_COUNT];
    for p in positions {
        let k = if height > 0.0 {
            (((p.z - z_min) / height * SLICE_COUNT as f64) as usize).min(SLICE_COUNT - 1)
        } else {
            0
        };
        lo[k] = lo[k].inf(p);
        hi[k] = hi[k].sup(p);
    }
    let mut out = Vec::with_capacity(2 * SLICE_COUNT);
    for k in 0..SLICE_COUNT {
        if lo[k].x.is_finite() {
            out.push(hi[k].x - lo[k].x);
            out.push(hi[k].y - lo[k].y);
        } else {
            out.extend([0.0, 0.0]);
        }
    }
    out
}

/// A descriptor with its class, one row of a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledFeatures {
    pub frame_id: u64,
    pub label: ObjectClass,
    pub features: FeatureVector,
}

/// Writes `frame_id,label,f0..f60` rows under a header. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_feature_csv(path: &Path, rows: &[LabelledFeatures]) -> Result<()> {
    let mut out = String::from("frame_id,label");
    for i in 0..FEATURE_DIM {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.frame_id, r.label).unwrap();
        for v in r.features.as_slice() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<LabelledFeatures>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != FEATURE_DIM + 2 {
            return Err(err(format!(
                "expected {} fields, found {}",
                FEATURE_DIM + 2,
                fields.len()
            )));
        }
        let frame_id = fields[0]
            .parse()
            .map_err(|_| err(format!("bad frame id '{}'", fields[0])))?;
        let label = fields[1].parse().map_err(err)?;
        let values = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("bad number '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureVector::new(values).map_err(|e| err(e.to_string()))?;
        rows.push(LabelledFeatures {
            frame_id,
            label,
            features,
        });
    }
    Ok(rows)
}
