//! Euclidean clustering of a sweep on its ground-plane projection and the
//! bounding-box volumetric filter.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ingest::PointCloud;

/// Axis-aligned 3D box in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb3 {
    /// `(w, d, h)`: extents along x, y and z.
    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vector3::new(a.x, a.y, a.z),
            Vector3::new(b.x, a.y, a.z),
            Vector3::new(a.x, b.y, a.z),
            Vector3::new(b.x, b.y, a.z),
            Vector3::new(a.x, a.y, b.z),
            Vector3::new(b.x, a.y, b.z),
            Vector3::new(a.x, b.y, b.z),
            Vector3::new(b.x, b.y, b.z),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Unique within the frame.
    pub id: usize,
    /// Sorted, duplicate-free indices into the parent cloud.
    pub point_indices: Vec<usize>,
    pub bbox: Aabb3,
    pub centroid: Vector3<f64>,
}

impl Cluster {
    /// Builds a cluster from member indices. Returns `None` for an empty set.
    pub fn from_indices(
        id: usize,
        mut point_indices: Vec<usize>,
        cloud: &PointCloud,
    ) -> Option<Self> {
        point_indices.sort_unstable();
        point_indices.dedup();
        let first = cloud.points[*point_indices.first()?].position();
        let mut bbox = Aabb3 {
            min: first,
            max: first,
        };
        let mut sum = Vector3::zeros();
        for &i in &point_indices {
            let p = cloud.points[i].position();
            bbox.min = bbox.min.inf(&p);
            bbox.max = bbox.max.sup(&p);
            sum += p;
        }
        let centroid = sum / point_indices.len() as f64;
        Some(Self {
            id,
            point_indices,
            bbox,
            centroid,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Connection distance on the ground plane, meters.
    pub distance_d: f64,
    /// Points with `z` below this height are dropped before clustering.
    pub ground_z: Option<f64>,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            distance_d: 0.5,
            ground_z: None,
        }
    }
}

/// Uniform grid over the xy-plane with cell size equal to the query radius,
/// so every neighbour within the radius lies in the 3x3 block around a cell.
struct PlanarGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl PlanarGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
        }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.cell).floor() as i64,
            (y / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, idx: usize, x: f64, y: f64) {
        let k = self.key(x, y);
        self.cells.entry(k).or_default().push(idx);
    }

    fn neighbourhood(&self, x: f64, y: f64) -> impl Iterator<Item = usize> + '_ {
        let (kx, ky) = self.key(x, y);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (kx + dx, ky + dy)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
    }
}

/// Connected components of the cloud where two points are adjacent when
/// their xy-distance is strictly below `params.distance_d`.
///
/// Clusters are numbered by their lowest member index.
pub fn euclidean_cluster(cloud: &PointCloud, params: &SegmentationParams) -> Vec<Cluster> {
    let d = params.distance_d;
    assert!(d > 0.0, "cluster distance must be positive");
    let d2 = d * d;
    let xy = |i: usize| (cloud.points[i].x as f64, cloud.points[i].y as f64);

    let active: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            params
                .ground_z
                .is_none_or(|g| cloud.points[i].z as f64 >= g)
        })
        .collect();

    let mut grid = PlanarGrid::new(d);
    for &i in &active {
        let (x, y) = xy(i);
        grid.insert(i, x, y);
    }

    let mut visited = vec![false; cloud.len()];
    let mut clusters = Vec::new();
    let mut queue = Vec::new();
    for &seed in &active {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(i);
            let (x, y) = xy(i);
            for j in grid.neighbourhood(x, y) {
                if visited[j] {
                    continue;
                }
                let (u, v) = xy(j);
                if (u - x).powi(2) + (v - y).powi(2) < d2 {
                    visited[j] = true;
                    queue.push(j);
                }
            }
        }
        if let Some(c) = Cluster::from_indices(clusters.len(), members, cloud) {
            clusters.push(c);
        }
    }
    clusters
}

/// Closed interval in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumetricFilter {
    pub w_range: Range,
    pub d_range: Range,
    pub h_range: Range,
}

impl Default for VolumetricFilter {
    fn default() -> Self {
        Self {
            w_range: Range::new(0.1, 5.0),
            d_range: Range::new(0.1, 5.0),
            h_range: Range::new(0.3, 5.0),
        }
    }
}

impl VolumetricFilter {
    pub fn accepts(&self, cluster: &Cluster) -> bool {
        let e = cluster.bbox.extents();
        self.w_range.contains(e.x) && self.d_range.contains(e.y) && self.h_range.contains(e.z)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("w_range", self.w_range),
            ("d_range", self.d_range),
            ("h_range", self.h_range),
        ] {
            if !(r.min <= r.max) {
                return Err(format!(
                    "filter.{name}: min {} exceeds max {}",
                    r.min, r.max
                ));
            }
        }
        Ok(())
    }
}

/// Keeps clusters whose box extents fall inside all three ranges, in order.
pub fn volumetric_filter(clusters: Vec<Cluster>, filter: &VolumetricFilter) -> Vec<Cluster> {
    clusters.into_iter().filter(|c| filter.accepts(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Point;

    fn cloud(pts: &[(f32, f32, f32)]) -> PointCloud {
        PointCloud {
            points: pts
                .iter()
                .map(|&(x, y, z)| Point::new(x, y, z, 0.5))
                .collect(),
            ..Default::default()
        }
    }

    fn params(d: f64) -> SegmentationParams {
        SegmentationParams {
            distance_d: d,
            ground_z: None,
        }
    }

    #[test]
    fn close_points_merge() {
        let c = euclidean_cluster(&cloud(&[(0.0, 0.0, 0.0), (0.1, 0.0, 0.0)]), &params(0.3));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].point_indices, vec![0, 1]);
    }

    #[test]
    fn far_points_stay_apart() {
        let c = euclidean_cluster(&cloud(&[(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)]), &params(0.3));
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn clustering_ignores_height_but_box_keeps_it() {
        let c = euclidean_cluster(&cloud(&[(0.0, 0.0, 0.0), (0.1, 0.0, 3.0)]), &params(0.3));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].bbox.extents().z, 3.0);
        assert!((c[0].centroid.z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn distance_equal_to_d_does_not_connect() {
        let c = euclidean_cluster(&cloud(&[(0.0, 0.0, 0.0), (0.5, 0.0, 0.0)]), &params(0.5));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn chains_connect_transitively() {
        let pts: Vec<(f32, f32, f32)> = (0..10).map(|i| (i as f32 * 0.4, 0.0, 0.0)).collect();
        let c = euclidean_cluster(&cloud(&pts), &params(0.5));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 10);
    }

    #[test]
    fn empty_cloud_gives_no_clusters() {
        assert!(euclidean_cluster(&PointCloud::default(), &params(0.5)).is_empty());
    }

    #[test]
    fn ground_band_drops_low_points() {
        let pts = [(0.0, 0.0, -1.8), (0.2, 0.0, -1.8), (3.0, 0.0, 0.0)];
        let p = SegmentationParams {
            distance_d: 0.5,
            ground_z: Some(-1.5),
        };
        let c = euclidean_cluster(&cloud(&pts), &p);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].point_indices, vec![2]);
    }

    fn boxed(w: f64, d: f64, h: f64) -> Cluster {
        Cluster {
            id: 0,
            point_indices: vec![0],
            bbox: Aabb3 {
                min: Vector3::zeros(),
                max: Vector3::new(w, d, h),
            },
            centroid: Vector3::zeros(),
        }
    }

    #[test]
    fn volumetric_defaults() {
        let f = VolumetricFilter::default();
        assert!(f.accepts(&boxed(1.8, 4.2, 1.5)));
        assert!(!f.accepts(&boxed(1.8, 4.2, 0.2)));
        assert!(!f.accepts(&boxed(6.0, 4.2, 1.5)));
        // Degenerate single-point clusters never pass.
        assert!(!f.accepts(&boxed(0.0, 0.0, 0.0)));
    }

    #[test]
    fn volumetric_filter_preserves_order() {
        let mut a = boxed(1.0, 1.0, 1.0);
        a.id = 3;
        let mut b = boxed(9.0, 1.0, 1.0);
        b.id = 4;
        let mut c = boxed(0.5, 0.5, 1.0);
        c.id = 5;
        let kept = volumetric_filter(vec![a, b, c], &VolumetricFilter::default());
        assert_eq!(kept.iter().map(|c| c.id).collect::<Vec<_>>(), vec![3, 5]);
    }

    #[test]
    fn inverted_range_is_invalid() {
        let f = VolumetricFilter {
            w_range: Range::new(2.0, 1.0),
            ..Default::default()
        };
        assert!(f.validate().is_err());
    }
}
