//! Pre-labelling of clusters: project each cluster's 3D box into the image
//! and match the resulting rectangles against camera detections by IoU.

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::ingest::{Calibration, Detection2D, ObjectClass};
use crate::segmentation::Cluster;

/// Image rectangle in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0) * (self.v_max - self.v_min).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreLabel {
    pub class_label: ObjectClass,
    pub score: f64,
    /// Index of the matched detection within the frame.
    pub source_detection: usize,
}

/// Projects a LiDAR-frame point to pixels. Returns `None` when the point is
/// not in front of the camera.
pub fn project_point(p: &Vector3<f64>, calib: &Calibration) -> Option<(f64, f64)> {
    let cam = calib.lidar_to_rect() * Vector4::new(p.x, p.y, p.z, 1.0);
    if cam.z <= 0.0 {
        return None;
    }
    let uvw = calib.projection * cam;
    if uvw.z <= 0.0 {
        return None;
    }
    Some((uvw.x / uvw.z, uvw.y / uvw.z))
}

/// Image-space hull of a cluster's 3D box, clipped to the image.
///
/// Corners behind the camera are discarded. Needs at least two visible
/// corners and a positive clipped area.
pub fn project_bbox(cluster: &Cluster, calib: &Calibration) -> Option<Box2D> {
    project_hull(&cluster.bbox.corners(), calib)
}

/// Clipped image-space hull of arbitrary LiDAR-frame points, with the same
/// visibility rules as [`project_bbox`].
pub fn project_hull(points: &[Vector3<f64>], calib: &Calibration) -> Option<Box2D> {
    let pixels: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|c| project_point(c, calib))
        .collect();
    if pixels.len() < 2 {
        return None;
    }
    let (w, h) = (calib.image_size.0 as f64, calib.image_size.1 as f64);
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
        pixels.iter().map(pick).fold(init, f)
    };
    let hull = Box2D {
        u_min: fold(f64::min, f64::INFINITY, |p| p.0).max(0.0),
        v_min: fold(f64::min, f64::INFINITY, |p| p.1).max(0.0),
        u_max: fold(f64::max, f64::NEG_INFINITY, |p| p.0).min(w),
        v_max: fold(f64::max, f64::NEG_INFINITY, |p| p.1).min(h),
    };
    (hull.u_max > hull.u_min && hull.v_max > hull.v_min).then_some(hull)
}

pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.u_max.min(b.u_max) - a.u_min.max(b.u_min)).max(0.0);
    let ih = (a.v_max.min(b.v_max) - a.v_min.max(b.v_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Minimum IoU for a cluster/detection pair, per detection class. Inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchThresholds {
    pub iou_car: f64,
    pub iou_ped: f64,
    pub iou_cyc: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            iou_car: 0.7,
            iou_ped: 0.5,
            iou_cyc: 0.5,
        }
    }
}

impl MatchThresholds {
    pub fn for_class(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.iou_car,
            ObjectClass::Pedestrian => self.iou_ped,
            ObjectClass::Cyclist => self.iou_cyc,
        }
    }
}

/// Greedy one-to-one assignment in descending IoU order. Exact ties go to the
/// lower cluster id, then the lower detection index.
///
/// `boxes` is index-aligned with `clusters`; the result is too.
pub fn match_detections(
    clusters: &[Cluster],
    boxes: &[Option<Box2D>],
    detections: &[Detection2D],
    thresholds: &MatchThresholds,
) -> Vec<Option<PreLabel>> {
    assert_eq!(
        clusters.len(),
        boxes.len(),
        "clusters and boxes must be index-aligned"
    );
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, bx) in boxes.iter().enumerate() {
        let Some(bx) = bx else { continue };
        for (di, det) in detections.iter().enumerate() {
            let score = iou(bx, &det.bbox);
            if score > 0.0 && score >= thresholds.for_class(det.class_label) {
                pairs.push((score, ci, di));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(clusters[a.1].id.cmp(&clusters[b.1].id))
            .then(a.2.cmp(&b.2))
    });

    let mut labels = vec![None; clusters.len()];
    let mut detection_used = vec![false; detections.len()];
    for (_, ci, di) in pairs {
        if labels[ci].is_some() || detection_used[di] {
            continue;
        }
        detection_used[di] = true;
        labels[ci] = Some(PreLabel {
            class_label: detections[di].class_label,
            score: detections[di].score,
            source_detection: di,
        });
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::Aabb3;

    fn cube(center: Vector3<f64>, half: f64) -> Cluster {
        Cluster {
            id: 0,
            point_indices: vec![0],
            bbox: Aabb3 {
                min: center.add_scalar(-half),
                max: center.add_scalar(half),
            },
            centroid: center,
        }
    }

    fn camera() -> Calibration {
        Calibration::pinhole(500.0, 500.0, 320.0, 240.0, (640, 480))
    }

    #[test]
    fn cube_on_axis_projects_around_principal_point() {
        let b = project_bbox(&cube(Vector3::new(0.0, 0.0, 10.0), 0.5), &camera()).unwrap();
        let (u, v) = b.center();
        assert!(
            (u - 320.0).abs() < 1e-9 && (v - 240.0).abs() < 1e-9,
            "{b:?}"
        );
        // Near face at depth 9.5 bounds the hull: 500 * 0.5 / 9.5.
        assert!((b.u_max - 320.0 - 250.0 / 9.5).abs() < 1e-9);
    }

    #[test]
    fn cube_behind_camera_is_invisible() {
        assert!(project_bbox(&cube(Vector3::new(0.0, 0.0, -10.0), 0.5), &camera()).is_none());
    }

    #[test]
    fn cube_outside_image_is_invisible() {
        assert!(project_bbox(&cube(Vector3::new(100.0, 0.0, 10.0), 0.5), &camera()).is_none());
    }

    #[test]
    fn hull_is_clipped_to_image() {
        let b = project_bbox(&cube(Vector3::new(0.0, 0.0, 2.0), 1.5), &camera()).unwrap();
        assert_eq!(
            (b.u_min, b.v_min, b.u_max, b.v_max),
            (0.0, 0.0, 640.0, 480.0)
        );
    }

    #[test]
    fn iou_fixtures() {
        let a = Box2D::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Box2D::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &Box2D::new(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
        let degenerate = Box2D::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&degenerate, &degenerate), 0.0);
    }

    fn det(class: ObjectClass, b: Box2D) -> Detection2D {
        Detection2D {
            class_label: class,
            score: 0.8,
            bbox: b,
        }
    }

    fn with_id(id: usize) -> Cluster {
        let mut c = cube(Vector3::zeros(), 1.0);
        c.id = id;
        c
    }

    /// Box whose IoU with `Box2D::new(0, 0, 100, 100)` is exactly `t`: same
    /// height, shifted right so that intersection/union = t.
    fn shifted(t: f64) -> Box2D {
        // inter = 100 (100 - s); union = 100 (100 + s) -> s = 100 (1 - t) / (1 + t)
        let s = 100.0 * (1.0 - t) / (1.0 + t);
        Box2D::new(s, 0.0, 100.0 + s, 100.0)
    }

    #[test]
    fn car_threshold_is_point_seven() {
        let d = det(ObjectClass::Car, Box2D::new(0.0, 0.0, 100.0, 100.0));
        let th = MatchThresholds::default();
        let hit = match_detections(&[with_id(0)], &[Some(shifted(0.72))], &[d], &th);
        assert_eq!(hit[0].unwrap().class_label, ObjectClass::Car);
        let miss = match_detections(&[with_id(0)], &[Some(shifted(0.65))], &[d], &th);
        assert!(miss[0].is_none());
        let ped = det(ObjectClass::Pedestrian, d.bbox);
        let ped_hit = match_detections(&[with_id(0)], &[Some(shifted(0.65))], &[ped], &th);
        assert!(ped_hit[0].is_some());
    }

    #[test]
    fn higher_iou_cluster_wins() {
        let d = det(ObjectClass::Pedestrian, Box2D::new(0.0, 0.0, 100.0, 100.0));
        let labels = match_detections(
            &[with_id(0), with_id(1)],
            &[Some(shifted(0.55)), Some(shifted(0.6))],
            &[d],
            &MatchThresholds::default(),
        );
        assert!(labels[0].is_none());
        assert_eq!(labels[1].unwrap().source_detection, 0);
    }

    #[test]
    fn exact_tie_goes_to_lower_cluster_id() {
        let d = det(ObjectClass::Cyclist, Box2D::new(0.0, 0.0, 100.0, 100.0));
        let b = Some(shifted(0.8));
        let labels = match_detections(
            &[with_id(7), with_id(2)],
            &[b, b],
            &[d],
            &MatchThresholds::default(),
        );
        assert!(labels[0].is_none());
        assert!(labels[1].is_some());
    }

    #[test]
    fn unprojected_clusters_stay_unlabelled() {
        let d = det(ObjectClass::Car, Box2D::new(0.0, 0.0, 100.0, 100.0));
        let labels = match_detections(&[with_id(0)], &[None], &[d], &MatchThresholds::default());
        assert_eq!(labels, vec![None]);
    }
}
