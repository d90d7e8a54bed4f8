use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{class_template, direction, AngularBox, PlacedShape};
use super::{stream_rng, FrameSkeleton, GtObject, SceneSpec, SimulatedFrame, CLUTTER_LABEL, GROUND_LABEL};
use crate::aoi::BoundingBox;
use crate::calib::{CalibrationPair, LidarPoint};
use crate::localize::{azimuth_of, range_of};

const RENDER_STREAM: u64 = 0;

pub(crate) fn place_objects(skel: &FrameSkeleton, spec: &SceneSpec) -> Vec<PlacedShape> {
    spec.objects
        .iter()
        .zip(&skel.poses)
        .map(|(o, pose)| {
            PlacedShape::new(
                o.object_id as i64,
                class_template(o.class, o.length, o.width, o.height),
                Vector3::new(pose.x, pose.y, -spec.lidar.height_m),
                pose.yaw_deg,
            )
        })
        .collect()
}

pub(crate) struct RayHit {
    pub point: Vector3<f64>,
    pub label: i64,
}

/// Nearest object hit, else the ground if the ray descends within range.
pub(crate) fn cast(
    d: &Vector3<f64>,
    az: f64,
    el: f64,
    shapes: &[(PlacedShape, Option<AngularBox>)],
    ground_height: Option<f64>,
    max_range: f64,
) -> Option<RayHit> {
    let origin = Vector3::zeros();
    let mut best: Option<(f64, i64)> = None;
    for (shape, bounds) in shapes {
        if bounds.is_some_and(|b| !b.contains(az, el)) {
            continue;
        }
        if let Some(t) = shape.intersect(&origin, d) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, shape.label));
            }
        }
    }
    if let Some(h) = ground_height {
        if d.z < 0.0 {
            let t = h / -d.z;
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, GROUND_LABEL));
            }
        }
    }
    let (t, label) = best?;
    let point = d * t;
    (point.x.hypot(point.y) <= max_range).then_some(RayHit { point, label })
}

fn detection_box(shape: &PlacedShape, calib: &CalibrationPair) -> Option<(f64, f64, f64, f64)> {
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in shape.surface_samples() {
        if let Some(p) = calib.project_point(&LidarPoint::new(s.x, s.y, s.z)) {
            u0 = u0.min(p.u);
            v0 = v0.min(p.v);
            u1 = u1.max(p.u);
            v1 = v1.max(p.v);
        }
    }
    let (w, h) = (calib.intrinsics.width as f64, calib.intrinsics.height as f64);
    let (u0, v0, u1, v1) = (u0.max(0.0), v0.max(0.0), u1.min(w), v1.min(h));
    (u1 - u0 >= 1.0 && v1 - v0 >= 1.0).then_some((u0, v0, u1, v1))
}

/// Renders the LiDAR cloud, ideal detection boxes and ground truth for one
/// frame. No mapping error is applied here.
pub fn render_frame(skel: &FrameSkeleton, spec: &SceneSpec, calib: &CalibrationPair) -> SimulatedFrame {
    let mut rng = stream_rng(spec.rng_seed, skel.frame_id, RENDER_STREAM);
    let lidar = &spec.lidar;
    let shapes: Vec<(PlacedShape, Option<AngularBox>)> = place_objects(skel, spec)
        .into_iter()
        .map(|s| {
            let b = s.angular_bounds();
            (s, b)
        })
        .collect();

    let az_half = lidar.azimuth_half_deg.to_radians();
    let (s_lo, s_hi) = (lidar.elevation_min_deg.to_radians().sin(), lidar.elevation_max_deg.to_radians().sin());
    let solid_angle = 2.0 * az_half * (s_hi - s_lo);
    let rays = (lidar.density_per_sr * solid_angle).round() as usize;
    let ground_noise = Normal::new(0.0, spec.ground_noise_sigma).expect("validated sigma");
    let range_noise = Normal::new(0.0, lidar.range_noise_sigma).expect("validated sigma");

    let mut cloud = Vec::with_capacity(rays / 2);
    let mut labels = Vec::with_capacity(rays / 2);
    for _ in 0..rays {
        let az = rng.random_range(-az_half..=az_half);
        let el = rng.random_range(s_lo..=s_hi).asin();
        let d = direction(az, el);
        let Some(hit) = cast(&d, az, el, &shapes, Some(lidar.height_m), lidar.max_range_m) else {
            continue;
        };
        let (p, intensity) = if hit.label == GROUND_LABEL {
            let mut p = hit.point;
            p.z += ground_noise.sample(&mut rng);
            (p, rng.random_range(0.05..0.25))
        } else {
            (hit.point + d * range_noise.sample(&mut rng), rng.random_range(0.3..0.9))
        };
        cloud.push(LidarPoint {
            x: p.x,
            y: p.y,
            z: p.z,
            intensity: Some(intensity),
        });
        labels.push(hit.label);
    }

    for _ in 0..spec.background_clutter {
        let az = rng.random_range(-az_half..=az_half);
        let el = rng.random_range(s_lo..=s_hi).asin();
        let d = direction(az, el);
        let ground_t = if d.z < 0.0 { lidar.height_m / -d.z } else { f64::INFINITY };
        // Uniform in volume: the range density grows with r².
        let (r_lo, r_hi) = (2.0f64, 60.0f64.min(ground_t).max(2.0 + 1e-6));
        let r = (r_lo.powi(3) + rng.random::<f64>() * (r_hi.powi(3) - r_lo.powi(3))).cbrt();
        let p = d * r;
        cloud.push(LidarPoint {
            x: p.x,
            y: p.y,
            z: p.z,
            intensity: Some(rng.random_range(0.0..1.0)),
        });
        labels.push(CLUTTER_LABEL);
    }

    let mut detections = Vec::new();
    let mut gt_objects = Vec::new();
    for ((o, pose), (shape, _)) in spec.objects.iter().zip(&skel.poses).zip(&shapes) {
        let center = LidarPoint::new(pose.x, pose.y, -lidar.height_m + o.height / 2.0);
        gt_objects.push(GtObject {
            object_id: o.object_id,
            class: o.class,
            x: center.x,
            y: center.y,
            z: center.z,
            range_m: range_of(&center),
            azimuth_deg: azimuth_of(&center).unwrap_or(0.0),
        });
        if !o.detect {
            continue;
        }
        if let Some((u0, v0, u1, v1)) = detection_box(shape, calib) {
            detections.push(BoundingBox {
                frame_id: skel.frame_id,
                object_id: o.object_id,
                class_label: o.class,
                u_min: u0,
                v_min: v0,
                u_max: u1,
                v_max: v1,
            });
        }
    }

    let n = cloud.len();
    SimulatedFrame {
        frame_id: skel.frame_id,
        t: skel.t,
        cloud,
        labels,
        detections,
        gt_objects,
        applied_shifts: vec![[0.0, 0.0]; n],
    }
}
