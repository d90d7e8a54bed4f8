//! Synthetic LiDAR-camera scenes with known ground truth.
//!
//! A scene is a set of objects moving along scripted paths relative to a
//! moving ego vehicle. Each frame is rendered by casting LiDAR rays
//! (uniform in solid angle, so point counts fall off as 1/r²) against the
//! objects and a flat ground, then the camera mapping is perturbed by the
//! error model. Ground truth is never touched by the perturbation.

mod fixtures;
pub mod geometry;
mod inject;
mod render;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::{BoundingBox, ClassLabel};
use crate::calib::{CalibError, CalibrationFile, CalibrationPair, LidarPoint};

pub use fixtures::{
    benchmark_clusters, benchmark_registry, overtaking_fixture, shape_trial, LabeledCluster, ShapeTrial, TARGET_ID,
};
pub use inject::inject_mapping_errors;
pub use render::render_frame;

/// Point label for ground returns.
pub const GROUND_LABEL: i64 = -1;
/// Point label for spurious returns.
pub const CLUTTER_LABEL: i64 = -2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Calib(#[from] CalibError),
}

/// Planar path in the world frame; `t` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static { x: f64, y: f64 },
    Linear { x0: f64, y0: f64, vx: f64, vy: f64 },
    /// Coefficients in ascending powers of `t`.
    Polynomial { x: Vec<f64>, y: Vec<f64> },
    /// `(t, x, y)` knots, linearly interpolated and held at the ends.
    Waypoints { points: Vec<[f64; 3]> },
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::Static { x: 0.0, y: 0.0 }
    }
}

impl Trajectory {
    pub fn position(&self, t: f64) -> (f64, f64) {
        match self {
            Trajectory::Static { x, y } => (*x, *y),
            Trajectory::Linear { x0, y0, vx, vy } => (x0 + vx * t, y0 + vy * t),
            Trajectory::Polynomial { x, y } => {
                let eval = |c: &[f64]| c.iter().rev().fold(0.0, |acc, k| acc * t + k);
                (eval(x), eval(y))
            }
            Trajectory::Waypoints { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t <= first[0] {
                    return (first[1], first[2]);
                }
                if t >= last[0] {
                    return (last[1], last[2]);
                }
                let k = points.partition_point(|p| p[0] <= t);
                let (a, b) = (points[k - 1], points[k]);
                let s = (t - a[0]) / (b[0] - a[0]);
                (a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2]))
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        match self {
            Trajectory::Waypoints { points } => {
                if points.is_empty() || points.windows(2).any(|w| w[0][0] >= w[1][0]) {
                    return Err(SynthError::InvalidSpec("waypoints need strictly increasing times".into()));
                }
            }
            Trajectory::Polynomial { x, y } if x.is_empty() || y.is_empty() => {
                return Err(SynthError::InvalidSpec("polynomial trajectory needs coefficients".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: u64,
    pub class: ClassLabel,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub yaw_deg: f64,
    pub trajectory: Trajectory,
    /// Whether the detector reports this object.
    #[serde(default = "yes")]
    pub detect: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    /// Sensor height above the ground (m).
    pub height_m: f64,
    /// Returns per steradian.
    pub density_per_sr: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Rays are cast over azimuths in `[-a, a]`.
    pub azimuth_half_deg: f64,
    pub max_range_m: f64,
    pub range_noise_sigma: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            height_m: 1.8,
            density_per_sr: 36_000.0,
            elevation_min_deg: -16.6,
            elevation_max_deg: 16.6,
            azimuth_half_deg: 90.0,
            max_range_m: 100.0,
            range_noise_sigma: 0.01,
        }
    }
}

/// Camera mapping errors. Every point of a frame is displaced by
/// `constant + frame draw + point draw`, all uniform and zero-mean apart from
/// the constant; detection boxes are jittered and dropped independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModel {
    pub constant_shift_px: [f64; 2],
    /// Half-widths of the per-frame shift (horizontal, vertical).
    pub frame_shift_px: [f64; 2],
    /// Half-widths of the per-point shift.
    pub point_jitter_px: [f64; 2],
    /// Half-width of the box center offset.
    pub box_jitter_px: f64,
    /// Half-width of the relative box size change.
    pub box_scale_jitter: f64,
    pub dropout: f64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self {
            constant_shift_px: [0.0, 0.0],
            frame_shift_px: [20.0, 4.0],
            point_jitter_px: [2.0, 2.0],
            box_jitter_px: 2.0,
            box_scale_jitter: 0.05,
            dropout: 0.05,
        }
    }
}

impl ErrorModel {
    pub fn none() -> Self {
        Self {
            constant_shift_px: [0.0, 0.0],
            frame_shift_px: [0.0, 0.0],
            point_jitter_px: [0.0, 0.0],
            box_jitter_px: 0.0,
            box_scale_jitter: 0.0,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let widths = [
            self.frame_shift_px[0],
            self.frame_shift_px[1],
            self.point_jitter_px[0],
            self.point_jitter_px[1],
            self.box_jitter_px,
            self.box_scale_jitter,
        ];
        if widths.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.constant_shift_px.iter().any(|c| !c.is_finite()) {
            return Err(SynthError::InvalidSpec("error widths must be finite and non-negative".into()));
        }
        if self.box_scale_jitter >= 1.0 {
            return Err(SynthError::InvalidSpec("box_scale_jitter must be below 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(SynthError::InvalidSpec("dropout must be a probability".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration_s: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default)]
    pub ego: Trajectory,
    #[serde(default)]
    pub lidar: LidarModel,
    /// Defaults to a forward 1280x720 camera co-located with the LiDAR.
    #[serde(default)]
    pub calibration: Option<CalibrationFile>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default = "default_ground_noise")]
    pub ground_noise_sigma: f64,
    /// Spurious returns per frame.
    #[serde(default)]
    pub background_clutter: usize,
    #[serde(default)]
    pub error_model: ErrorModel,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_frame_rate() -> f64 {
    10.0
}

fn default_ground_noise() -> f64 {
    0.02
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(SynthError::InvalidSpec("frame_rate must be positive".into()));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(SynthError::InvalidSpec("duration_s must be non-negative".into()));
        }
        if !(self.ground_noise_sigma >= 0.0) {
            return Err(SynthError::InvalidSpec("ground_noise_sigma must be non-negative".into()));
        }
        let l = &self.lidar;
        if !(l.height_m > 0.0 && l.density_per_sr > 0.0 && l.max_range_m > 0.0 && l.range_noise_sigma >= 0.0) {
            return Err(SynthError::InvalidSpec("lidar parameters must be positive".into()));
        }
        if !(l.elevation_min_deg < l.elevation_max_deg && l.elevation_min_deg >= -90.0 && l.elevation_max_deg <= 90.0) {
            return Err(SynthError::InvalidSpec("invalid lidar elevation range".into()));
        }
        if !(l.azimuth_half_deg > 0.0 && l.azimuth_half_deg <= 180.0) {
            return Err(SynthError::InvalidSpec("azimuth_half_deg must be in (0, 180]".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !(o.length > 0.0 && o.width > 0.0 && o.height > 0.0) {
                return Err(SynthError::InvalidSpec(format!("object {} has a non-positive size", o.object_id)));
            }
            if !ids.insert(o.object_id) {
                return Err(SynthError::InvalidSpec(format!("duplicate object id {}", o.object_id)));
            }
            o.trajectory.validate()?;
        }
        self.ego.validate()?;
        self.error_model.validate()?;
        self.calibration()?;
        Ok(())
    }

    pub fn calibration(&self) -> Result<CalibrationPair, SynthError> {
        match &self.calibration {
            Some(file) => Ok(CalibrationPair::try_from(file.clone())?),
            None => Ok(CalibrationPair::default_forward()),
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate + 1e-9).floor() as usize
    }
}

/// An object's planar position relative to the ego sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub object_id: u64,
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSkeleton {
    pub frame_id: u64,
    pub t: f64,
    pub poses: Vec<ObjectPose>,
}

/// Per-frame object poses relative to the ego vehicle.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<FrameSkeleton>, SynthError> {
    spec.validate()?;
    Ok((0..spec.frame_count())
        .map(|k| {
            let t = k as f64 / spec.frame_rate;
            let (ex, ey) = spec.ego.position(t);
            let poses = spec
                .objects
                .iter()
                .map(|o| {
                    let (x, y) = o.trajectory.position(t);
                    ObjectPose {
                        object_id: o.object_id,
                        x: x - ex,
                        y: y - ey,
                        yaw_deg: o.yaw_deg,
                    }
                })
                .collect();
            FrameSkeleton { frame_id: k as u64, t, poses }
        })
        .collect())
}

/// Ground-truth state of one object in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub object_id: u64,
    pub class: ClassLabel,
    /// Center position in the LiDAR frame (m).
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub range_m: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub frame_id: u64,
    pub t: f64,
    pub cloud: Vec<LidarPoint>,
    /// Object id, [`GROUND_LABEL`] or [`CLUTTER_LABEL`] per point.
    pub labels: Vec<i64>,
    pub detections: Vec<BoundingBox>,
    pub gt_objects: Vec<GtObject>,
    /// Pixel displacement `(du, dv)` applied to each point's projection.
    pub applied_shifts: Vec<[f64; 2]>,
}

impl SimulatedFrame {
    pub fn gt_object(&self, object_id: u64) -> Option<&GtObject> {
        self.gt_objects.iter().find(|g| g.object_id == object_id)
    }

    /// Points of `object_id` whose ideal projection lands in the image.
    pub fn true_members(&self, object_id: u64, calib: &CalibrationPair) -> Vec<usize> {
        true_members(&self.cloud, &self.labels, object_id, calib)
    }
}

pub fn true_members(cloud: &[LidarPoint], labels: &[i64], object_id: u64, calib: &CalibrationPair) -> Vec<usize> {
    let id = object_id as i64;
    (0..cloud.len())
        .filter(|&i| labels[i] == id)
        .filter(|&i| calib.project_point(&cloud[i]).is_some_and(|p| calib.intrinsics.contains(p.u, p.v)))
        .collect()
}

/// Independent random stream for `(seed, frame, purpose)`.
pub(crate) fn stream_rng(seed: u64, frame_id: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id.wrapping_mul(16).wrapping_add(purpose));
    rng
}

/// Generates, renders and perturbs every frame of a scene.
pub fn simulate(spec: &SceneSpec) -> Result<Vec<SimulatedFrame>, SynthError> {
    let skeletons = generate_scene(spec)?;
    let calib = spec.calibration()?;
    Ok(skeletons
        .par_iter()
        .map(|s| {
            let frame = render_frame(s, spec, &calib);
            inject_mapping_errors(frame, &spec.error_model, spec.rng_seed, &calib)
        })
        .collect())
}
