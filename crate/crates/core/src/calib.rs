//! Camera calibration data and LiDAR-to-pixel projection.
//!
//! Frames used throughout the crate:
//!
//! * LiDAR: x forward, y left, z up.
//! * Camera: z forward (optical axis), x right, y down.
//!
//! The extrinsic transform maps LiDAR coordinates into the camera frame and
//! absorbs the axis permutation between the two conventions. Projection is the
//! standard pinhole model with perspective division; lens distortion is not
//! modelled and calibration files carrying nonzero distortion are rejected.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points whose camera-frame depth is at or below this value are not projected.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Tolerance used when checking that a rotation matrix is orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid extrinsic rotation: {0}")]
    InvalidRotation(String),
    #[error("nonzero lens distortion is not supported (got {0:?})")]
    NonzeroDistortion([f64; 5]),
    #[error("calibration file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("calibration file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, ox: f64, oy: f64, width: u32, height: u32) -> Result<Self, CalibError> {
        let intr = Self { fx, fy, ox, oy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(CalibError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.ox >= 0.0 && self.ox < self.width as f64) {
            return Err(CalibError::InvalidIntrinsics(format!(
                "principal point ox={} outside [0, {})",
                self.ox, self.width
            )));
        }
        if !(self.oy >= 0.0 && self.oy < self.height as f64) {
            return Err(CalibError::InvalidIntrinsics(format!(
                "principal point oy={} outside [0, {})",
                self.oy, self.height
            )));
        }
        Ok(())
    }

    /// True when `(u, v)` lies in the half-open image rectangle.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Rigid LiDAR-to-camera transform: `Pc = R * p + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl ExtrinsicTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CalibError> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(CalibError::InvalidRotation("translation must be finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Standard mounting of a forward-looking camera co-located with the LiDAR:
    /// camera x = -LiDAR y, camera y = -LiDAR z, camera z = LiDAR x.
    pub fn lidar_to_forward_camera(translation: Vector3<f64>) -> Self {
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            0.0, -1.0, 0.0,
            0.0, 0.0, -1.0,
            1.0, 0.0, 0.0,
        );
        Self { rotation, translation }
    }

    /// Forward camera yawed by `yaw_deg` (positive toward LiDAR +y) about the LiDAR z axis.
    pub fn lidar_to_yawed_camera(yaw_deg: f64, translation: Vector3<f64>) -> Self {
        let base = Self::lidar_to_forward_camera(Vector3::zeros());
        let (s, c) = yaw_deg.to_radians().sin_cos();
        // Rotate LiDAR points by -yaw so the camera looks along the yawed direction.
        #[rustfmt::skip]
        let unyaw = Matrix3::new(
            c, s, 0.0,
            -s, c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self {
            rotation: base.rotation * unyaw,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &ExtrinsicTransform) -> ExtrinsicTransform {
        ExtrinsicTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), CalibError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(CalibError::InvalidRotation("non-finite entries".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        return Err(CalibError::InvalidRotation(format!(
            "R^T R deviates from identity by {err:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(CalibError::InvalidRotation(format!("determinant {det} != +1")));
    }
    Ok(())
}

/// A single LiDAR return in the sensor frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub intensity: Option<f64>,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, intensity: None }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Image-plane location of a LiDAR point. `source_index` refers to the cloud
/// slice that was projected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub source_index: usize,
    pub u: f64,
    pub v: f64,
    pub camera_depth: f64,
}

/// Intrinsics and extrinsic transform for one LiDAR-camera pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPair {
    pub intrinsics: CameraIntrinsics,
    pub extrinsic: ExtrinsicTransform,
}

impl CalibrationPair {
    /// 1280x720 forward camera (fx = fy = 1000 px) co-located with the LiDAR.
    pub fn default_forward() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 1000.0,
                fy: 1000.0,
                ox: 640.0,
                oy: 360.0,
                width: 1280,
                height: 720,
            },
            extrinsic: ExtrinsicTransform::lidar_to_forward_camera(Vector3::zeros()),
        }
    }

    pub fn project_point(&self, p: &LidarPoint) -> Option<ProjectedPoint> {
        project_point(&self.intrinsics, &self.extrinsic, p)
    }

    pub fn project_cloud(&self, cloud: &[LidarPoint]) -> Vec<ProjectedPoint> {
        project_cloud(&self.intrinsics, &self.extrinsic, cloud)
    }

    pub fn from_file(path: &Path) -> Result<Self, CalibError> {
        let text = std::fs::read_to_string(path).map_err(|source| CalibError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CalibError::Parse { source, .. } => CalibError::Parse {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CalibError> {
        let file: CalibrationFile = serde_json::from_str(text).map_err(|source| CalibError::Parse {
            path: "<inline>".into(),
            source,
        })?;
        file.try_into()
    }

    pub fn to_file_format(&self) -> CalibrationFile {
        let r = &self.extrinsic.rotation;
        let t = &self.extrinsic.translation;
        CalibrationFile {
            intrinsics: IntrinsicsFile {
                fx: self.intrinsics.fx,
                fy: self.intrinsics.fy,
                ox: self.intrinsics.ox,
                oy: self.intrinsics.oy,
                width: self.intrinsics.width,
                height: self.intrinsics.height,
            },
            extrinsic: ExtrinsicFile {
                rotation: [
                    r[(0, 0)], r[(0, 1)], r[(0, 2)],
                    r[(1, 0)], r[(1, 1)], r[(1, 2)],
                    r[(2, 0)], r[(2, 1)], r[(2, 2)],
                ],
                translation: [t.x, t.y, t.z],
            },
            distortion: [0.0; 5],
        }
    }
}

/// On-disk calibration layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub intrinsics: IntrinsicsFile,
    pub extrinsic: ExtrinsicFile,
    #[serde(default)]
    pub distortion: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicFile {
    /// Row-major 3x3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TryFrom<CalibrationFile> for CalibrationPair {
    type Error = CalibError;

    fn try_from(file: CalibrationFile) -> Result<Self, CalibError> {
        if file.distortion.iter().any(|&d| d != 0.0) {
            return Err(CalibError::NonzeroDistortion(file.distortion));
        }
        let i = &file.intrinsics;
        let intrinsics = CameraIntrinsics::new(i.fx, i.fy, i.ox, i.oy, i.width, i.height)?;
        let rotation = Matrix3::from_row_slice(&file.extrinsic.rotation);
        let translation = Vector3::from_row_slice(&file.extrinsic.translation);
        let extrinsic = ExtrinsicTransform::new(rotation, translation)?;
        Ok(CalibrationPair { intrinsics, extrinsic })
    }
}

/// Pinhole projection of one LiDAR point. Returns `None` for points at or behind
/// the camera plane. Points outside the image are still returned.
pub fn project_point(
    intr: &CameraIntrinsics,
    extr: &ExtrinsicTransform,
    p: &LidarPoint,
) -> Option<ProjectedPoint> {
    project_with_index(intr, extr, p, 0)
}

fn project_with_index(
    intr: &CameraIntrinsics,
    extr: &ExtrinsicTransform,
    p: &LidarPoint,
    source_index: usize,
) -> Option<ProjectedPoint> {
    let pc = extr.apply(&p.coords());
    if !(pc.z > DEPTH_EPSILON) {
        return None;
    }
    let u = intr.fx * pc.x / pc.z + intr.ox;
    let v = intr.fy * pc.y / pc.z + intr.oy;
    if !(u.is_finite() && v.is_finite()) {
        return None;
    }
    Some(ProjectedPoint {
        source_index,
        u,
        v,
        camera_depth: pc.z,
    })
}

/// Projects every point with positive camera depth, preserving input order.
pub fn project_cloud(
    intr: &CameraIntrinsics,
    extr: &ExtrinsicTransform,
    cloud: &[LidarPoint],
) -> Vec<ProjectedPoint> {
    cloud
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_with_index(intr, extr, p, i))
        .collect()
}
