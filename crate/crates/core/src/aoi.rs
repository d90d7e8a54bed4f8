//! Areas of interest: enlarging detection boxes and collecting the LiDAR
//! points whose projections fall inside them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CameraIntrinsics, LidarPoint, ProjectedPoint};

#[derive(Debug, Error, PartialEq)]
pub enum AoiError {
    #[error("degenerate box [{u_min}, {u_max}] x [{v_min}, {v_max}]")]
    Degenerate { u_min: f64, v_min: f64, u_max: f64, v_max: f64 },
    #[error("box does not intersect the image")]
    OutsideImage,
    #[error("enlarge ratios must be non-negative")]
    NegativeRatio,
    #[error("unknown class label {0:?}")]
    UnknownClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Car,
    Pedestrian,
    EscooterRider,
    Other,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Car,
        ClassLabel::Pedestrian,
        ClassLabel::EscooterRider,
        ClassLabel::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::Car => "car",
            ClassLabel::Pedestrian => "pedestrian",
            ClassLabel::EscooterRider => "escooter_rider",
            ClassLabel::Other => "other",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = AoiError;

    fn from_str(s: &str) -> Result<Self, AoiError> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| AoiError::UnknownClass(s.to_string()))
    }
}

/// Axis-aligned detection box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub frame_id: u64,
    pub object_id: u64,
    pub class_label: ClassLabel,
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BoundingBox {
    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<(), AoiError> {
        if !(self.u_min < self.u_max && self.v_min < self.v_max) {
            return Err(AoiError::Degenerate {
                u_min: self.u_min,
                v_min: self.v_min,
                u_max: self.u_max,
                v_max: self.v_max,
            });
        }
        let (w, h) = (intr.width as f64, intr.height as f64);
        if self.u_max <= 0.0 || self.v_max <= 0.0 || self.u_min >= w || self.v_min >= h {
            return Err(AoiError::OutsideImage);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Half-open containment `[u_min, u_max) x [v_min, v_max)`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u < self.u_max && v >= self.v_min && v < self.v_max
    }
}

/// Per-direction enlargement as a fraction of box width (left/right) or
/// height (up/down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnlargeRatios {
    pub left: f64,
    pub right: f64,
    pub up: f64,
    pub down: f64,
}

impl Default for EnlargeRatios {
    fn default() -> Self {
        Self {
            left: 1.0,
            right: 1.0,
            up: 0.0,
            down: 0.0,
        }
    }
}

impl EnlargeRatios {
    pub const NONE: EnlargeRatios = EnlargeRatios {
        left: 0.0,
        right: 0.0,
        up: 0.0,
        down: 0.0,
    };

    pub fn validate(&self) -> Result<(), AoiError> {
        if [self.left, self.right, self.up, self.down].iter().all(|r| *r >= 0.0) {
            Ok(())
        } else {
            Err(AoiError::NegativeRatio)
        }
    }
}

/// Grows `bbox` in each direction proportionally to its size and clamps the
/// result to the image rectangle `[0, width] x [0, height]`.
pub fn enlarge_aoi(bbox: &BoundingBox, ratios: &EnlargeRatios, intr: &CameraIntrinsics) -> BoundingBox {
    let (w, h) = (bbox.width(), bbox.height());
    let (iw, ih) = (intr.width as f64, intr.height as f64);
    BoundingBox {
        u_min: (bbox.u_min - ratios.left * w).clamp(0.0, iw),
        u_max: (bbox.u_max + ratios.right * w).clamp(0.0, iw),
        v_min: (bbox.v_min - ratios.up * h).clamp(0.0, ih),
        v_max: (bbox.v_max + ratios.down * h).clamp(0.0, ih),
        ..*bbox
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiMember {
    pub source_index: usize,
    pub u: f64,
    pub v: f64,
    pub point: LidarPoint,
}

/// LiDAR points mapped into one (possibly enlarged) box.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiPointSet {
    pub bbox: BoundingBox,
    pub members: Vec<AoiMember>,
}

impl AoiPointSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Collects the projections lying inside `bbox`. `cloud` must be the slice the
/// projections were computed from.
pub fn collect_aoi_points(projections: &[ProjectedPoint], cloud: &[LidarPoint], bbox: &BoundingBox) -> AoiPointSet {
    let members = projections
        .iter()
        .filter(|p| bbox.contains(p.u, p.v))
        .map(|p| AoiMember {
            source_index: p.source_index,
            u: p.u,
            v: p.v,
            point: cloud[p.source_index],
        })
        .collect();
    AoiPointSet { bbox: *bbox, members }
}
