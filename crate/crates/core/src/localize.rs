//! Object localization from a selected cluster.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::ClassLabel;
use crate::calib::LidarPoint;

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("cluster has no points")]
    EmptyCluster,
    #[error("point lies on the sensor's vertical axis; azimuth undefined")]
    OriginPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectLocalization {
    pub frame_id: u64,
    pub object_id: u64,
    pub class_label: ClassLabel,
    /// Index of the representative point in the frame's cloud.
    pub rep_index: usize,
    pub range_m: f64,
    pub azimuth_deg: f64,
    pub x_m: f64,
    pub y_m: f64,
}

/// Planar distance; height is ignored.
pub fn range_of(p: &LidarPoint) -> f64 {
    p.x.hypot(p.y)
}

/// Counter-clockwise angle from +X in degrees, in (-180, 180].
pub fn azimuth_of(p: &LidarPoint) -> Result<f64, LocalizeError> {
    if p.x == 0.0 && p.y == 0.0 {
        return Err(LocalizeError::OriginPoint);
    }
    let a = p.y.atan2(p.x).to_degrees();
    Ok(if a <= -180.0 { 180.0 } else { a })
}

/// Position (within `points`) of the median-range point; the lower middle for
/// even counts. Equal ranges keep their input order.
pub fn representative_point(points: &[LidarPoint]) -> Result<usize, LocalizeError> {
    if points.is_empty() {
        return Err(LocalizeError::EmptyCluster);
    }
    let ranges: Vec<f64> = points.iter().map(range_of).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| ranges[a].total_cmp(&ranges[b]));
    Ok(order[(points.len() - 1) / 2])
}

/// Localizes a cluster given as `(cloud index, point)` pairs.
pub fn localize(
    frame_id: u64,
    object_id: u64,
    class_label: ClassLabel,
    cluster: &[(usize, LidarPoint)],
) -> Result<ObjectLocalization, LocalizeError> {
    let points: Vec<LidarPoint> = cluster.iter().map(|(_, p)| *p).collect();
    let k = representative_point(&points)?;
    let (rep_index, p) = cluster[k];
    // A point on the vertical axis still has a defined range; report azimuth 0.
    let azimuth_deg = azimuth_of(&p).unwrap_or(0.0);
    Ok(ObjectLocalization {
        frame_id,
        object_id,
        class_label,
        rep_index,
        range_m: range_of(&p),
        azimuth_deg,
        x_m: p.x,
        y_m: p.y,
    })
}
