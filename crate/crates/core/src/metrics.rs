//! Evaluation metrics: range-band TPR, per-axis MAE and the selection
//! completeness check.
//!
//! Naming follows the original evaluation: `tn` counts *wrong* mappings, i.e.
//! what is usually called a false positive.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::ClassLabel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no class length configured for {0}")]
    UnknownClass(ClassLabel),
    #[error("empty input")]
    EmptyInput,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid metrics configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub fraction: f64,
    pub object_length_m: BTreeMap<ClassLabel, f64>,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            fraction: 0.15,
            object_length_m: BTreeMap::from([(ClassLabel::Car, 4.5), (ClassLabel::EscooterRider, 1.5)]),
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.fraction >= 0.0 && self.fraction.is_finite()) {
            return Err(MetricsError::InvalidConfig("fraction must be non-negative".into()));
        }
        if self.object_length_m.values().any(|l| !(*l > 0.0)) {
            return Err(MetricsError::InvalidConfig("object lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Inclusive range band `gt ± fraction * length`.
pub fn tolerance_band(gt_range: f64, class: ClassLabel, cfg: &ToleranceConfig) -> Result<(f64, f64), MetricsError> {
    let len = cfg.object_length_m.get(&class).ok_or(MetricsError::UnknownClass(class))?;
    let half = cfg.fraction * len;
    Ok((gt_range - half, gt_range + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprResult {
    /// Points inside the band.
    pub tp: usize,
    /// Points outside the band.
    pub tn: usize,
    pub rate: f64,
}

pub fn tpr(point_ranges: &[f64], gt_range: f64, class: ClassLabel, cfg: &ToleranceConfig) -> Result<TprResult, MetricsError> {
    let (lo, hi) = tolerance_band(gt_range, class, cfg)?;
    if point_ranges.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let tp = point_ranges.iter().filter(|r| **r >= lo && **r <= hi).count();
    let tn = point_ranges.len() - tp;
    Ok(TprResult {
        tp,
        tn,
        rate: tp as f64 / point_ranges.len() as f64,
    })
}

pub fn mae_axis(estimates: &[f64], ground_truths: &[f64]) -> Result<f64, MetricsError> {
    if estimates.len() != ground_truths.len() {
        return Err(MetricsError::LengthMismatch(estimates.len(), ground_truths.len()));
    }
    if estimates.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = estimates.iter().zip(ground_truths).map(|(e, g)| (e - g).abs()).sum();
    Ok(total / estimates.len() as f64)
}

/// Threshold on missed true points per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissThreshold {
    /// Absolute number of points.
    Count(f64),
    /// Fraction of the frame's true member count.
    Fraction(f64),
}

impl MissThreshold {
    pub fn resolve(&self, true_count: usize) -> f64 {
        match *self {
            MissThreshold::Count(c) => c,
            MissThreshold::Fraction(f) => f * true_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeConfig {
    pub t1: MissThreshold,
    pub t2: f64,
}

impl Default for GuaranteeConfig {
    fn default() -> Self {
        Self {
            t1: MissThreshold::Fraction(0.2),
            t2: 0.9,
        }
    }
}

impl GuaranteeConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let t1 = match self.t1 {
            MissThreshold::Count(c) | MissThreshold::Fraction(c) => c,
        };
        if !(t1 >= 0.0 && t1.is_finite()) {
            return Err(MetricsError::InvalidConfig("t1 must be non-negative".into()));
        }
        if !(self.t2 > 0.0 && self.t2 <= 1.0) {
            return Err(MetricsError::InvalidConfig("t2 must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One frame's selected cluster and the object's true member indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSelection {
    pub selected: BTreeSet<usize>,
    pub true_members: BTreeSet<usize>,
}

impl FrameSelection {
    pub fn missed(&self) -> usize {
        self.true_members.difference(&self.selected).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessResult {
    pub frames: usize,
    pub frames_within: usize,
    pub probability: f64,
    pub pass: bool,
}

/// Fraction of frames whose missed count is below `t1`, compared with `t2`.
pub fn selection_completeness(per_frame: &[FrameSelection], g: &GuaranteeConfig) -> Result<CompletenessResult, MetricsError> {
    if per_frame.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let frames_within = per_frame
        .iter()
        .filter(|f| (f.missed() as f64) < g.t1.resolve(f.true_members.len()))
        .count();
    let probability = frames_within as f64 / per_frame.len() as f64;
    Ok(CompletenessResult {
        frames: per_frame.len(),
        frames_within,
        probability,
        pass: probability >= g.t2,
    })
}
