//! Evaluation reports for one sequence and for a set of sequences.
//!
//! `tn` keeps the original evaluation's naming: it counts points mapped to the
//! object but lying outside the tolerance band (false positives).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aoi::ClassLabel;
use crate::metrics::{mae_axis, CompletenessResult, GuaranteeConfig};
use crate::smoother::TrackSample;
use crate::stats::{one_sample_right_tail_t_test, paired_t_test, TTest};

/// Reference value of the one-sample test.
pub const TPR_REFERENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub x: f64,
    pub y: f64,
    pub n: usize,
}

impl Mae {
    /// Compares `(t, x, y)` estimates with the ground truth at the same times.
    pub fn from_pairs(pairs: &[([f64; 2], [f64; 2])]) -> Option<Mae> {
        let (ex, gx): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(e, g)| (e[0], g[0])).unzip();
        let (ey, gy): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(e, g)| (e[1], g[1])).unzip();
        Some(Mae {
            x: mae_axis(&ex, &gx).ok()?,
            y: mae_axis(&ey, &gy).ok()?,
            n: pairs.len(),
        })
    }
}

/// Per-detection TPR pair, the raw material of the comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprSample {
    pub frame_id: u64,
    pub object_id: u64,
    pub camera: String,
    pub class: ClassLabel,
    pub baseline: f64,
    pub pfusion: Option<f64>,
}

/// One row of the baseline vs p-fusion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprRow {
    pub camera: String,
    pub class: ClassLabel,
    pub n: usize,
    pub baseline_pct: f64,
    pub pfusion_pct: Option<f64>,
    /// Paired one-sided test, p-fusion greater than baseline.
    pub paired: Option<TTest>,
    /// One-sided test of p-fusion TPR greater than [`TPR_REFERENCE`].
    pub above_half: Option<TTest>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl TprRow {
    pub fn from_samples(camera: &str, class: ClassLabel, samples: &[&TprSample]) -> TprRow {
        let baseline: Vec<f64> = samples.iter().map(|s| s.baseline).collect();
        let pfusion: Option<Vec<f64>> = samples.iter().map(|s| s.pfusion).collect();
        TprRow {
            camera: camera.to_string(),
            class,
            n: samples.len(),
            baseline_pct: 100.0 * mean(&baseline),
            pfusion_pct: pfusion.as_ref().map(|p| 100.0 * mean(p)),
            paired: pfusion.as_ref().and_then(|p| paired_t_test(&baseline, p).ok()),
            above_half: pfusion.as_ref().and_then(|p| one_sample_right_tail_t_test(p, TPR_REFERENCE).ok()),
        }
    }
}

/// Groups samples by `(camera, class)` and adds an overall row.
pub fn tpr_table(samples: &[TprSample]) -> (Vec<TprRow>, Option<TprRow>) {
    if samples.is_empty() {
        return (Vec::new(), None);
    }
    let mut groups: BTreeMap<(&str, ClassLabel), Vec<&TprSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.camera.as_str(), s.class)).or_default().push(s);
    }
    let rows = groups.iter().map(|((cam, class), v)| TprRow::from_samples(cam, *class, v)).collect();
    let all: Vec<&TprSample> = samples.iter().collect();
    let mut overall = TprRow::from_samples("all", samples[0].class, &all);
    if samples.iter().any(|s| s.class != samples[0].class) {
        overall.class = ClassLabel::Other;
    }
    (rows, Some(overall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object_id: u64,
    pub class: ClassLabel,
    pub frames_detected: usize,
    pub frames_localized: usize,
    pub outliers_flagged: usize,
    pub interpolated: usize,
    pub smoothed: bool,
    /// Trajectory (smoothed when enabled) against ground truth.
    pub mae: Option<Mae>,
    /// Per-frame localizations against ground truth.
    pub mae_raw: Option<Mae>,
    pub baseline_tpr: Option<f64>,
    pub pfusion_tpr: Option<f64>,
    pub completeness: Option<CompletenessResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub frames: usize,
    pub detections: usize,
    pub localized: usize,
    pub ground_fit_failures: usize,
    pub soft_failures: BTreeMap<String, usize>,
    pub objects: Vec<ObjectReport>,
    pub tpr_table: Vec<TprRow>,
    pub tpr_overall: Option<TprRow>,
    pub completeness: Option<CompletenessResult>,
}

/// Per-sequence mean TPRs and pooled completeness across many sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub sequences: usize,
    pub baseline_mean: Vec<f64>,
    pub pfusion_mean: Vec<f64>,
    pub mean_improvement_pp: f64,
    pub paired: Option<TTest>,
    pub above_half: Option<TTest>,
    pub completeness: Option<CompletenessResult>,
}

pub fn suite_report(reports: &[SequenceReport], guarantee: &GuaranteeConfig) -> SuiteReport {
    let rows: Vec<&TprRow> = reports.iter().filter_map(|r| r.tpr_overall.as_ref()).collect();
    let baseline_mean: Vec<f64> = rows.iter().map(|r| r.baseline_pct / 100.0).collect();
    let pfusion_mean: Vec<f64> = rows.iter().filter_map(|r| r.pfusion_pct).map(|p| p / 100.0).collect();
    let comparable = pfusion_mean.len() == baseline_mean.len() && !baseline_mean.is_empty();
    let (frames, within) = reports
        .iter()
        .filter_map(|r| r.completeness.as_ref())
        .fold((0, 0), |(f, w), c| (f + c.frames, w + c.frames_within));
    let completeness = (frames > 0).then(|| {
        let probability = within as f64 / frames as f64;
        CompletenessResult {
            frames,
            frames_within: within,
            probability,
            pass: probability >= guarantee.t2,
        }
    });
    SuiteReport {
        sequences: reports.len(),
        mean_improvement_pp: if comparable {
            100.0 * (mean(&pfusion_mean) - mean(&baseline_mean))
        } else {
            f64::NAN
        },
        paired: comparable.then(|| paired_t_test(&baseline_mean, &pfusion_mean).ok()).flatten(),
        above_half: comparable.then(|| one_sample_right_tail_t_test(&pfusion_mean, TPR_REFERENCE).ok()).flatten(),
        baseline_mean,
        pfusion_mean,
        completeness,
    }
}

/// Trajectory error against ground truth at matching timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvaluation {
    pub object_id: u64,
    pub mae: Option<Mae>,
    pub samples: usize,
    pub matched: usize,
}

/// Matches trajectory samples to ground-truth `(t, x, y)` rows within
/// `1e-6` s.
pub fn evaluate_trajectory(object_id: u64, samples: &[TrackSample], truth: &[(f64, [f64; 2])]) -> TrajectoryEvaluation {
    let pairs: Vec<([f64; 2], [f64; 2])> = samples
        .iter()
        .filter_map(|s| {
            let k = truth.partition_point(|(t, _)| *t < s.t - 1e-6);
            truth.get(k).filter(|(t, _)| (t - s.t).abs() <= 1e-6).map(|(_, g)| ([s.x, s.y], *g))
        })
        .collect();
    TrajectoryEvaluation {
        object_id,
        mae: Mae::from_pairs(&pairs),
        samples: samples.len(),
        matched: pairs.len(),
    }
}
