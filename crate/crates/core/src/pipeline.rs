//! Frame and sequence orchestration.
//!
//! Per frame: crop, fit and remove the ground, project the full cloud into
//! every camera used by a detection, then for each detection enlarge its box,
//! range-cluster the kept points inside it, pick a cluster by shape and
//! localize it. The baseline mapping (all points inside the original box) is
//! recorded alongside for evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::{info, warn};
use nalgebra::Point2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aoi::{enlarge_aoi, ClassLabel};
use crate::calib::{CalibrationPair, LidarPoint, ProjectedPoint};
use crate::cluster::{mode_clusters, ClusterError};
use crate::config::{ConfigError, PipelineConfig};
use crate::ground::{crop_indices, fit_ground_plane, partition_ground};
use crate::io::{write_jsonl, write_text, CameraRig, FrameInput, IoError, Sequence};
use crate::localize::{localize, range_of, LocalizeError, ObjectLocalization};
use crate::metrics::{selection_completeness, tolerance_band, tpr, FrameSelection};
use crate::report::{tpr_table, Mae, ObjectReport, SequenceReport, TprSample};
use crate::shape::{select_cluster, BenchmarkShapeRegistry, CandidateScore, ShapeCandidate, ShapeError};
use crate::smoother::{detect_outliers, smooth_and_interpolate, SmoothedTrajectory, SmootherError, TrackSample};
use crate::synth::benchmark_registry;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Input(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    /// Process exit code for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) => 1,
            PipelineError::Config(_) => 2,
            PipelineError::Internal(_) => 3,
        }
    }
}

/// Per-object failures that do not stop the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SoftFailure {
    NoQualifiedCluster,
    EmptyCluster,
}

impl SoftFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            SoftFailure::NoQualifiedCluster => "NoQualifiedCluster",
            SoftFailure::EmptyCluster => "EmptyCluster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSummary {
    pub center_range: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub object_id: u64,
    pub class: ClassLabel,
    pub camera: String,
    pub baseline_count: usize,
    pub aoi_count: usize,
    pub candidates: Vec<CandidateSummary>,
    /// Shape scores; absent when shape selection did not run.
    pub shape_scores: Option<Vec<CandidateScore>>,
    pub selected: Option<usize>,
    pub localization: Option<ObjectLocalization>,
    pub failure: Option<SoftFailure>,
    pub note: Option<String>,
    /// Cloud indices mapped into the original box.
    #[serde(skip)]
    pub baseline_members: Vec<usize>,
    /// Cloud indices of the selected cluster.
    #[serde(skip)]
    pub selected_members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCounts {
    pub points: usize,
    pub cropped: usize,
    pub ground_removed: usize,
    pub kept: usize,
    /// Set when ground removal was skipped.
    pub ground_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame_id: u64,
    pub t: f64,
    pub stages: StageCounts,
    pub detections: Vec<DetectionResult>,
}

/// Indices of points that survive cropping and ground removal.
fn keep_mask(cloud: &[LidarPoint], cfg: &PipelineConfig, frame_id: u64) -> (Vec<bool>, StageCounts) {
    let cropped = crop_indices(cloud, &cfg.ground);
    let sub: Vec<LidarPoint> = cropped.iter().map(|&i| cloud[i]).collect();
    let mut keep = vec![false; cloud.len()];
    let mut stages = StageCounts {
        points: cloud.len(),
        cropped: cropped.len(),
        ground_removed: 0,
        kept: 0,
        ground_error: None,
    };
    match fit_ground_plane(&sub, &cfg.ground) {
        Ok(model) => {
            let (kept, removed) = partition_ground(&sub, &model, cfg.ground.delta);
            for k in kept {
                keep[cropped[k]] = true;
            }
            stages.ground_removed = removed.len();
        }
        Err(e) => {
            warn!("frame {frame_id}: ground removal skipped: {e}");
            for &i in &cropped {
                keep[i] = true;
            }
            stages.ground_error = Some(e.to_string());
        }
    }
    stages.kept = keep.iter().filter(|k| **k).count();
    (keep, stages)
}

fn project_shifted(frame: &FrameInput, calib: &CalibrationPair) -> Vec<ProjectedPoint> {
    let mut proj = calib.project_cloud(&frame.cloud);
    for p in &mut proj {
        let [du, dv] = frame.shift(p.source_index);
        p.u += du;
        p.v += dv;
    }
    proj
}

/// Runs every stage on one frame. Fails only on configuration gaps; per-object
/// problems are reported in the result.
pub fn run_fusion_frame(
    frame: &FrameInput,
    rig: &CameraRig,
    benchmarks: &BenchmarkShapeRegistry,
    cfg: &PipelineConfig,
) -> Result<FrameResult, PipelineError> {
    cfg.check_classes(frame.detections.iter().map(|d| d.bbox.class_label))?;
    let (keep, stages) = if cfg.baseline_only {
        let n = frame.cloud.len();
        let stages = StageCounts {
            points: n,
            cropped: n,
            ground_removed: 0,
            kept: n,
            ground_error: None,
        };
        (vec![true; n], stages)
    } else {
        keep_mask(&frame.cloud, cfg, frame.frame_id)
    };

    let mut projections: BTreeMap<&str, Vec<ProjectedPoint>> = BTreeMap::new();
    let mut detections = Vec::with_capacity(frame.detections.len());
    for det in &frame.detections {
        let calib = rig
            .get(&det.camera)
            .ok_or_else(|| IoError::Inconsistent(format!("frame {}: unknown camera {:?}", frame.frame_id, det.camera)))?;
        let proj = projections.entry(det.camera.as_str()).or_insert_with(|| project_shifted(frame, calib));
        let class = det.bbox.class_label;
        let baseline_members: Vec<usize> = proj.iter().filter(|p| det.bbox.contains(p.u, p.v)).map(|p| p.source_index).collect();
        let mut result = DetectionResult {
            object_id: det.bbox.object_id,
            class,
            camera: det.camera.clone(),
            baseline_count: baseline_members.len(),
            aoi_count: 0,
            candidates: Vec::new(),
            shape_scores: None,
            selected: None,
            localization: None,
            failure: None,
            note: None,
            baseline_members,
            selected_members: Vec::new(),
        };
        if cfg.baseline_only {
            detections.push(result);
            continue;
        }

        let aoi = enlarge_aoi(&det.bbox, &cfg.enlarge[&class], &calib.intrinsics);
        let members: Vec<&ProjectedPoint> = proj.iter().filter(|p| keep[p.source_index] && aoi.contains(p.u, p.v)).collect();
        result.aoi_count = members.len();
        let ranges: Vec<f64> = members.iter().map(|p| range_of(&frame.cloud[p.source_index])).collect();
        let params = cfg.clustering.params_for(class).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let clusters = match mode_clusters(&ranges, &params) {
            Ok((_, c)) => c,
            Err(ClusterError::EmptyInput | ClusterError::NoQualifiedCluster) => {
                result.failure = Some(SoftFailure::NoQualifiedCluster);
                detections.push(result);
                continue;
            }
            Err(e) => return Err(ConfigError::Invalid(e.to_string()).into()),
        };
        result.candidates = clusters
            .iter()
            .map(|c| CandidateSummary {
                center_range: c.center_range,
                count: c.count,
            })
            .collect();

        let index = if clusters.len() == 1 {
            0
        } else if let Some(benchmark) = benchmarks.get(class) {
            let candidates: Vec<ShapeCandidate> = clusters
                .iter()
                .map(|c| ShapeCandidate {
                    cluster: c,
                    pixels: c.member_indices.iter().map(|&k| Point2::new(members[k].u, members[k].v)).collect(),
                })
                .collect();
            let sel = select_cluster(&candidates, benchmark, &cfg.shape).expect("non-empty candidates");
            result.shape_scores = Some(sel.scores);
            sel.index
        } else {
            result.note = Some(format!("no benchmark shape for {class}; largest cluster used"));
            0
        };
        result.selected = Some(index);
        let cluster: Vec<(usize, LidarPoint)> = clusters[index]
            .member_indices
            .iter()
            .map(|&k| (members[k].source_index, frame.cloud[members[k].source_index]))
            .collect();
        result.selected_members = cluster.iter().map(|(i, _)| *i).collect();
        match localize(frame.frame_id, det.bbox.object_id, class, &cluster) {
            Ok(loc) => result.localization = Some(loc),
            Err(LocalizeError::EmptyCluster) => result.failure = Some(SoftFailure::EmptyCluster),
            Err(e) => return Err(PipelineError::Internal(e.to_string())),
        }
        detections.push(result);
    }
    Ok(FrameResult {
        frame_id: frame.frame_id,
        t: frame.t,
        stages,
        detections,
    })
}

/// Benchmarks from `cfg.benchmark`, or synthetic ones.
pub fn load_benchmarks(cfg: &PipelineConfig) -> Result<BenchmarkShapeRegistry, PipelineError> {
    match &cfg.benchmark {
        Some(path) => BenchmarkShapeRegistry::load(path).map_err(|e| {
            PipelineError::Input(IoError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })
        }),
        None => benchmark_registry(cfg.rng_seed, cfg.synthetic_benchmark_samples).map_err(|e: ShapeError| PipelineError::Internal(e.to_string())),
    }
}

/// One object's localizations and final trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub object_id: u64,
    pub class: ClassLabel,
    /// `(frame index, localization)`, one per frame.
    pub raw: Vec<(usize, ObjectLocalization)>,
    pub trajectory: SmoothedTrajectory,
    pub smoothed: bool,
}

#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub frames: Vec<FrameResult>,
    pub tracks: BTreeMap<u64, ObjectTrack>,
    pub report: SequenceReport,
}

fn raw_trajectory(raw: &[(usize, ObjectLocalization)], seq: &Sequence) -> SmoothedTrajectory {
    SmoothedTrajectory {
        samples: raw.iter().map(|(k, l)| TrackSample::measured(seq.frames[*k].t, l.x_m, l.y_m, 0.0)).collect(),
    }
}

fn smooth_track(raw: &[(usize, ObjectLocalization)], seq: &Sequence, cfg: &PipelineConfig) -> Result<SmoothedTrajectory, SmootherError> {
    let track = raw_trajectory(raw, seq).samples;
    let flags = detect_outliers(&track, &cfg.smoother)?;
    let (first, last) = (raw[0].0, raw[raw.len() - 1].0);
    let grid: Vec<f64> = seq.frames[first..=last].iter().map(|f| f.t).collect();
    smooth_and_interpolate(&track, &flags, Some(&grid))
}

fn build_tracks(seq: &Sequence, frames: &[FrameResult], cfg: &PipelineConfig) -> BTreeMap<u64, ObjectTrack> {
    let mut tracks: BTreeMap<u64, ObjectTrack> = BTreeMap::new();
    for (k, fr) in frames.iter().enumerate() {
        // With several cameras the first one (by name) wins.
        let mut by_object: BTreeMap<u64, &DetectionResult> = BTreeMap::new();
        for d in &fr.detections {
            if d.localization.is_some() {
                let slot = by_object.entry(d.object_id).or_insert(d);
                if d.camera < slot.camera {
                    *slot = d;
                }
            }
        }
        for (id, d) in by_object {
            let t = tracks.entry(id).or_insert_with(|| ObjectTrack {
                object_id: id,
                class: d.class,
                raw: Vec::new(),
                trajectory: SmoothedTrajectory { samples: Vec::new() },
                smoothed: false,
            });
            t.raw.push((k, d.localization.expect("filtered above")));
        }
    }
    for track in tracks.values_mut() {
        track.trajectory = raw_trajectory(&track.raw, seq);
        if cfg.smoothing {
            match smooth_track(&track.raw, seq, cfg) {
                Ok(s) => {
                    track.trajectory = s;
                    track.smoothed = true;
                }
                Err(e) => warn!("object {}: smoothing skipped: {e}", track.object_id),
            }
        }
    }
    tracks
}

fn evaluate(seq: &Sequence, frames: &[FrameResult], tracks: &BTreeMap<u64, ObjectTrack>, cfg: &PipelineConfig) -> SequenceReport {
    let mut soft_failures: BTreeMap<String, usize> = BTreeMap::new();
    let mut samples: Vec<TprSample> = Vec::new();
    let mut selections: BTreeMap<u64, Vec<FrameSelection>> = BTreeMap::new();
    let mut detected: BTreeMap<u64, (ClassLabel, BTreeSet<u64>)> = BTreeMap::new();

    for (k, fr) in frames.iter().enumerate() {
        let truth = seq.truth_for(k);
        for d in &fr.detections {
            detected.entry(d.object_id).or_insert((d.class, BTreeSet::new())).1.insert(fr.frame_id);
            if let Some(f) = d.failure {
                *soft_failures.entry(f.as_str().to_string()).or_default() += 1;
            }
            let Some(truth) = truth else { continue };
            let Some(gt) = truth.object(d.object_id) else { continue };
            let cloud = &seq.frames[k].cloud;
            let ranges = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| range_of(&cloud[i])).collect() };
            let rate = |idx: &[usize]| -> Option<f64> {
                if idx.is_empty() {
                    // Nothing mapped: no correct point.
                    return tolerance_band(gt.range_m, d.class, &cfg.tolerance).ok().map(|_| 0.0);
                }
                tpr(&ranges(idx), gt.range_m, d.class, &cfg.tolerance).ok().map(|r| r.rate)
            };
            if let Some(baseline) = rate(&d.baseline_members) {
                samples.push(TprSample {
                    frame_id: fr.frame_id,
                    object_id: d.object_id,
                    camera: d.camera.clone(),
                    class: d.class,
                    baseline,
                    pfusion: if cfg.baseline_only { None } else { rate(&d.selected_members) },
                });
            }
            if !cfg.baseline_only {
                let calib = &seq.rig.cameras[&d.camera];
                let true_members: BTreeSet<usize> =
                    crate::synth::true_members(cloud, &truth.labels, d.object_id, calib).into_iter().collect();
                if !true_members.is_empty() {
                    selections.entry(d.object_id).or_default().push(FrameSelection {
                        selected: d.selected_members.iter().copied().collect(),
                        true_members,
                    });
                }
            }
        }
    }

    let objects = detected
        .iter()
        .map(|(&id, (class, frames_seen))| {
            let track = tracks.get(&id);
            let gt_xy = |k: usize| seq.truth_for(k).and_then(|t| t.object(id)).map(|g| [g.x, g.y]);
            let mae_raw = track.and_then(|t| {
                let pairs: Vec<_> = t.raw.iter().filter_map(|(k, l)| gt_xy(*k).map(|g| ([l.x_m, l.y_m], g))).collect();
                Mae::from_pairs(&pairs)
            });
            let mae = track.and_then(|t| {
                let pairs: Vec<_> = t
                    .trajectory
                    .samples
                    .iter()
                    .filter_map(|s| {
                        let k = seq.frames.iter().position(|f| f.t == s.t)?;
                        gt_xy(k).map(|g| ([s.x, s.y], g))
                    })
                    .collect();
                Mae::from_pairs(&pairs)
            });
            let own: Vec<&TprSample> = samples.iter().filter(|s| s.object_id == id).collect();
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            ObjectReport {
                object_id: id,
                class: *class,
                frames_detected: frames_seen.len(),
                frames_localized: track.map_or(0, |t| t.raw.len()),
                outliers_flagged: track.map_or(0, |t| t.trajectory.samples.iter().filter(|s| s.outlier).count()),
                interpolated: track.map_or(0, |t| t.trajectory.samples.iter().filter(|s| s.interpolated).count()),
                smoothed: track.is_some_and(|t| t.smoothed),
                mae,
                mae_raw,
                baseline_tpr: mean(own.iter().map(|s| s.baseline).collect()),
                pfusion_tpr: mean(own.iter().filter_map(|s| s.pfusion).collect()),
                completeness: selections.get(&id).and_then(|s| selection_completeness(s, &cfg.guarantee).ok()),
            }
        })
        .collect();

    let all_selections: Vec<FrameSelection> = selections.into_values().flatten().collect();
    let (tpr_rows, tpr_overall) = tpr_table(&samples);
    SequenceReport {
        frames: frames.len(),
        detections: frames.iter().map(|f| f.detections.len()).sum(),
        localized: frames.iter().flat_map(|f| &f.detections).filter(|d| d.localization.is_some()).count(),
        ground_fit_failures: frames.iter().filter(|f| f.stages.ground_error.is_some()).count(),
        soft_failures,
        objects,
        tpr_table: tpr_rows,
        tpr_overall,
        completeness: selection_completeness(&all_selections, &cfg.guarantee).ok(),
    }
}

/// Fuses every frame, builds trajectories and, when ground truth is present,
/// evaluates them.
pub fn run_sequence(seq: &Sequence, benchmarks: &BenchmarkShapeRegistry, cfg: &PipelineConfig) -> Result<SequenceOutput, PipelineError> {
    seq.validate()?;
    cfg.validate()?;
    cfg.check_classes(seq.frames.iter().flat_map(|f| f.detections.iter().map(|d| d.bbox.class_label)))?;
    let frames = seq
        .frames
        .par_iter()
        .map(|f| run_fusion_frame(f, &seq.rig, benchmarks, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    info!("fused {} frames", frames.len());
    let tracks = build_tracks(seq, &frames, cfg);
    let report = evaluate(seq, &frames, &tracks, cfg);
    Ok(SequenceOutput { frames, tracks, report })
}

#[derive(Serialize)]
struct LocalizationRow<'a> {
    frame: u64,
    t: f64,
    object_id: u64,
    class: ClassLabel,
    camera: &'a str,
    range_m: f64,
    azimuth_deg: f64,
    x_m: f64,
    y_m: f64,
}

/// Writes `report.json`, `diagnostics.jsonl`, `localizations.csv` and
/// `trajectories/object_<id>.csv` under `dir`.
pub fn write_outputs(out: &SequenceOutput, dir: &Path) -> Result<(), PipelineError> {
    let traj_dir = dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(|source| IoError::Io {
        path: traj_dir.clone(),
        source,
    })?;
    let report = serde_json::to_string_pretty(&out.report).map_err(|e| PipelineError::Internal(e.to_string()))?;
    write_text(&dir.join("report.json"), &report)?;
    write_jsonl(&dir.join("diagnostics.jsonl"), &out.frames)?;

    let loc_path = dir.join("localizations.csv");
    let csv_err = |e: csv::Error| IoError::Parse {
        path: loc_path.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(&loc_path).map_err(csv_err)?;
    for f in &out.frames {
        for d in &f.detections {
            if let Some(l) = &d.localization {
                w.serialize(LocalizationRow {
                    frame: f.frame_id,
                    t: f.t,
                    object_id: l.object_id,
                    class: l.class_label,
                    camera: &d.camera,
                    range_m: l.range_m,
                    azimuth_deg: l.azimuth_deg,
                    x_m: l.x_m,
                    y_m: l.y_m,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| csv_err(e.into()))?;

    for track in out.tracks.values() {
        let path = traj_dir.join(format!("object_{}.csv", track.object_id));
        track.trajectory.write_csv(&path).map_err(|e| IoError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}
