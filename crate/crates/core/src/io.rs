//! Sequence directories.
//!
//! ```text
//! sequence.json        {"frame_rate": 10.0, "frames": [{"frame": 0, "t": 0.0, "cloud": "frames/000000.csv"}, ...]}
//! calibration.json     one calibration, or {"cameras": {"name": calibration, ...}}
//! frames/NNNNNN.csv    x,y,z,intensity,du,dv   (intensity, du, dv optional)
//! detections.jsonl     {"frame", "object_id", "class", "box": [u_min, v_min, u_max, v_max], "camera"}
//! ground_truth.jsonl   {"frame", "t", "objects": [...], "labels": [...]}   (optional)
//! ```
//!
//! `du, dv` is a pixel offset added to the point's projection in every camera.
//! The simulator uses it to carry mapping errors while keeping the
//! calibration ideal.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::{BoundingBox, ClassLabel};
use crate::calib::{CalibError, CalibrationFile, CalibrationPair, LidarPoint};
use crate::synth::{GtObject, SimulatedFrame};

pub const DEFAULT_CAMERA: &str = "cam0";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("{0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Named LiDAR-camera pairs sharing one LiDAR.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cameras: BTreeMap<String, CalibrationPair>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RigFile {
    Single(CalibrationFile),
    Multi { cameras: BTreeMap<String, CalibrationFile> },
}

#[derive(Serialize)]
struct RigFileOut<'a> {
    cameras: BTreeMap<&'a str, CalibrationFile>,
}

impl CameraRig {
    pub fn single(calib: CalibrationPair) -> Self {
        Self {
            cameras: BTreeMap::from([(DEFAULT_CAMERA.to_string(), calib)]),
        }
    }

    pub fn get(&self, camera: &str) -> Option<&CalibrationPair> {
        self.cameras.get(camera)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, IoError> {
        let file: RigFile = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
        let files = match file {
            RigFile::Single(f) => BTreeMap::from([(DEFAULT_CAMERA.to_string(), f)]),
            RigFile::Multi { cameras } => cameras,
        };
        if files.is_empty() {
            return Err(parse_err(path, "no cameras defined"));
        }
        let cameras = files
            .into_iter()
            .map(|(name, f)| Ok((name, CalibrationPair::try_from(f)?)))
            .collect::<Result<_, IoError>>()?;
        Ok(Self { cameras })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let out = RigFileOut {
            cameras: self.cameras.iter().map(|(k, c)| (k.as_str(), c.to_file_format())).collect(),
        };
        serde_json::to_string_pretty(&out).expect("rig serialises")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub camera: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_id: u64,
    pub t: f64,
    pub cloud: Vec<LidarPoint>,
    /// Pixel offset per point; empty means none.
    pub shifts: Vec<[f64; 2]>,
    pub detections: Vec<Detection>,
}

impl FrameInput {
    pub fn shift(&self, i: usize) -> [f64; 2] {
        self.shifts.get(i).copied().unwrap_or([0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    #[serde(rename = "frame")]
    pub frame_id: u64,
    pub t: f64,
    pub objects: Vec<GtObject>,
    /// Object id, ground (-1) or clutter (-2) per cloud point.
    pub labels: Vec<i64>,
}

impl FrameTruth {
    pub fn object(&self, object_id: u64) -> Option<&GtObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frame_rate: f64,
    pub rig: CameraRig,
    pub frames: Vec<FrameInput>,
    /// Aligned with `frames` when present.
    pub truth: Option<Vec<FrameTruth>>,
}

impl Sequence {
    pub fn from_simulation(frames: Vec<SimulatedFrame>, frame_rate: f64, calib: CalibrationPair) -> Self {
        let mut inputs = Vec::with_capacity(frames.len());
        let mut truth = Vec::with_capacity(frames.len());
        for f in frames {
            truth.push(FrameTruth {
                frame_id: f.frame_id,
                t: f.t,
                objects: f.gt_objects,
                labels: f.labels,
            });
            inputs.push(FrameInput {
                frame_id: f.frame_id,
                t: f.t,
                cloud: f.cloud,
                shifts: f.applied_shifts,
                detections: f
                    .detections
                    .into_iter()
                    .map(|bbox| Detection {
                        camera: DEFAULT_CAMERA.to_string(),
                        bbox,
                    })
                    .collect(),
            });
        }
        Self {
            frame_rate,
            rig: CameraRig::single(calib),
            frames: inputs,
            truth: Some(truth),
        }
    }

    pub fn truth_for(&self, k: usize) -> Option<&FrameTruth> {
        self.truth.as_ref().map(|t| &t[k])
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.frames.is_empty() {
            return Err(IoError::EmptySequence);
        }
        if self.frames.windows(2).any(|w| w[0].frame_id >= w[1].frame_id) {
            return Err(IoError::Inconsistent("frame ids must be strictly increasing".into()));
        }
        for f in &self.frames {
            if !f.shifts.is_empty() && f.shifts.len() != f.cloud.len() {
                return Err(IoError::Inconsistent(format!("frame {}: shift count differs from cloud size", f.frame_id)));
            }
            for d in &f.detections {
                if self.rig.get(&d.camera).is_none() {
                    return Err(IoError::Inconsistent(format!("frame {}: unknown camera {:?}", f.frame_id, d.camera)));
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.frames.len() {
                return Err(IoError::Inconsistent("ground truth does not cover every frame".into()));
            }
            for (f, g) in self.frames.iter().zip(truth) {
                if f.frame_id != g.frame_id || g.labels.len() != f.cloud.len() {
                    return Err(IoError::Inconsistent(format!("frame {}: ground truth misaligned", f.frame_id)));
                }
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let manifest_path = dir.join("sequence.json");
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| parse_err(&manifest_path, e))?;
        let rig = CameraRig::load(&dir.join("calibration.json"))?;

        let det_path = dir.join("detections.jsonl");
        let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        for rec in read_jsonl::<DetectionRecord>(&det_path)? {
            let [u_min, v_min, u_max, v_max] = rec.bbox;
            by_frame.entry(rec.frame).or_default().push(Detection {
                camera: rec.camera,
                bbox: BoundingBox {
                    frame_id: rec.frame,
                    object_id: rec.object_id,
                    class_label: rec.class,
                    u_min,
                    v_min,
                    u_max,
                    v_max,
                },
            });
        }

        let frames = manifest
            .frames
            .iter()
            .map(|m| {
                let (cloud, shifts) = read_cloud(&dir.join(&m.cloud))?;
                Ok(FrameInput {
                    frame_id: m.frame,
                    t: m.t,
                    cloud,
                    shifts,
                    detections: by_frame.remove(&m.frame).unwrap_or_default(),
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        if let Some(frame) = by_frame.keys().next() {
            return Err(parse_err(&det_path, format!("detection for unknown frame {frame}")));
        }

        let gt_path = dir.join("ground_truth.jsonl");
        let truth = if gt_path.exists() {
            let mut truth: Vec<FrameTruth> = read_jsonl(&gt_path)?;
            truth.sort_by_key(|g| g.frame_id);
            Some(truth)
        } else {
            None
        };
        let seq = Self {
            frame_rate: manifest.frame_rate,
            rig,
            frames,
            truth,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        let mut manifest = Manifest {
            frame_rate: self.frame_rate,
            frames: Vec::with_capacity(self.frames.len()),
        };
        let mut detections = Vec::new();
        for f in &self.frames {
            let rel = format!("frames/{:06}.csv", f.frame_id);
            write_cloud(&dir.join(&rel), &f.cloud, &f.shifts)?;
            manifest.frames.push(ManifestFrame {
                frame: f.frame_id,
                t: f.t,
                cloud: rel,
            });
            detections.extend(f.detections.iter().map(|d| DetectionRecord {
                frame: f.frame_id,
                object_id: d.bbox.object_id,
                class: d.bbox.class_label,
                bbox: [d.bbox.u_min, d.bbox.v_min, d.bbox.u_max, d.bbox.v_max],
                camera: d.camera.clone(),
            }));
        }
        write_text(&dir.join("sequence.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serialises"))?;
        write_text(&dir.join("calibration.json"), &self.rig.to_json())?;
        write_jsonl(&dir.join("detections.jsonl"), &detections)?;
        if let Some(truth) = &self.truth {
            write_jsonl(&dir.join("ground_truth.jsonl"), truth)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    frame_rate: f64,
    frames: Vec<ManifestFrame>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    frame: u64,
    t: f64,
    cloud: String,
}

fn default_camera() -> String {
    DEFAULT_CAMERA.to_string()
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    frame: u64,
    object_id: u64,
    class: ClassLabel,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default = "default_camera")]
    camera: String,
}

#[derive(Serialize, Deserialize)]
struct CloudRow {
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    intensity: Option<f64>,
    #[serde(default)]
    du: Option<f64>,
    #[serde(default)]
    dv: Option<f64>,
}

pub fn read_cloud(path: &Path) -> Result<(Vec<LidarPoint>, Vec<[f64; 2]>), IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let mut cloud = Vec::new();
    let mut shifts = Vec::new();
    let mut any_shift = false;
    for row in r.deserialize::<CloudRow>() {
        let row = row.map_err(|e| parse_err(path, e))?;
        let p = LidarPoint {
            x: row.x,
            y: row.y,
            z: row.z,
            intensity: row.intensity,
        };
        if !p.is_finite() {
            return Err(parse_err(path, format!("non-finite point at row {}", cloud.len() + 1)));
        }
        any_shift |= row.du.is_some() || row.dv.is_some();
        cloud.push(p);
        shifts.push([row.du.unwrap_or(0.0), row.dv.unwrap_or(0.0)]);
    }
    if !any_shift {
        shifts.clear();
    }
    Ok((cloud, shifts))
}

pub fn write_cloud(path: &Path, cloud: &[LidarPoint], shifts: &[[f64; 2]]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, e))?;
    for (i, p) in cloud.iter().enumerate() {
        let s = shifts.get(i);
        w.serialize(CloudRow {
            x: p.x,
            y: p.y,
            z: p.z,
            intensity: p.intensity,
            du: s.map(|s| s[0]),
            dv: s.map(|s| s[1]),
        })
        .map_err(|e| parse_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| parse_err(path, e))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}
