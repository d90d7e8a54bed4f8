//! Shape similarity filter.
//!
//! A cluster's 2-D pixel footprint is summarised by a 3x3 occupancy
//! descriptor over its bounding rectangle. Before the descriptor is taken the
//! footprint is de-rotated with a constrained PCA so that its principal axis is
//! vertical (objects are assumed to stand upright; tilts beyond
//! [`MAX_TILT_DEG`] are treated as a failed assumption and left untouched).
//! Candidates are compared with a per-class benchmark descriptor by KL
//! divergence, mapped to a similarity in `(0, 1]`.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix2, Point2, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::ClassLabel;
use crate::cluster::CandidateCluster;

/// Largest tilt (degrees) the de-rotation step will correct.
pub const MAX_TILT_DEG: f64 = 40.0;

const TILT_SLACK_DEG: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(&'static str),
    #[error("no descriptors to average")]
    EmptyInput,
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid shape filter configuration: {0}")]
    InvalidConfig(String),
    #[error("benchmark registry {path}: {message}")]
    Registry { path: String, message: String },
}

/// Normalised 3x3 occupancy grid, row-major (row 0 is the top of the image).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct ShapeDescriptor([f64; 9]);

impl ShapeDescriptor {
    pub fn new(weights: [f64; 9]) -> Result<Self, ShapeError> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ShapeError::InvalidDescriptor("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ShapeError::InvalidDescriptor(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 9.0; 9])
    }

    pub fn one_hot(cell: usize) -> Self {
        let mut w = [0.0; 9];
        w[cell] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64; 9] {
        &self.0
    }

    pub fn l1_distance(&self, other: &ShapeDescriptor) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl TryFrom<[f64; 9]> for ShapeDescriptor {
    type Error = ShapeError;

    fn try_from(w: [f64; 9]) -> Result<Self, ShapeError> {
        ShapeDescriptor::new(w)
    }
}

impl From<ShapeDescriptor> for [f64; 9] {
    fn from(d: ShapeDescriptor) -> Self {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Tilt of the principal axis from the image vertical, positive when the
    /// top of the object leans toward smaller u.
    pub angle_deg: f64,
    pub rejected: bool,
}

impl RotationEstimate {
    pub const NONE: RotationEstimate = RotationEstimate {
        angle_deg: 0.0,
        rejected: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeFilterConfig {
    /// Gain of the similarity sigmoid.
    pub sigmoid_gain: f64,
    /// Mass added to every bin before computing KL divergence.
    pub kl_smoothing: f64,
    pub benchmark_min_samples: usize,
}

impl Default for ShapeFilterConfig {
    fn default() -> Self {
        Self {
            sigmoid_gain: 1.0,
            kl_smoothing: 1e-6,
            benchmark_min_samples: 10,
        }
    }
}

impl ShapeFilterConfig {
    pub fn validate(&self) -> Result<(), ShapeError> {
        if !(self.sigmoid_gain > 0.0 && self.sigmoid_gain.is_finite()) {
            return Err(ShapeError::InvalidConfig("sigmoid_gain must be positive".into()));
        }
        if !(self.kl_smoothing > 0.0 && self.kl_smoothing.is_finite()) {
            return Err(ShapeError::InvalidConfig("kl_smoothing must be positive".into()));
        }
        Ok(())
    }
}

fn centroid(points: &[Point2<f64>]) -> Point2<f64> {
    let n = points.len() as f64;
    let (su, sv) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    Point2::new(su / n, sv / n)
}

fn distinct_count_at_least_two(points: &[Point2<f64>]) -> bool {
    points.iter().any(|p| *p != points[0])
}

/// Tilt of the first principal component relative to the image vertical,
/// mapped to (-90, 90]. Tilts beyond [`MAX_TILT_DEG`] are marked rejected.
pub fn principal_axis_angle(points: &[Point2<f64>]) -> Result<RotationEstimate, ShapeError> {
    if points.len() < 2 || !distinct_count_at_least_two(points) {
        return Err(ShapeError::DegenerateCluster("fewer than two distinct points"));
    }
    let c = centroid(points);
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (l1, l2) = (eig.eigenvalues[major], eig.eigenvalues[minor]);
    // Isotropic footprint: no preferred direction.
    if l1 - l2 <= 1e-12 * (l1 + l2).max(f64::MIN_POSITIVE) {
        return Ok(RotationEstimate::NONE);
    }
    let axis = eig.eigenvectors.column(major);
    let mut angle = (-axis[0]).atan2(axis[1]).to_degrees();
    if angle > 90.0 {
        angle -= 180.0;
    } else if angle <= -90.0 {
        angle += 180.0;
    }
    if angle.abs() > MAX_TILT_DEG + TILT_SLACK_DEG {
        return Ok(RotationEstimate {
            angle_deg: angle,
            rejected: true,
        });
    }
    Ok(RotationEstimate {
        angle_deg: angle.clamp(-MAX_TILT_DEG, MAX_TILT_DEG),
        rejected: false,
    })
}

/// Rotates the points by `-angle` about their centroid; identity for rejected
/// estimates.
pub fn derotate(points: &[Point2<f64>], est: &RotationEstimate) -> Vec<Point2<f64>> {
    if est.rejected || est.angle_deg == 0.0 || points.is_empty() {
        return points.to_vec();
    }
    let c = centroid(points);
    let (s, co) = (-est.angle_deg).to_radians().sin_cos();
    points
        .iter()
        .map(|p| {
            let d = p - c;
            Point2::new(c.x + co * d.x - s * d.y, c.y + s * d.x + co * d.y)
        })
        .collect()
}

fn cell_index(x: f64, lo: f64, extent: f64) -> usize {
    if extent <= 0.0 {
        return 1;
    }
    let t = ((x - lo) / extent * 3.0).floor();
    if t < 0.0 {
        0
    } else {
        (t as usize).min(2)
    }
}

/// 3x3 occupancy over the bounding rectangle. Cells are half-open except the
/// last row and column; a zero-extent axis puts every point in its middle cell.
pub fn compute_descriptor(points: &[Point2<f64>]) -> Result<ShapeDescriptor, ShapeError> {
    if points.is_empty() {
        return Err(ShapeError::DegenerateCluster("no points"));
    }
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        u0 = u0.min(p.x);
        u1 = u1.max(p.x);
        v0 = v0.min(p.y);
        v1 = v1.max(p.y);
    }
    let mut counts = [0usize; 9];
    for p in points {
        let col = cell_index(p.x, u0, u1 - u0);
        let row = cell_index(p.y, v0, v1 - v0);
        counts[row * 3 + col] += 1;
    }
    let n = points.len() as f64;
    Ok(ShapeDescriptor(counts.map(|c| c as f64 / n)))
}

fn smooth(d: &ShapeDescriptor, s: f64) -> [f64; 9] {
    let norm = 1.0 + 9.0 * s;
    d.0.map(|w| (w + s) / norm)
}

/// `D_KL(P || Q)` in nats after additive smoothing of both distributions.
pub fn kl_divergence(p: &ShapeDescriptor, q: &ShapeDescriptor, smoothing: f64) -> f64 {
    let ps = smooth(p, smoothing);
    let qs = smooth(q, smoothing);
    let d: f64 = ps
        .iter()
        .zip(&qs)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    d.max(0.0)
}

/// Maps a divergence to `(0, 1]`: `2 / (1 + exp(k d))`.
pub fn similarity_score(d_kl: f64, gain: f64) -> f64 {
    2.0 / (1.0 + (gain * d_kl).exp())
}

/// Arithmetic mean per bin, renormalised.
pub fn build_benchmark(descriptors: &[ShapeDescriptor], min_samples: usize) -> Result<ShapeDescriptor, ShapeError> {
    if descriptors.is_empty() {
        return Err(ShapeError::EmptyInput);
    }
    if descriptors.len() < min_samples {
        warn!(
            "benchmark built from {} samples (configured minimum {})",
            descriptors.len(),
            min_samples
        );
    }
    let mut sum = [0.0; 9];
    for d in descriptors {
        for (s, w) in sum.iter_mut().zip(&d.0) {
            *s += w;
        }
    }
    let total: f64 = sum.iter().sum();
    Ok(ShapeDescriptor(sum.map(|s| s / total)))
}

/// Per-class benchmark descriptors. On disk this is a JSON object mapping a
/// class name to its nine weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkShapeRegistry {
    pub shapes: BTreeMap<ClassLabel, ShapeDescriptor>,
    pub sample_count: BTreeMap<ClassLabel, usize>,
}

impl BenchmarkShapeRegistry {
    pub fn get(&self, class: ClassLabel) -> Option<&ShapeDescriptor> {
        self.shapes.get(&class)
    }

    pub fn insert(&mut self, class: ClassLabel, shape: ShapeDescriptor, samples: usize) {
        self.shapes.insert(class, shape);
        self.sample_count.insert(class, samples);
    }

    /// Averages labeled footprints per class.
    pub fn from_labeled<'a>(
        clusters: impl IntoIterator<Item = (ClassLabel, &'a [Point2<f64>])>,
        cfg: &ShapeFilterConfig,
    ) -> Result<Self, ShapeError> {
        let mut by_class: BTreeMap<ClassLabel, Vec<ShapeDescriptor>> = BTreeMap::new();
        for (class, points) in clusters {
            let footprint = upright_footprint(points);
            if let Ok(d) = compute_descriptor(&footprint) {
                by_class.entry(class).or_default().push(d);
            }
        }
        let mut reg = Self::default();
        for (class, ds) in by_class {
            reg.insert(class, build_benchmark(&ds, cfg.benchmark_min_samples)?, ds.len());
        }
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, [f64; 9]> = self.shapes.iter().map(|(c, d)| (c.as_str(), d.0)).collect();
        serde_json::to_string_pretty(&map).expect("registry serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ShapeError> {
        let map: BTreeMap<ClassLabel, ShapeDescriptor> = serde_json::from_str(text).map_err(|e| ShapeError::Registry {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        Ok(Self {
            shapes: map,
            sample_count: BTreeMap::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ShapeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ShapeError::Registry {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            ShapeError::Registry { message, .. } => ShapeError::Registry {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Footprint after constrained de-rotation (unchanged if the estimate fails
/// or is rejected).
pub fn upright_footprint(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    match principal_axis_angle(points) {
        Ok(est) => derotate(points, &est),
        Err(_) => points.to_vec(),
    }
}

/// Per-candidate shape evaluation, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateScore {
    pub center_range: f64,
    pub count: usize,
    /// Similarity before de-rotation.
    pub pre_rotation_score: f64,
    /// Similarity after de-rotation; the selection criterion.
    pub post_rotation_score: f64,
    pub kl_divergence: f64,
    pub rotation: Option<RotationEstimate>,
}

/// A candidate cluster paired with its members' pixel coordinates.
#[derive(Debug, Clone)]
pub struct ShapeCandidate<'a> {
    pub cluster: &'a CandidateCluster,
    pub pixels: Vec<Point2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ShapeSelection {
    pub index: usize,
    pub score: f64,
    pub scores: Vec<CandidateScore>,
}

fn score_candidate(c: &ShapeCandidate<'_>, benchmark: &ShapeDescriptor, cfg: &ShapeFilterConfig) -> CandidateScore {
    let pre = compute_descriptor(&c.pixels)
        .map(|d| similarity_score(kl_divergence(&d, benchmark, cfg.kl_smoothing), cfg.sigmoid_gain))
        .unwrap_or(0.0);
    let (kl, rotation) = match principal_axis_angle(&c.pixels) {
        Ok(est) => {
            let upright = derotate(&c.pixels, &est);
            let kl = compute_descriptor(&upright)
                .map(|d| kl_divergence(&d, benchmark, cfg.kl_smoothing))
                .unwrap_or(f64::INFINITY);
            (kl, Some(est))
        }
        Err(_) => (f64::INFINITY, None),
    };
    let post = if kl.is_finite() { similarity_score(kl, cfg.sigmoid_gain) } else { 0.0 };
    CandidateScore {
        center_range: c.cluster.center_range,
        count: c.cluster.count,
        pre_rotation_score: pre,
        post_rotation_score: post,
        kl_divergence: kl,
        rotation,
    }
}

/// Picks the candidate most similar to `benchmark`. A single candidate is
/// returned unconditionally. The comparison is made on the divergence itself
/// (smaller wins), which orders candidates exactly as the similarity score
/// does for any gain; ties go to the closer cluster.
pub fn select_cluster(candidates: &[ShapeCandidate<'_>], benchmark: &ShapeDescriptor, cfg: &ShapeFilterConfig) -> Option<ShapeSelection> {
    if candidates.is_empty() {
        return None;
    }
    let scores: Vec<CandidateScore> = candidates.iter().map(|c| score_candidate(c, benchmark, cfg)).collect();
    let index = if candidates.len() == 1 {
        0
    } else {
        (0..scores.len())
            .min_by(|&a, &b| {
                scores[a]
                    .kl_divergence
                    .total_cmp(&scores[b].kl_divergence)
                    .then(scores[a].center_range.total_cmp(&scores[b].center_range))
                    .then(a.cmp(&b))
            })
            .expect("non-empty")
    };
    Some(ShapeSelection {
        index,
        score: scores[index].post_rotation_score,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Filled ellipse, mirrored about the vertical axis so the sample covariance
    /// has no cross term.
    fn upright_ellipse(n: usize, a: f64, b: f64, seed: u64) -> Vec<Point2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(2 * n);
        while pts.len() < 2 * n {
            let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if x * x + y * y <= 1.0 {
                pts.push(Point2::new(100.0 + a * x, 200.0 + b * y));
                pts.push(Point2::new(100.0 - a * x, 200.0 + b * y));
            }
        }
        pts
    }

    fn rotate(points: &[Point2<f64>], deg: f64) -> Vec<Point2<f64>> {
        let c = centroid(points);
        let (s, co) = deg.to_radians().sin_cos();
        points
            .iter()
            .map(|p| {
                let d = p - c;
                Point2::new(c.x + co * d.x - s * d.y, c.y + s * d.x + co * d.y)
            })
            .collect()
    }

    #[test]
    fn vertical_ellipse_has_zero_tilt() {
        let est = principal_axis_angle(&upright_ellipse(200, 10.0, 40.0, 1)).unwrap();
        assert!(est.angle_deg.abs() < 1e-9 && !est.rejected);
    }

    #[test]
    fn rotated_ellipse_tilt() {
        let pts = rotate(&upright_ellipse(200, 10.0, 40.0, 2), 20.0);
        let est = principal_axis_angle(&pts).unwrap();
        assert!((est.angle_deg - 20.0).abs() < 1.0, "{}", est.angle_deg);
        let pts = rotate(&upright_ellipse(200, 10.0, 40.0, 2), -35.0);
        assert!((principal_axis_angle(&pts).unwrap().angle_deg + 35.0).abs() < 1.0);
    }

    #[test]
    fn steep_tilt_rejected() {
        let pts = rotate(&upright_ellipse(200, 10.0, 40.0, 3), 60.0);
        let est = principal_axis_angle(&pts).unwrap();
        assert!(est.rejected);
        assert_eq!(derotate(&pts, &est), pts);
    }

    #[test]
    fn degenerate_footprints() {
        assert!(principal_axis_angle(&[Point2::new(1.0, 1.0)]).is_err());
        assert!(principal_axis_angle(&[Point2::new(1.0, 1.0); 4]).is_err());
        assert!(compute_descriptor(&[]).is_err());
        let d = compute_descriptor(&[Point2::new(3.0, 3.0); 4]).unwrap();
        assert_eq!(d, ShapeDescriptor::one_hot(4));
    }

    #[test]
    fn derotation_restores_descriptor() {
        let upright = upright_ellipse(300, 12.0, 45.0, 4);
        let reference = compute_descriptor(&upright).unwrap();
        let rotated = rotate(&upright, 20.0);
        let restored = derotate(&rotated, &principal_axis_angle(&rotated).unwrap());
        assert!(compute_descriptor(&restored).unwrap().l1_distance(&reference) <= 0.05);
        assert_eq!(derotate(&upright, &RotationEstimate::NONE), upright);
    }

    #[test]
    fn descriptor_cells() {
        let centres: Vec<_> = (0..9).map(|i| Point2::new((i % 3) as f64, (i / 3) as f64)).collect();
        assert_eq!(compute_descriptor(&centres).unwrap(), ShapeDescriptor::uniform());
        let doubled: Vec<_> = centres.iter().chain(&centres).copied().collect();
        assert_eq!(compute_descriptor(&doubled).unwrap(), ShapeDescriptor::uniform());
        // All points in the top-left cell of a wide rectangle.
        let mut pts = vec![Point2::new(0.0, 0.0), Point2::new(0.1, 0.1), Point2::new(0.2, 0.0)];
        pts.push(Point2::new(0.2, 0.2));
        let d = compute_descriptor(&[pts.clone(), vec![Point2::new(3.0, 3.0)]].concat()).unwrap();
        assert!((d.weights()[0] - 0.8).abs() < 1e-12 && (d.weights()[8] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn kl_values() {
        let p = ShapeDescriptor::uniform();
        assert!(kl_divergence(&p, &p, 1e-6).abs() < 1e-12);
        let p = ShapeDescriptor::new([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let q = ShapeDescriptor::new([0.25, 0.75, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q, 1e-6) - expected).abs() < 1e-4);
        assert!((expected - 0.1438).abs() < 1e-4);
        let d = kl_divergence(&ShapeDescriptor::one_hot(0), &ShapeDescriptor::one_hot(8), 1e-6);
        assert!(d.is_finite() && d > 10.0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(similarity_score(0.0, 1.0), 1.0);
        assert!((similarity_score(3f64.ln(), 1.0) - 0.5).abs() < 1e-12);
        let mut prev = 1.0;
        for i in 1..50 {
            let s = similarity_score(i as f64 * 0.5, 1.0);
            assert!(s < prev && s > 0.0);
            prev = s;
        }
        assert!(similarity_score(1e6, 1.0) < 1e-12);
    }

    #[test]
    fn benchmark_average() {
        let d = ShapeDescriptor::new([0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let avg = build_benchmark(&[d; 4], 1).unwrap();
        assert!(avg.l1_distance(&d) < 1e-12);
        let avg = build_benchmark(&[ShapeDescriptor::one_hot(0), ShapeDescriptor::one_hot(1)], 1).unwrap();
        assert_eq!(avg.weights()[..2], [0.5, 0.5]);
        assert!(matches!(build_benchmark(&[], 1), Err(ShapeError::EmptyInput)));
    }

    #[test]
    fn descriptor_validation() {
        assert!(ShapeDescriptor::new([0.2; 9]).is_err());
        assert!(ShapeDescriptor::new([-0.1, 1.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let text = "[1.0, 0, 0, 0, 0, 0, 0, 0, 0.5]";
        assert!(serde_json::from_str::<ShapeDescriptor>(text).is_err());
    }

    #[test]
    fn registry_json_round_trip() {
        let mut reg = BenchmarkShapeRegistry::default();
        reg.insert(ClassLabel::Pedestrian, ShapeDescriptor::uniform(), 3);
        reg.insert(ClassLabel::Car, ShapeDescriptor::one_hot(4), 3);
        let back = BenchmarkShapeRegistry::from_json(&reg.to_json()).unwrap();
        assert_eq!(back.shapes, reg.shapes);
    }

    fn cluster(center: f64, n: usize) -> CandidateCluster {
        CandidateCluster {
            member_indices: (0..n).collect(),
            center_range: center,
            count: n,
        }
    }

    #[test]
    fn selection_rules() {
        let cfg = ShapeFilterConfig::default();
        let tall = upright_ellipse(100, 8.0, 40.0, 5);
        let wide = upright_ellipse(100, 60.0, 15.0, 6);
        let benchmark = compute_descriptor(&upright_ellipse(400, 9.0, 42.0, 7)).unwrap();

        let only = cluster(30.0, wide.len());
        let sel = select_cluster(&[ShapeCandidate { cluster: &only, pixels: wide.clone() }], &benchmark, &cfg).unwrap();
        assert_eq!(sel.index, 0);

        let (c0, c1, c2) = (cluster(20.0, wide.len()), cluster(10.0, tall.len()), cluster(25.0, wide.len()));
        let cands = [
            ShapeCandidate { cluster: &c0, pixels: wide.clone() },
            ShapeCandidate { cluster: &c1, pixels: tall.clone() },
            ShapeCandidate { cluster: &c2, pixels: wide.clone() },
        ];
        let sel = select_cluster(&cands, &benchmark, &cfg).unwrap();
        assert_eq!(sel.index, 1);
        assert!(sel.score > sel.scores[0].post_rotation_score);

        let (a, b) = (cluster(15.0, tall.len()), cluster(12.0, tall.len()));
        let twins = [
            ShapeCandidate { cluster: &a, pixels: tall.clone() },
            ShapeCandidate { cluster: &b, pixels: tall.clone() },
        ];
        assert_eq!(select_cluster(&twins, &benchmark, &cfg).unwrap().index, 1);
        assert!(select_cluster(&[], &benchmark, &cfg).is_none());
    }

    proptest! {
        #[test]
        fn descriptor_scale_translation_invariance(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..80),
            scale in 0.1f64..10.0, du in -100.0f64..100.0, dv in -100.0f64..100.0,
        ) {
            // Use dyadic values so scaling and shifting are exact in floating point.
            let pts: Vec<_> = pts.iter().map(|&(u, v)| Point2::new((u * 8.0).round() / 8.0, (v * 8.0).round() / 8.0)).collect();
            let scale = (scale * 4.0).round().max(1.0) / 4.0;
            let (du, dv) = (du.round(), dv.round());
            let moved: Vec<_> = pts.iter().map(|p| Point2::new(p.x * scale + du, p.y * scale + dv)).collect();
            let a = compute_descriptor(&pts).unwrap();
            let b = compute_descriptor(&moved).unwrap();
            prop_assert!(a.l1_distance(&b) < 1e-12);
            let doubled: Vec<_> = pts.iter().chain(&pts).copied().collect();
            prop_assert!(compute_descriptor(&doubled).unwrap().l1_distance(&a) < 1e-12);
        }

        #[test]
        fn kl_nonnegative(a in proptest::array::uniform9(0.0f64..1.0), b in proptest::array::uniform9(0.0f64..1.0)) {
            let norm = |w: [f64; 9]| {
                let s: f64 = w.iter().sum::<f64>() + 1e-9;
                let mut out = w.map(|x| x / s);
                let rest: f64 = out[1..].iter().sum();
                out[0] = 1.0 - rest;
                ShapeDescriptor::new(out.map(|x| x.max(0.0))).unwrap_or(ShapeDescriptor::uniform())
            };
            let (p, q) = (norm(a), norm(b));
            prop_assert!(kl_divergence(&p, &q, 1e-6) >= 0.0);
            prop_assert!(kl_divergence(&p, &p, 1e-6).abs() < 1e-12);
        }

        #[test]
        fn selection_invariant_to_gain(seed in 0u64..500, gain in 0.05f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let benchmark = compute_descriptor(&upright_ellipse(200, 9.0, 40.0, seed)).unwrap();
            let clusters: Vec<_> = (0..4).map(|i| cluster(10.0 + i as f64, 50)).collect();
            let pixels: Vec<Vec<Point2<f64>>> = (0..4)
                .map(|i| upright_ellipse(50, rng.random_range(5.0..60.0), rng.random_range(5.0..60.0), seed * 10 + i))
                .collect();
            let cands: Vec<_> = clusters.iter().zip(&pixels).map(|(c, p)| ShapeCandidate { cluster: c, pixels: p.clone() }).collect();
            let base = select_cluster(&cands, &benchmark, &ShapeFilterConfig::default()).unwrap();
            let other = select_cluster(&cands, &benchmark, &ShapeFilterConfig { sigmoid_gain: gain, ..Default::default() }).unwrap();
            prop_assert_eq!(base.index, other.index);
            let argmin = (0..4).min_by(|&a, &b| base.scores[a].kl_divergence.total_cmp(&base.scores[b].kl_divergence)).unwrap();
            prop_assert_eq!(base.scores[base.index].kl_divergence, base.scores[argmin].kl_divergence);
        }
    }
}
