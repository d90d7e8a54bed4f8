//! Ground-plane removal with bounded RANSAC plane fitting.
//!
//! The cloud is first cropped to a forward sector around the sensor, then
//! `required_trials` random subsets are fitted with a total-least-squares
//! plane. Trials whose normal leaves the upward cone are discarded, the
//! survivor with the most inliers is refit on its consensus set, and the
//! result is accepted only when its inlier count reaches the configured floor.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::LidarPoint;

#[derive(Debug, Error, PartialEq)]
pub enum GroundError {
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} points for plane fitting, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("no plane reached the inlier floor of {floor} (best had {best})")]
    NoAcceptablePlane { floor: usize, best: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacPlaneConfig {
    /// Probability that at least one trial is outlier free.
    pub p: f64,
    /// Expected outlier fraction.
    pub eps: f64,
    /// Points drawn per trial.
    pub n_sample: usize,
    /// Maximum point-to-plane distance (m).
    pub delta: f64,
    /// Forward extent of the crop sector (m).
    pub boundary_length: f64,
    /// Lateral extent of the crop sector (m), centred on the sensor.
    pub boundary_width: f64,
    /// Maximum angle between the plane normal and +Z (degrees).
    pub normal_cone_deg: f64,
    pub rng_seed: u64,
}

impl Default for RansacPlaneConfig {
    fn default() -> Self {
        Self {
            p: 0.99,
            eps: 0.2,
            n_sample: 6,
            delta: 0.2,
            boundary_length: 70.0,
            boundary_width: 30.0,
            normal_cone_deg: 30.0,
            rng_seed: 0,
        }
    }
}

impl RansacPlaneConfig {
    pub fn validate(&self) -> Result<(), GroundError> {
        let bad = |m: &str| Err(GroundError::InvalidConfig(m.to_string()));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p must lie in (0, 1)");
        }
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return bad("eps must lie in [0, 1)");
        }
        if self.n_sample < 3 {
            return bad("n_sample must be at least 3");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.boundary_length > 0.0 && self.boundary_width > 0.0) {
            return bad("boundary extents must be positive");
        }
        if !(self.normal_cone_deg > 0.0 && self.normal_cone_deg <= 90.0) {
            return bad("normal_cone_deg must lie in (0, 90]");
        }
        Ok(())
    }
}

/// Plane `normal · x = offset` with a unit, upward-facing normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_count: usize,
}

impl GroundPlaneModel {
    pub fn distance(&self, p: &LidarPoint) -> f64 {
        (self.normal.dot(&p.coords()) - self.offset).abs()
    }

    pub fn tilt_deg(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// Whether a point lies inside the forward crop sector: `x ∈ [0, length]`,
/// `|y| ≤ width / 2`.
pub fn in_boundary(p: &LidarPoint, cfg: &RansacPlaneConfig) -> bool {
    p.x >= 0.0 && p.x <= cfg.boundary_length && p.y.abs() <= cfg.boundary_width / 2.0
}

/// Indices of the points kept by [`crop_to_boundary`].
pub fn crop_indices(cloud: &[LidarPoint], cfg: &RansacPlaneConfig) -> Vec<usize> {
    (0..cloud.len()).filter(|&i| in_boundary(&cloud[i], cfg)).collect()
}

pub fn crop_to_boundary(cloud: &[LidarPoint], cfg: &RansacPlaneConfig) -> Vec<LidarPoint> {
    cloud.iter().copied().filter(|p| in_boundary(p, cfg)).collect()
}

/// Number of trials so that, with probability `p`, at least one sample of `n`
/// points is outlier free when a fraction `eps` of points are outliers.
pub fn required_trials(p: f64, eps: f64, n: usize) -> Result<usize, GroundError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GroundError::InvalidConfig(format!("p={p} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(GroundError::InvalidConfig(format!("eps={eps} must lie in [0, 1)")));
    }
    if n == 0 {
        return Err(GroundError::InvalidConfig("n must be at least 1".into()));
    }
    if eps == 0.0 {
        return Ok(1);
    }
    let clean = (1.0 - eps).powi(n as i32);
    let denom = (1.0 - clean).ln();
    if !(denom < 0.0) || !denom.is_finite() {
        return Err(GroundError::InvalidConfig(format!(
            "trial count undefined for eps={eps}, n={n}"
        )));
    }
    let trials = ((1.0 - p).ln() / denom).ceil();
    Ok((trials as usize).max(1))
}

/// Minimum consensus size `floor((1 - eps) * total)`.
pub fn min_inlier_count(eps: f64, total: usize) -> usize {
    // Nudge before flooring so products such as 0.8 * 1000 that land a few ulps
    // below an integer are not truncated.
    let raw = (1.0 - eps) * total as f64;
    (raw + 1e-9 * raw.abs().max(1.0)).floor().max(0.0) as usize
}

/// Total-least-squares plane through `points`: returns (unit normal with
/// non-negative z, offset), or `None` when the points are (near) collinear.
fn fit_plane<'a>(points: impl Iterator<Item = &'a LidarPoint> + Clone) -> Option<(Vector3<f64>, f64)> {
    let mut n = 0usize;
    let mut centroid = Vector3::zeros();
    for p in points.clone() {
        centroid += p.coords();
        n += 1;
    }
    if n < 3 {
        return None;
    }
    centroid /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords() - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle) = (order[0], order[1]);
    let scale = eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE);
    if eig.eigenvalues[middle] <= 1e-12 * scale {
        return None;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
    normal.normalize_mut();
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some((normal, normal.dot(&centroid)))
}

fn score(cloud: &[LidarPoint], normal: &Vector3<f64>, offset: f64, delta: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sq = 0.0;
    for p in cloud {
        let d = normal.dot(&p.coords()) - offset;
        if d.abs() <= delta {
            count += 1;
            sq += d * d;
        }
    }
    let rms = if count > 0 { (sq / count as f64).sqrt() } else { f64::INFINITY };
    (count, rms)
}

/// Fits the ground plane of an (already cropped) cloud.
pub fn fit_ground_plane(cloud: &[LidarPoint], cfg: &RansacPlaneConfig) -> Result<GroundPlaneModel, GroundError> {
    cfg.validate()?;
    if cloud.len() < cfg.n_sample {
        return Err(GroundError::InsufficientPoints {
            needed: cfg.n_sample,
            got: cloud.len(),
        });
    }
    let trials = required_trials(cfg.p, cfg.eps, cfg.n_sample)?;
    let cos_cone = cfg.normal_cone_deg.to_radians().cos();
    let floor = min_inlier_count(cfg.eps, cloud.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    // (inliers, rms, normal, offset)
    let mut best: Option<(usize, f64, Vector3<f64>, f64)> = None;
    for _ in 0..trials {
        let idx = sample(&mut rng, cloud.len(), cfg.n_sample).into_vec();
        let Some((normal, offset)) = fit_plane(idx.iter().map(|&i| &cloud[i])) else {
            continue;
        };
        if normal.z < cos_cone {
            continue;
        }
        let (count, rms) = score(cloud, &normal, offset, cfg.delta);
        let better = match &best {
            None => true,
            Some((bc, brms, _, _)) => count > *bc || (count == *bc && rms < *brms),
        };
        if better {
            best = Some((count, rms, normal, offset));
        }
    }

    let Some((count, _, normal, offset)) = best else {
        return Err(GroundError::NoAcceptablePlane { floor, best: 0 });
    };

    // Refit on the consensus set; keep the refit only if it stays in the cone
    // and does not lose support.
    let inliers = cloud.iter().filter(|p| (normal.dot(&p.coords()) - offset).abs() <= cfg.delta);
    let (mut normal, mut offset, mut count) = (normal, offset, count);
    if let Some((rn, ro)) = fit_plane(inliers) {
        if rn.z >= cos_cone {
            let (rc, _) = score(cloud, &rn, ro, cfg.delta);
            if rc >= count {
                normal = rn;
                offset = ro;
                count = rc;
            }
        }
    }

    if count < floor {
        return Err(GroundError::NoAcceptablePlane { floor, best: count });
    }
    Ok(GroundPlaneModel {
        normal,
        offset,
        inlier_count: count,
    })
}

/// True when the point lies within `delta` of the plane.
pub fn is_ground(p: &LidarPoint, model: &GroundPlaneModel, delta: f64) -> bool {
    model.distance(p) <= delta
}

/// Splits indices into (kept, removed) by the ground predicate.
pub fn partition_ground(cloud: &[LidarPoint], model: &GroundPlaneModel, delta: f64) -> (Vec<usize>, Vec<usize>) {
    (0..cloud.len()).partition(|&i| !is_ground(&cloud[i], model, delta))
}

/// Returns the cloud without its ground points.
pub fn remove_ground(cloud: &[LidarPoint], model: &GroundPlaneModel, delta: f64) -> Vec<LidarPoint> {
    cloud.iter().copied().filter(|p| !is_ground(p, model, delta)).collect()
}
