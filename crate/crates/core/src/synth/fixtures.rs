use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{class_template, direction, PlacedShape};
use super::render::cast;
use super::{
    generate_scene, inject_mapping_errors, render_frame, ErrorModel, LidarModel, ObjectSpec, SceneSpec, Trajectory,
};
use crate::aoi::{enlarge_aoi, ClassLabel, EnlargeRatios};
use crate::calib::{CalibrationPair, LidarPoint};
use crate::ground::RansacPlaneConfig;
use crate::localize::range_of;
use crate::shape::{BenchmarkShapeRegistry, ShapeError, ShapeFilterConfig};

/// Target object id in [`overtaking_fixture`].
pub const TARGET_ID: u64 = 1;

fn object(id: u64, class: ClassLabel, dims: (f64, f64, f64), trajectory: Trajectory, detect: bool) -> ObjectSpec {
    ObjectSpec {
        object_id: id,
        class,
        length: dims.0,
        width: dims.1,
        height: dims.2,
        yaw_deg: 0.0,
        trajectory,
        detect,
    }
}

const CAR: (f64, f64, f64) = (4.5, 1.8, 1.5);
const PEDESTRIAN: (f64, f64, f64) = (0.35, 0.55, 1.75);
const ESCOOTER: (f64, f64, f64) = (1.2, 0.55, 1.85);

/// A car (the ego sensor) overtaking an e-scooter rider on its right over
/// 5.2 s: ego at 11.2 m/s, rider at 7.6 m/s starting 28 m ahead and 3 m to
/// the side. Parked cars, pedestrians, poles, trees and a building line the
/// road; only the rider is reported by the detector.
pub fn overtaking_fixture(seed: u64) -> SceneSpec {
    let at = |x: f64, y: f64| Trajectory::Static { x, y };
    let mut objects = vec![object(
        TARGET_ID,
        ClassLabel::EscooterRider,
        ESCOOTER,
        Trajectory::Linear { x0: 28.0, y0: -3.0, vx: 7.6, vy: 0.0 },
        true,
    )];
    let mut id = 10;
    let mut push = |class, dims, x: f64, y: f64| {
        objects.push(object(id, class, dims, at(x, y), false));
        id += 1;
    };
    for x in [40.0, 55.0, 72.0, 86.0, 101.0] {
        push(ClassLabel::Car, CAR, x, -10.0);
    }
    for (x, y) in [(48.0, -12.5), (66.0, -13.0), (93.0, -12.0), (60.0, 10.5)] {
        push(ClassLabel::Pedestrian, PEDESTRIAN, x, y);
    }
    for x in [45.0, 75.0, 105.0] {
        push(ClassLabel::Other, (0.3, 0.3, 5.0), x, -8.0);
    }
    for x in [35.0, 52.0, 70.0, 88.0] {
        push(ClassLabel::Other, (0.9, 0.9, 4.5), x, 12.0);
    }
    push(ClassLabel::Other, (170.0, 2.0, 9.0), 125.0, -17.0);
    SceneSpec {
        duration_s: 5.2,
        frame_rate: 10.0,
        ego: Trajectory::Linear { x0: 0.0, y0: 0.0, vx: 11.2, vy: 0.0 },
        lidar: LidarModel::default(),
        calibration: None,
        objects,
        ground_noise_sigma: 0.02,
        background_clutter: 150,
        error_model: ErrorModel::default(),
        rng_seed: seed,
    }
}

/// A labeled 2-D footprint, as stored in cluster files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCluster {
    pub class: ClassLabel,
    pub points: Vec<[f64; 2]>,
}

impl LabeledCluster {
    pub fn pixels(&self) -> Vec<Point2<f64>> {
        self.points.iter().map(|p| Point2::new(p[0], p[1])).collect()
    }
}

/// Casts rays only toward one isolated object and returns its returns.
fn isolated_returns(shape: &PlacedShape, lidar: &LidarModel, rng: &mut ChaCha8Rng) -> Vec<LidarPoint> {
    let Some(b) = shape.angular_bounds() else {
        return Vec::new();
    };
    let (s_lo, s_hi) = (b.el_min.sin(), b.el_max.sin());
    let rays = (lidar.density_per_sr * (b.az_max - b.az_min) * (s_hi - s_lo)).round() as usize;
    let shapes = [(shape.clone(), None)];
    (0..rays)
        .filter_map(|_| {
            let az = rng.random_range(b.az_min..=b.az_max);
            let el = rng.random_range(s_lo..=s_hi).asin();
            cast(&direction(az, el), az, el, &shapes, None, lidar.max_range_m)
        })
        .map(|h| LidarPoint::new(h.point.x, h.point.y, h.point.z))
        .collect()
}

/// Whether a return survives ground removal with the default band, so that
/// benchmark and trial footprints look like the pipeline's clusters.
fn above_ground_band(p: &LidarPoint, lidar: &LidarModel) -> bool {
    p.z > -lidar.height_m + RansacPlaneConfig::default().delta
}

fn jittered(dims: (f64, f64, f64), rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let mut s = || rng.random_range(0.9..1.1);
    (dims.0 * s(), dims.1 * s(), dims.2 * s())
}

/// Footprints of isolated objects at random poses, `per_class` for each of
/// car, pedestrian and e-scooter rider.
pub fn benchmark_clusters(seed: u64, per_class: usize) -> Vec<LabeledCluster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lidar = LidarModel::default();
    let calib = CalibrationPair::default_forward();
    let mut out = Vec::new();
    for (class, dims) in [
        (ClassLabel::Car, CAR),
        (ClassLabel::Pedestrian, PEDESTRIAN),
        (ClassLabel::EscooterRider, ESCOOTER),
    ] {
        while out.iter().filter(|c: &&LabeledCluster| c.class == class).count() < per_class {
            let (l, w, h) = jittered(dims, &mut rng);
            let x = rng.random_range(8.0..35.0);
            let y = rng.random_range(-0.1..0.1) * x;
            let yaw = match class {
                ClassLabel::Pedestrian => rng.random_range(0.0..360.0),
                _ => rng.random_range(-15.0..15.0),
            };
            let shape = PlacedShape::new(0, class_template(class, l, w, h), Vector3::new(x, y, -lidar.height_m), yaw);
            let points: Vec<[f64; 2]> = isolated_returns(&shape, &lidar, &mut rng)
                .iter()
                .filter(|p| above_ground_band(p, &lidar))
                .filter_map(|p| calib.project_point(p))
                .filter(|p| calib.intrinsics.contains(p.u, p.v))
                .map(|p| [p.u, p.v])
                .collect();
            if points.len() >= 10 {
                out.push(LabeledCluster { class, points });
            }
        }
    }
    out
}

/// Benchmark descriptors averaged over [`benchmark_clusters`].
pub fn benchmark_registry(seed: u64, per_class: usize) -> Result<BenchmarkShapeRegistry, ShapeError> {
    let clusters = benchmark_clusters(seed, per_class);
    let pixels: Vec<(ClassLabel, Vec<Point2<f64>>)> = clusters.iter().map(|c| (c.class, c.pixels())).collect();
    BenchmarkShapeRegistry::from_labeled(pixels.iter().map(|(c, p)| (*c, p.as_slice())), &ShapeFilterConfig::default())
}

/// Candidate footprints inside one pedestrian's enlarged AOI.
#[derive(Debug, Clone)]
pub struct ShapeTrial {
    /// Position of the pedestrian in `candidates`.
    pub target: usize,
    /// `(median range, mapped pixels)` per candidate.
    pub candidates: Vec<(f64, Vec<Point2<f64>>)>,
}

/// A pedestrian with two cars behind it, placed so that both cars show up in
/// the pedestrian's enlarged AOI. Pixels carry per-point mapping jitter.
pub fn shape_trial(seed: u64) -> ShapeTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_points = 5;
    loop {
        let px = rng.random_range(8.0..20.0);
        let py = rng.random_range(-2.0..2.0);
        let mut ped = object(1, ClassLabel::Pedestrian, jittered(PEDESTRIAN, &mut rng), Trajectory::Static { x: px, y: py }, true);
        // Walking along the road, toward or away from the sensor.
        let heading = if rng.random::<bool>() { 0.0 } else { 180.0 };
        ped.yaw_deg = heading + rng.random_range(-30.0..30.0);
        let mut objects = vec![ped];
        for (id, (lo, hi)) in [(2, (4.0, 12.0)), (3, (14.0, 28.0))] {
            let x = px + rng.random_range(lo..hi);
            let y = py * x / px + rng.random_range(-1.0..1.0);
            let mut car = object(id, ClassLabel::Car, jittered(CAR, &mut rng), Trajectory::Static { x, y }, false);
            car.yaw_deg = rng.random_range(0.0..180.0);
            objects.push(car);
        }
        let spec = SceneSpec {
            duration_s: 0.1,
            frame_rate: 10.0,
            ego: Trajectory::default(),
            // Sweep only the sector around the targets.
            lidar: LidarModel {
                azimuth_half_deg: 30.0,
                ..LidarModel::default()
            },
            calibration: None,
            objects,
            ground_noise_sigma: 0.02,
            background_clutter: 0,
            error_model: ErrorModel {
                point_jitter_px: [2.0, 2.0],
                ..ErrorModel::none()
            },
            rng_seed: rng.random(),
        };
        let calib = spec.calibration().expect("default calibration");
        let skel = &generate_scene(&spec).expect("valid scene")[0];
        let frame = inject_mapping_errors(render_frame(skel, &spec, &calib), &spec.error_model, spec.rng_seed, &calib);
        let Some(det) = frame.detections.first() else {
            continue;
        };
        let aoi = enlarge_aoi(det, &EnlargeRatios::default(), &calib.intrinsics);
        let mut candidates = Vec::new();
        for id in 1..=3i64 {
            let mut ranges = Vec::new();
            let mut pixels = Vec::new();
            for (i, p) in frame.cloud.iter().enumerate() {
                if frame.labels[i] != id || !above_ground_band(p, &spec.lidar) {
                    continue;
                }
                let Some(q) = calib.project_point(p) else {
                    continue;
                };
                let (u, v) = (q.u + frame.applied_shifts[i][0], q.v + frame.applied_shifts[i][1]);
                if aoi.contains(u, v) {
                    ranges.push(range_of(p));
                    pixels.push(Point2::new(u, v));
                }
            }
            if pixels.len() < min_points {
                break;
            }
            ranges.sort_by(f64::total_cmp);
            candidates.push((ranges[(ranges.len() - 1) / 2], pixels));
        }
        if candidates.len() == 3 {
            return ShapeTrial { target: 0, candidates };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::simulate;

    #[test]
    fn fixture_shape() {
        let spec = overtaking_fixture(0);
        spec.validate().unwrap();
        assert_eq!(spec.frame_count(), 52);
        let frames = generate_scene(&spec).unwrap();
        let first = frames[0].poses[0];
        let last = frames[51].poses[0];
        assert_eq!((first.x, first.y), (28.0, -3.0));
        assert!((last.x - (28.0 - 3.6 * 5.1)).abs() < 1e-9);
    }

    #[test]
    fn fixture_is_deterministic() {
        let mut spec = overtaking_fixture(7);
        spec.duration_s = 0.3;
        let a = simulate(&spec).unwrap();
        assert_eq!(a, simulate(&spec).unwrap());
        assert!(a.iter().all(|f| f.detections.len() <= 1));
        spec.rng_seed = 8;
        assert_ne!(a, simulate(&spec).unwrap());
    }

    #[test]
    fn held_out_pedestrians_prefer_their_benchmark() {
        use crate::shape::{compute_descriptor, kl_divergence, upright_footprint};
        let reg = benchmark_registry(0, 30).unwrap();
        let (car, ped) = (reg.get(ClassLabel::Car).unwrap(), reg.get(ClassLabel::Pedestrian).unwrap());
        let held: Vec<_> = benchmark_clusters(1, 30).into_iter().filter(|c| c.class == ClassLabel::Pedestrian).collect();
        let closer = held
            .iter()
            .filter(|c| {
                let d = compute_descriptor(&upright_footprint(&c.pixels())).unwrap();
                kl_divergence(&d, ped, 1e-6) < kl_divergence(&d, car, 1e-6)
            })
            .count();
        assert!(closer * 3 >= held.len() * 2, "{closer}/{}", held.len());
    }

    #[test]
    fn shape_trial_has_three_candidates() {
        let t = shape_trial(5);
        assert_eq!(t.candidates.len(), 3);
        assert!(t.candidates[0].0 < t.candidates[1].0);
    }
}
