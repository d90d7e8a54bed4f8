//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails. Seeded criteria are run twice and their
//! serialized reports compared byte for byte.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Point2;
use pfusion_core::aoi::ClassLabel;
use pfusion_core::calib::LidarPoint;
use pfusion_core::cluster::CandidateCluster;
use pfusion_core::config::PipelineConfig;
use pfusion_core::ground::{crop_to_boundary, fit_ground_plane, is_ground, min_inlier_count, required_trials, RansacPlaneConfig};
use pfusion_core::io::Sequence;
use pfusion_core::localize::localize;
use pfusion_core::metrics::{tolerance_band, ToleranceConfig};
use pfusion_core::pipeline::{load_benchmarks, run_sequence};
use pfusion_core::report::{suite_report, SequenceReport};
use pfusion_core::shape::{
    compute_descriptor, derotate, principal_axis_angle, select_cluster, BenchmarkShapeRegistry, ShapeCandidate,
    ShapeFilterConfig,
};
use pfusion_core::smoother::{default_grid, detect_outliers, smooth_and_interpolate, SmootherConfig, TrackSample};
use pfusion_core::stats::{one_sample_right_tail_t_test, paired_t_test};
use pfusion_core::synth::{overtaking_fixture, shape_trial, simulate, ErrorModel, TARGET_ID};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

struct Outcome {
    pass: bool,
    detail: String,
    /// Serialized result, compared across reruns.
    report: String,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn criterion_1() -> Outcome {
    let trials = required_trials(0.99, 0.2, 6).unwrap();
    let floor = min_inlier_count(0.2, 1000);
    let tol = ToleranceConfig::default();
    let car = tolerance_band(10.0, ClassLabel::Car, &tol).unwrap();
    let scooter = tolerance_band(10.0, ClassLabel::EscooterRider, &tol).unwrap();
    let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() <= 1e-9 && (a.1 - b.1).abs() <= 1e-9;
    let pass = trials == 16 && floor == 800 && close(car, (9.325, 10.675)) && close(scooter, (9.775, 10.225));
    Outcome {
        pass,
        detail: format!("N={trials} floor={floor} car=[{:.3},{:.3}] escooter=[{:.3},{:.3}]", car.0, car.1, scooter.0, scooter.1),
        report: String::new(),
    }
}

/// 500 ground returns with 0.02 m noise and 50 returns on a box standing on it.
fn plane_scene(seed: u64) -> (Vec<LidarPoint>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut cloud = Vec::with_capacity(550);
    let mut ground = Vec::with_capacity(550);
    for _ in 0..500 {
        let (x, y) = (rng.random_range(2.0..40.0), rng.random_range(-10.0..10.0));
        cloud.push(LidarPoint::new(x, y, -1.8 + noise.sample(&mut rng)));
        ground.push(true);
    }
    for _ in 0..50 {
        let (x, y, z) = (rng.random_range(10.0..12.0), rng.random_range(-1.0..1.0), rng.random_range(-1.3..0.0));
        cloud.push(LidarPoint::new(x, y, z));
        ground.push(false);
    }
    (cloud, ground)
}

fn criterion_2() -> Outcome {
    let mut worst = (1.0f64, 1.0f64, 0.0f64);
    let mut report = String::new();
    for seed in 0..20 {
        let (cloud, truth) = plane_scene(seed);
        let cfg = RansacPlaneConfig { rng_seed: seed, ..Default::default() };
        assert_eq!(crop_to_boundary(&cloud, &cfg).len(), cloud.len());
        let model = fit_ground_plane(&cloud, &cfg).expect("plane found");
        let removed = cloud.iter().zip(&truth).filter(|(p, g)| **g && is_ground(p, &model, cfg.delta)).count();
        let kept = cloud.iter().zip(&truth).filter(|(p, g)| !**g && !is_ground(p, &model, cfg.delta)).count();
        let (r, k, tilt) = (removed as f64 / 500.0, kept as f64 / 50.0, model.tilt_deg());
        worst = (worst.0.min(r), worst.1.min(k), worst.2.max(tilt));
        report += &format!("{seed} {removed} {kept} {:?} {}\n", model.normal, model.offset);
    }
    Outcome {
        pass: worst.0 >= 0.95 && worst.1 >= 0.99 && worst.2 <= 1.0,
        detail: format!(
            "20 scenes: min ground removed {:.1}%, min object kept {:.1}%, max tilt {:.3} deg",
            100.0 * worst.0,
            100.0 * worst.1,
            worst.2
        ),
        report,
    }
}

fn criterion_3(benchmarks: &BenchmarkShapeRegistry) -> Outcome {
    let benchmark = benchmarks.get(ClassLabel::Pedestrian).expect("pedestrian benchmark");
    let (mut hits, mut invariant) = (0, 0);
    let mut report = String::new();
    let trials = 200;
    for seed in 0..trials {
        let trial = shape_trial(seed);
        let clusters: Vec<CandidateCluster> = trial
            .candidates
            .iter()
            .map(|(range, px)| CandidateCluster {
                member_indices: (0..px.len()).collect(),
                center_range: *range,
                count: px.len(),
            })
            .collect();
        let candidates: Vec<ShapeCandidate> = clusters
            .iter()
            .zip(&trial.candidates)
            .map(|(c, (_, px))| ShapeCandidate { cluster: c, pixels: px.clone() })
            .collect();
        let picks: Vec<usize> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&k| {
                let cfg = ShapeFilterConfig { sigmoid_gain: k, ..Default::default() };
                let sel = select_cluster(&candidates, benchmark, &cfg).unwrap();
                // The chosen candidate must also carry the highest score.
                let best = sel.scores.iter().map(|s| s.post_rotation_score).fold(f64::MIN, f64::max);
                assert_eq!(sel.scores[sel.index].post_rotation_score, best);
                sel.index
            })
            .collect();
        if picks[1] == trial.target {
            hits += 1;
        }
        if picks.iter().all(|&p| p == picks[0]) {
            invariant += 1;
        }
        report += &format!("{seed} {} {:?}\n", trial.target, picks);
    }
    let rate = hits as f64 / trials as f64;
    Outcome {
        pass: rate >= 0.95 && invariant == trials,
        detail: format!("pedestrian selected {hits}/{trials} ({:.1}%), gain-invariant {invariant}/{trials}", 100.0 * rate),
        report,
    }
}

/// Filled ellipse with a vertical major axis, mirrored about its vertical
/// axis so that its principal axis is exactly vertical.
fn upright_ellipse(seed: u64) -> Vec<Point2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.random_range(15.0..30.0), rng.random_range(50.0..80.0));
    let mut pts = Vec::new();
    while pts.len() < 200 {
        let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if x * x + y * y <= 1.0 {
            pts.push(Point2::new(400.0 + a * x, 300.0 + b * y));
            pts.push(Point2::new(400.0 - a * x, 300.0 + b * y));
        }
    }
    pts
}

fn rotate_about_centroid(points: &[Point2<f64>], deg: f64) -> Vec<Point2<f64>> {
    let n = points.len() as f64;
    let c = Point2::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    let (s, co) = deg.to_radians().sin_cos();
    points
        .iter()
        .map(|p| {
            let d = p - c;
            Point2::new(c.x + co * d.x - s * d.y, c.y + s * d.x + co * d.y)
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rejected_ok = true;
    let mut report = String::new();
    for seed in 0..20 {
        let base = upright_ellipse(seed);
        let reference = compute_descriptor(&base).unwrap();
        for theta in [-40.0, -20.0, 0.0, 20.0, 40.0] {
            let rotated = rotate_about_centroid(&base, theta);
            let est = principal_axis_angle(&rotated).unwrap();
            let d = compute_descriptor(&derotate(&rotated, &est)).unwrap().l1_distance(&reference);
            if est.rejected {
                worst = f64::INFINITY;
            }
            worst = worst.max(d);
            report += &format!("{seed} {theta} {} {d}\n", est.angle_deg);
        }
        let rotated = rotate_about_centroid(&base, 60.0);
        let est = principal_axis_angle(&rotated).unwrap();
        rejected_ok &= est.rejected && derotate(&rotated, &est) == rotated;
    }
    Outcome {
        pass: worst <= 0.05 && rejected_ok,
        detail: format!("max L1 after de-rotation {worst:.2e} over 20 clusters x 5 angles; 60 deg rejected: {rejected_ok}"),
        report,
    }
}

/// Localizes a 100-point cluster at range `gt` where `noise` of the points
/// are replaced by returns from much farther away.
fn contaminated_range(rng: &mut ChaCha8Rng, gt: f64, noise: usize) -> f64 {
    let az: f64 = rng.random_range(-0.3..0.3);
    let points: Vec<(usize, LidarPoint)> = (0..100)
        .map(|i| {
            let r = if i < noise { gt + rng.random_range(2.0..40.0) } else { gt + rng.random_range(-0.25..0.25) };
            let a = az + rng.random_range(-0.01..0.01);
            (i, LidarPoint::new(r * a.cos(), r * a.sin(), rng.random_range(-1.5..0.0)))
        })
        .collect();
    localize(0, 1, ClassLabel::Pedestrian, &points).unwrap().range_m
}

fn criterion_5() -> Outcome {
    let granularity = 0.5;
    let (mut ok, mut total) = (0, 0);
    let mut at_60 = 0;
    let mut report = String::new();
    for seed in 0..500 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = rng.random_range(8.0..40.0);
        let mut trial_ok = true;
        for pct in 0..50 {
            let r = contaminated_range(&mut rng, gt, pct);
            trial_ok &= (r - gt).abs() <= granularity;
        }
        ok += trial_ok as usize;
        total += 1;
        let r60 = contaminated_range(&mut rng, gt, 60);
        if (r60 - gt).abs() <= granularity {
            at_60 += 1;
        }
        report += &format!("{seed} {trial_ok} {r60}\n");
    }
    Outcome {
        pass: ok == total,
        detail: format!(
            "{ok}/{total} trials within {granularity} m for 0-49% contamination; at 60% {at_60}/{total} within (allowed to fail)"
        ),
        report,
    }
}

fn quadratic(t: f64) -> (f64, f64) {
    (30.0 - 3.6 * t + 0.2 * t * t, -3.0 + 0.4 * t - 0.05 * t * t)
}

fn cubic(t: f64) -> (f64, f64, f64) {
    (1.0 + 2.0 * t - 0.5 * t * t + 0.1 * t.powi(3), 4.0 - t + 0.3 * t.powi(3), 0.5 * t * t)
}

fn criterion_6() -> Outcome {
    let noise = Normal::new(0.0, 0.1).unwrap();
    let (mut found, mut injected, mut false_flags, mut clean) = (0, 0, 0, 0);
    let mut worst_rms: f64 = 0.0;
    let mut report = String::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut track: Vec<TrackSample> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.1;
                let (x, y) = quadratic(t);
                TrackSample::measured(t, x + noise.sample(&mut rng), y + noise.sample(&mut rng), 0.0)
            })
            .collect();
        let bad = sample(&mut rng, 100, 10).into_vec();
        for &i in &bad {
            let (mag, dir) = (rng.random_range(3.0..5.0), rng.random_range(0.0..std::f64::consts::TAU));
            track[i].x += mag * dir.cos();
            track[i].y += mag * dir.sin();
        }
        let cfg = SmootherConfig { rng_seed: seed, ..Default::default() };
        let flags = detect_outliers(&track, &cfg).unwrap();
        found += bad.iter().filter(|&&i| flags[i]).count();
        injected += bad.len();
        false_flags += (0..100).filter(|i| flags[*i] && !bad.contains(i)).count();
        clean += 100 - bad.len();
        let smooth = smooth_and_interpolate(&track, &flags, None).unwrap();
        let se: f64 = smooth
            .samples
            .iter()
            .map(|s| {
                let (x, y) = quadratic(s.t);
                (s.x - x).powi(2) + (s.y - y).powi(2)
            })
            .sum();
        let rms = (se / smooth.samples.len() as f64).sqrt();
        worst_rms = worst_rms.max(rms);
        report += &format!("{seed} {flags:?} {rms}\n");
    }

    let full: Vec<TrackSample> = (0..40)
        .map(|i| {
            let t = i as f64 * 0.1;
            let (x, y, z) = cubic(t);
            TrackSample::measured(t, x, y, z)
        })
        .collect();
    let dropped = [7, 19, 31];
    let kept: Vec<TrackSample> = full.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, s)| *s).collect();
    let missing: Vec<f64> = dropped.iter().map(|&i| full[i].t).collect();
    let grid = default_grid(&kept, &missing);
    let out = smooth_and_interpolate(&kept, &vec![false; kept.len()], Some(&grid)).unwrap();
    let interp_err = out
        .samples
        .iter()
        .filter(|s| s.interpolated)
        .map(|s| {
            let (x, y, z) = cubic(s.t);
            (s.x - x).abs().max((s.y - y).abs()).max((s.z - z).abs())
        })
        .fold(0.0, f64::max);
    let interpolated = out.samples.iter().filter(|s| s.interpolated).count();

    let hit_rate = found as f64 / injected as f64;
    let false_rate = false_flags as f64 / clean as f64;
    Outcome {
        pass: hit_rate >= 0.9 && false_rate <= 0.05 && worst_rms <= 0.15 && interpolated == 3 && interp_err <= 1e-6,
        detail: format!(
            "outliers flagged {:.1}%, false flags {:.1}%, worst RMS {worst_rms:.3} m, gap error {interp_err:.1e} m",
            100.0 * hit_rate,
            100.0 * false_rate
        ),
        report,
    }
}

/// Runs the overtaking fixture for each seed through the full pipeline.
fn run_fixtures(seeds: std::ops::Range<u64>, ideal: bool, benchmarks: &BenchmarkShapeRegistry) -> Vec<SequenceReport> {
    let cfg = PipelineConfig::default();
    seeds
        .map(|seed| {
            let mut spec = overtaking_fixture(seed);
            if ideal {
                spec.error_model = ErrorModel::none();
            }
            let calib = spec.calibration().unwrap();
            let seq = Sequence::from_simulation(simulate(&spec).unwrap(), spec.frame_rate, calib);
            run_sequence(&seq, benchmarks, &cfg).unwrap().report
        })
        .collect()
}

fn target_mae(r: &SequenceReport) -> (f64, f64) {
    let o = r.objects.iter().find(|o| o.object_id == TARGET_ID).expect("target reported");
    let m = o.mae.expect("target localized");
    (m.x, m.y)
}

fn serialize(reports: &[SequenceReport]) -> String {
    reports.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

/// Criteria 7 and 8 share the 20-sequence run.
fn criteria_7_8(reports: &[SequenceReport]) -> (Outcome, Outcome) {
    let cfg = PipelineConfig::default();
    let suite = suite_report(reports, &cfg.guarantee);
    let report = serialize(reports) + &serde_json::to_string(&suite).unwrap();
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let paired = suite.paired.expect("paired test");
    let c7 = Outcome {
        pass: paired.p_value < 0.01 && suite.mean_improvement_pp >= 10.0,
        detail: format!(
            "baseline {:.1}% -> p-fusion {:.1}% over {} sequences, +{:.1} pp, paired t={:.2} p={:.2e}",
            mean(&suite.baseline_mean),
            mean(&suite.pfusion_mean),
            suite.sequences,
            suite.mean_improvement_pp,
            paired.t,
            paired.p_value
        ),
        report: report.clone(),
    };
    let above = suite.above_half.expect("one-sample test");
    let completeness = suite.completeness.expect("completeness");
    let c8 = Outcome {
        pass: above.p_value < 0.05 && completeness.pass,
        detail: format!(
            "p-fusion > 50%: t={:.2} p={:.2e}; completeness {}/{} = {:.3} (t1 = 20% of true members, t2 = {})",
            above.t, above.p_value, completeness.frames_within, completeness.frames, completeness.probability, cfg.guarantee.t2
        ),
        report,
    };
    (c7, c8)
}

fn criterion_9(ideal: &[SequenceReport], noisy: &[SequenceReport]) -> Outcome {
    let (ix, iy) = target_mae(&ideal[0]);
    let worst = noisy.iter().map(target_mae).fold((0.0f64, 0.0f64), |a, m| (a.0.max(m.0), a.1.max(m.1)));
    Outcome {
        pass: ix <= 0.5 && iy <= 0.5 && worst.0 <= 2.0 && worst.1 <= 2.0,
        detail: format!(
            "ideal MAE x {ix:.3} y {iy:.3} m; default error model worst MAE x {:.3} y {:.3} m over {} sequences",
            worst.0,
            worst.1,
            noisy.len()
        ),
        report: serialize(ideal),
    }
}

fn naive_t(sample: &[f64], mu0: f64) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = (mean - mu0) / (var / n).sqrt();
    (t, 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut report = String::new();
    for _ in 0..20 {
        let n = rng.random_range(3..=12);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-0.1..0.3)).collect();
        let one = one_sample_right_tail_t_test(&b, 0.5).unwrap();
        let (t1, p1) = naive_t(&b, 0.5);
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
        let paired = paired_t_test(&a, &b).unwrap();
        let (t2, p2) = naive_t(&diffs, 0.0);
        for d in [one.t - t1, one.p_value - p1, paired.t - t2, paired.p_value - p2] {
            worst = worst.max(d.abs());
        }
        report += &format!("{} {} {} {}\n", one.t, one.p_value, paired.t, paired.p_value);
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max deviation from reference {worst:.1e} over 20 samples"),
        report,
    }
}

fn main() -> ExitCode {
    let benchmarks = load_benchmarks(&PipelineConfig::default()).expect("synthetic benchmarks");
    let mut lines: Vec<(String, Outcome, Duration, Duration)> = Vec::new();
    let mut push = |name: &str, (o, dt): (Outcome, Duration), limit: Duration| lines.push((name.to_string(), o, dt, limit));

    let secs = Duration::from_secs;
    push("1 formula checks", timed(criterion_1), secs(1));
    push("2 ground removal", timed(criterion_2), secs(1));
    push("3 shape selection", timed(|| criterion_3(&benchmarks)), secs(10));
    push("4 rotation robustness", timed(criterion_4), secs(5));
    push("5 median robustness", timed(criterion_5), secs(5));
    push("6 smoother", timed(criterion_6), secs(5));
    let (noisy, dt_suite) = timed(|| run_fixtures(0..20, false, &benchmarks));
    let (c7, c8) = criteria_7_8(&noisy);
    push("7 p-fusion beats baseline", (c7, dt_suite), secs(120));
    push("8 p-fusion above 50%, completeness", (c8, dt_suite), secs(120));
    let (ideal, dt_ideal) = timed(|| run_fixtures(0..1, true, &benchmarks));
    push("9 end-to-end localization", (criterion_9(&ideal, &noisy), dt_ideal), secs(60));
    push("10 t-test oracle", timed(criterion_10), secs(1));

    // Rerun every seeded criterion and compare reports.
    let rerun: Vec<(&str, String)> = vec![
        ("2", criterion_2().report),
        ("3", criterion_3(&benchmarks).report),
        ("4", criterion_4().report),
        ("5", criterion_5().report),
        ("6", criterion_6().report),
        ("7/8", criteria_7_8(&run_fixtures(0..20, false, &benchmarks)).0.report),
        ("9", criterion_9(&run_fixtures(0..1, true, &benchmarks), &noisy).report),
        ("10", criterion_10().report),
    ];
    let first = |key: &str| -> &str {
        let idx = match key {
            "7/8" => 6,
            "9" => 8,
            "10" => 9,
            k => k.parse::<usize>().unwrap() - 1,
        };
        &lines[idx].1.report
    };
    let differing: Vec<&str> = rerun.iter().filter(|(k, r)| first(k) != r).map(|(k, _)| *k).collect();
    let det = Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} seeded criteria reproduced byte-identical reports", rerun.len())
        } else {
            format!("reports differ for criteria {differing:?}")
        },
        report: String::new(),
    };
    lines.push(("11 determinism".into(), det, Duration::ZERO, Duration::MAX));

    let mut failed = 0;
    println!();
    for (name, o, dt, limit) in &lines {
        let in_time = dt <= limit;
        let pass = o.pass && in_time;
        failed += !pass as usize;
        let timing = if *limit == Duration::MAX {
            String::new()
        } else {
            format!(" [{:.2} s{}]", dt.as_secs_f64(), if in_time { "" } else { ", over time limit" })
        };
        println!("{} criterion {name}: {}{timing}", if pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("\n{} of {} acceptance criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
