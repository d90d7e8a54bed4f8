//! Trajectory outlier detection and smoothing.
//!
//! Outliers are found per axis with a RANSAC quadratic in time; a sample is an
//! outlier when any axis rejects it. Inliers are then fitted with a cubic per
//! axis, which is evaluated on the output time grid to fill gaps.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DETECT_ORDER: usize = 2;
pub const SMOOTH_ORDER: usize = 3;

#[derive(Debug, Error)]
pub enum SmootherError {
    #[error("track has {got} samples, need at least {needed}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("only {got} inliers, need more than {needed}")]
    TooFewInliers { needed: usize, got: usize },
    #[error("timestamps must be finite and strictly increasing")]
    NonMonotonicTime,
    #[error("flag count {flags} does not match track length {samples}")]
    FlagMismatch { flags: usize, samples: usize },
    #[error("invalid smoother configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub outlier: bool,
    pub interpolated: bool,
}

impl TrackSample {
    pub fn measured(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            t,
            x,
            y,
            z,
            outlier: false,
            interpolated: false,
        }
    }

    fn axis(&self, d: usize) -> f64 {
        [self.x, self.y, self.z][d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    pub threshold_sigma: f64,
    pub ransac_iterations: usize,
    pub ransac_subset: usize,
    pub min_samples: usize,
    pub sigma_floor: f64,
    pub rng_seed: u64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            threshold_sigma: 2.0,
            ransac_iterations: 100,
            ransac_subset: DETECT_ORDER + 2,
            min_samples: 8,
            sigma_floor: 0.05,
            rng_seed: 0,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<(), SmootherError> {
        if !(self.threshold_sigma > 0.0 && self.threshold_sigma.is_finite()) {
            return Err(SmootherError::InvalidConfig("threshold_sigma must be positive".into()));
        }
        if self.min_samples <= SMOOTH_ORDER + 1 {
            return Err(SmootherError::InvalidConfig(format!(
                "min_samples must exceed {}",
                SMOOTH_ORDER + 1
            )));
        }
        if self.ransac_subset <= DETECT_ORDER || self.ransac_subset > self.min_samples {
            return Err(SmootherError::InvalidConfig(format!(
                "ransac_subset must be in ({}, min_samples]",
                DETECT_ORDER
            )));
        }
        if self.ransac_iterations == 0 {
            return Err(SmootherError::InvalidConfig("ransac_iterations must be positive".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(SmootherError::InvalidConfig("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Least-squares polynomial in a normalised time variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
    center: f64,
    scale: f64,
}

impl Polynomial {
    /// Fits `order` to `(t, y)`; the time axis is mapped to roughly [-1, 1]
    /// using the span of `t_span` for conditioning.
    pub fn fit(t: &[f64], y: &[f64], order: usize, t_span: (f64, f64)) -> Option<Polynomial> {
        if t.len() <= order {
            return None;
        }
        let center = 0.5 * (t_span.0 + t_span.1);
        let scale = (0.5 * (t_span.1 - t_span.0)).max(f64::MIN_POSITIVE);
        let a = DMatrix::from_fn(t.len(), order + 1, |i, j| ((t[i] - center) / scale).powi(j as i32));
        let b = DVector::from_column_slice(y);
        let coeffs = a.svd(true, true).solve(&b, 1e-12).ok()?;
        coeffs.iter().all(|c| c.is_finite()).then(|| Polynomial {
            coeffs: coeffs.iter().copied().collect(),
            center,
            scale,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

fn stdev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn check_times(track: &[TrackSample]) -> Result<(), SmootherError> {
    let ok = track.iter().all(|s| s.t.is_finite()) && track.windows(2).all(|w| w[0].t < w[1].t);
    if ok {
        Ok(())
    } else {
        Err(SmootherError::NonMonotonicTime)
    }
}

/// Outlier flags for one axis.
fn detect_axis(t: &[f64], y: &[f64], cfg: &SmootherConfig, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let span = (t[0], t[t.len() - 1]);
    let residuals = |p: &Polynomial| -> Vec<f64> { t.iter().zip(y).map(|(ti, yi)| yi - p.eval(*ti)).collect() };

    let global = Polynomial::fit(t, y, DETECT_ORDER, span).expect("enough samples");
    let tau = cfg.threshold_sigma * stdev(residuals(&global).into_iter()).max(cfg.sigma_floor);

    // (inliers, rms)
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.ransac_iterations {
        let idx = sample(rng, t.len(), cfg.ransac_subset).into_vec();
        let ts: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let Some(model) = Polynomial::fit(&ts, &ys, DETECT_ORDER, span) else {
            continue;
        };
        let r = residuals(&model);
        let inliers: Vec<usize> = (0..t.len()).filter(|&i| r[i].abs() <= tau).collect();
        let rms = (inliers.iter().map(|&i| r[i] * r[i]).sum::<f64>() / inliers.len().max(1) as f64).sqrt();
        let better = match &best {
            None => true,
            Some((bi, brms)) => inliers.len() > bi.len() || (inliers.len() == bi.len() && rms < *brms),
        };
        if better {
            best = Some((inliers, rms));
        }
    }

    let model = best
        .filter(|(inl, _)| inl.len() > DETECT_ORDER)
        .and_then(|(inl, _)| {
            let ts: Vec<f64> = inl.iter().map(|&i| t[i]).collect();
            let ys: Vec<f64> = inl.iter().map(|&i| y[i]).collect();
            Polynomial::fit(&ts, &ys, DETECT_ORDER, span)
        })
        .unwrap_or(global);
    let r = residuals(&model);
    let sigma = stdev(r.iter().copied()).max(cfg.sigma_floor);
    r.iter().map(|ri| ri.abs() > cfg.threshold_sigma * sigma).collect()
}

/// Flags samples that any axis's quadratic RANSAC model rejects.
pub fn detect_outliers(track: &[TrackSample], cfg: &SmootherConfig) -> Result<Vec<bool>, SmootherError> {
    cfg.validate()?;
    if track.len() < cfg.min_samples {
        return Err(SmootherError::TooFewSamples {
            needed: cfg.min_samples,
            got: track.len(),
        });
    }
    check_times(track)?;
    let t: Vec<f64> = track.iter().map(|s| s.t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut flags = vec![false; track.len()];
    for d in 0..3 {
        let y: Vec<f64> = track.iter().map(|s| s.axis(d)).collect();
        for (f, o) in flags.iter_mut().zip(detect_axis(&t, &y, cfg, &mut rng)) {
            *f |= o;
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory {
    pub samples: Vec<TrackSample>,
}

impl SmoothedTrajectory {
    pub fn write_csv(&self, path: &Path) -> Result<(), SmootherError> {
        let io = |source| SmootherError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for s in &self.samples {
            w.serialize(s).map_err(io)?;
        }
        w.flush().map_err(|e| io(e.into()))
    }

    pub fn read_csv(path: &Path) -> Result<Self, SmootherError> {
        let io = |source| SmootherError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(io)?;
        let samples = r.deserialize().collect::<Result<Vec<TrackSample>, _>>().map_err(io)?;
        Ok(Self { samples })
    }
}

/// Cubic fit of the inliers per axis, evaluated on `grid` (or on the track's
/// own timestamps when `grid` is `None`). Grid times without a measured sample
/// are marked interpolated; measured samples keep their outlier flag.
pub fn smooth_and_interpolate(
    track: &[TrackSample],
    flags: &[bool],
    grid: Option<&[f64]>,
) -> Result<SmoothedTrajectory, SmootherError> {
    if flags.len() != track.len() {
        return Err(SmootherError::FlagMismatch {
            flags: flags.len(),
            samples: track.len(),
        });
    }
    check_times(track)?;
    let inliers: Vec<&TrackSample> = track.iter().zip(flags).filter(|(_, f)| !**f).map(|(s, _)| s).collect();
    if inliers.len() <= SMOOTH_ORDER + 1 {
        return Err(SmootherError::TooFewInliers {
            needed: SMOOTH_ORDER + 1,
            got: inliers.len(),
        });
    }
    let own: Vec<f64> = track.iter().map(|s| s.t).collect();
    let grid = grid.unwrap_or(&own);
    let t: Vec<f64> = inliers.iter().map(|s| s.t).collect();
    let span = (t[0], t[t.len() - 1]);
    let fits: Vec<Polynomial> = (0..3)
        .map(|d| {
            let y: Vec<f64> = inliers.iter().map(|s| s.axis(d)).collect();
            Polynomial::fit(&t, &y, SMOOTH_ORDER, span).ok_or(SmootherError::TooFewInliers {
                needed: SMOOTH_ORDER + 1,
                got: inliers.len(),
            })
        })
        .collect::<Result<_, _>>()?;
    let samples = grid
        .iter()
        .map(|&g| {
            let measured = track.iter().position(|s| s.t == g);
            TrackSample {
                t: g,
                x: fits[0].eval(g),
                y: fits[1].eval(g),
                z: fits[2].eval(g),
                outlier: measured.is_some_and(|i| flags[i]),
                interpolated: measured.is_none(),
            }
        })
        .collect();
    Ok(SmoothedTrajectory { samples })
}

/// Sorted union of the measured timestamps and `missing`.
pub fn default_grid(track: &[TrackSample], missing: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = track.iter().map(|s| s.t).chain(missing.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}
