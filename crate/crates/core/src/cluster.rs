//! Mode-based clustering of AOI points by planar range.
//!
//! Bins are anchored on 1-D K-Means centers so that dense range modes sit in
//! the middle of a bin; the remaining span is tiled with bins of the same
//! width stepping outward from the anchors. Each qualifying local maximum of
//! the histogram becomes one candidate cluster.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::ClassLabel;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("no ranges to cluster")]
    EmptyInput,
    #[error("no histogram peak met the count thresholds")]
    NoQualifiedCluster,
    #[error("invalid clustering configuration: {0}")]
    InvalidConfig(String),
    #[error("no granularity configured for class {0}")]
    MissingClass(ClassLabel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Histogram bin width (m) per class.
    pub granularity: BTreeMap<ClassLabel, f64>,
    pub kmeans_k: usize,
    pub kmeans_max_iter: usize,
    pub min_peak_count: usize,
    /// Minimum ratio between a peak and the highest peak.
    pub peak_ratio: f64,
    pub rng_seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            granularity: BTreeMap::from([
                (ClassLabel::Car, 2.0),
                (ClassLabel::Pedestrian, 0.5),
                (ClassLabel::EscooterRider, 0.5),
            ]),
            kmeans_k: 3,
            kmeans_max_iter: 50,
            min_peak_count: 5,
            peak_ratio: 0.3,
            rng_seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn params_for(&self, class: ClassLabel) -> Result<ClusterParams, ClusterError> {
        let granularity = *self.granularity.get(&class).ok_or(ClusterError::MissingClass(class))?;
        let params = ClusterParams {
            granularity,
            kmeans_k: self.kmeans_k,
            kmeans_max_iter: self.kmeans_max_iter,
            min_peak_count: self.min_peak_count,
            peak_ratio: self.peak_ratio,
            rng_seed: self.rng_seed,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Clustering parameters resolved for one object class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub granularity: f64,
    pub kmeans_k: usize,
    pub kmeans_max_iter: usize,
    pub min_peak_count: usize,
    pub peak_ratio: f64,
    pub rng_seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            granularity: 0.5,
            kmeans_k: 3,
            kmeans_max_iter: 50,
            min_peak_count: 5,
            peak_ratio: 0.3,
            rng_seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.granularity > 0.0 && self.granularity.is_finite()) {
            return Err(ClusterError::InvalidConfig("granularity must be positive".into()));
        }
        if self.kmeans_k == 0 {
            return Err(ClusterError::InvalidConfig("kmeans_k must be at least 1".into()));
        }
        if !(self.peak_ratio > 0.0 && self.peak_ratio <= 1.0) {
            return Err(ClusterError::InvalidConfig("peak_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeHistogram {
    /// Ascending bin centers (m).
    pub bin_centers: Vec<f64>,
    pub counts: Vec<usize>,
    /// Bin index of every input range, in input order.
    pub assignments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCluster {
    /// Indices into the range slice the histogram was built from.
    pub member_indices: Vec<usize>,
    pub center_range: f64,
    pub count: usize,
}

fn nearest(centers: &[f64], r: f64) -> usize {
    // First center >= r; compare with its predecessor, ties to the lower bin.
    let hi = centers.partition_point(|&c| c < r);
    if hi == 0 {
        return 0;
    }
    if hi == centers.len() {
        return centers.len() - 1;
    }
    if r - centers[hi - 1] <= centers[hi] - r {
        hi - 1
    } else {
        hi
    }
}

/// Sorted 1-D K-Means centers with k-means++ seeding.
pub fn seed_bin_centers(ranges: &[f64], params: &ClusterParams) -> Result<Vec<f64>, ClusterError> {
    if ranges.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    params.validate()?;
    let mut distinct: Vec<f64> = ranges.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = params.kmeans_k.min(distinct.len());
    if k == distinct.len() {
        return Ok(distinct);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(ranges[rng.random_range(0..ranges.len())]);
    let mut d2: Vec<f64> = ranges.iter().map(|r| (r - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight tail through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            break;
        };
        let c = ranges[pick];
        centers.push(c);
        for (w, r) in d2.iter_mut().zip(ranges) {
            *w = w.min((r - c).powi(2));
        }
    }

    let mut labels = vec![usize::MAX; ranges.len()];
    for _ in 0..params.kmeans_max_iter.max(1) {
        let mut changed = false;
        for (label, &r) in labels.iter_mut().zip(ranges) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centers.iter().enumerate() {
                let d = (r - c).abs();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&l, &r) in labels.iter().zip(ranges) {
            sums[l] += r;
            counts[l] += 1;
        }
        for j in 0..centers.len() {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
    }
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    Ok(centers)
}

/// Bin centers anchored on `anchors` and tiled at `granularity` over
/// `[min_r, max_r]`. Anchors closer than one bin width to the previous kept
/// anchor are dropped.
fn tile_bins(anchors: &[f64], min_r: f64, max_r: f64, g: f64) -> Vec<f64> {
    let mut kept: Vec<f64> = Vec::with_capacity(anchors.len());
    for &a in anchors {
        if kept.last().is_none_or(|&last| a - last >= g) {
            kept.push(a);
        }
    }
    let first = kept[0];
    let last = *kept.last().unwrap();

    let mut below = Vec::new();
    let mut j = 1.0;
    while first - (j - 1.0) * g - g / 2.0 > min_r {
        below.push(first - j * g);
        j += 1.0;
    }

    let mut centers: Vec<f64> = below.into_iter().rev().collect();
    for (i, &a) in kept.iter().enumerate() {
        centers.push(a);
        if let Some(&next) = kept.get(i + 1) {
            let mut j = 1.0;
            while a + (j + 1.0) * g <= next {
                centers.push(a + j * g);
                j += 1.0;
            }
        }
    }
    let mut j = 1.0;
    while last + (j - 1.0) * g + g / 2.0 < max_r {
        centers.push(last + j * g);
        j += 1.0;
    }
    centers
}

/// Builds the range histogram. Every range is assigned to its nearest bin
/// center, ties going to the lower bin.
pub fn build_range_histogram(ranges: &[f64], centers: &[f64], params: &ClusterParams) -> RangeHistogram {
    if ranges.is_empty() || centers.is_empty() {
        return RangeHistogram {
            bin_centers: centers.to_vec(),
            counts: vec![0; centers.len()],
            assignments: vec![0; ranges.len()],
        };
    }
    let min_r = ranges.iter().copied().fold(f64::INFINITY, f64::min);
    let max_r = ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bin_centers = tile_bins(centers, min_r, max_r, params.granularity);
    let mut counts = vec![0usize; bin_centers.len()];
    let assignments: Vec<usize> = ranges
        .iter()
        .map(|&r| {
            let b = nearest(&bin_centers, r);
            counts[b] += 1;
            b
        })
        .collect();
    RangeHistogram {
        bin_centers,
        counts,
        assignments,
    }
}

/// Local maxima of the histogram passing the absolute and relative count
/// thresholds, ordered by descending count then ascending range.
pub fn select_candidate_clusters(hist: &RangeHistogram, params: &ClusterParams) -> Result<Vec<CandidateCluster>, ClusterError> {
    let counts = &hist.counts;
    let max_count = counts.iter().copied().max().unwrap_or(0);
    if max_count == 0 {
        return Err(ClusterError::NoQualifiedCluster);
    }
    let mut peaks: Vec<usize> = (0..counts.len())
        .filter(|&i| {
            let c = counts[i];
            let left_ok = i == 0 || c > counts[i - 1];
            let right_ok = i + 1 == counts.len() || c >= counts[i + 1];
            c > 0 && left_ok && right_ok
        })
        .filter(|&i| counts[i] >= params.min_peak_count && counts[i] as f64 >= params.peak_ratio * max_count as f64)
        .collect();
    if peaks.is_empty() {
        return Err(ClusterError::NoQualifiedCluster);
    }
    peaks.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(hist.bin_centers[a].total_cmp(&hist.bin_centers[b])));

    let mut members: BTreeMap<usize, Vec<usize>> = peaks.iter().map(|&b| (b, Vec::new())).collect();
    for (i, b) in hist.assignments.iter().enumerate() {
        if let Some(m) = members.get_mut(b) {
            m.push(i);
        }
    }
    Ok(peaks
        .into_iter()
        .map(|b| {
            let member_indices = members.remove(&b).unwrap_or_default();
            CandidateCluster {
                count: member_indices.len(),
                center_range: hist.bin_centers[b],
                member_indices,
            }
        })
        .collect())
}

/// Convenience composition: seed, bin and select.
pub fn mode_clusters(ranges: &[f64], params: &ClusterParams) -> Result<(RangeHistogram, Vec<CandidateCluster>), ClusterError> {
    let centers = seed_bin_centers(ranges, params)?;
    let hist = build_range_histogram(ranges, &centers, params);
    let clusters = select_candidate_clusters(&hist, params)?;
    Ok((hist, clusters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn hist_from_counts(counts: &[usize]) -> RangeHistogram {
        let bin_centers: Vec<f64> = (0..counts.len()).map(|i| 5.0 + 0.5 * i as f64).collect();
        let assignments = counts.iter().enumerate().flat_map(|(b, &c)| std::iter::repeat_n(b, c)).collect();
        RangeHistogram {
            bin_centers,
            counts: counts.to_vec(),
            assignments,
        }
    }

    #[test]
    fn constant_ranges_single_center() {
        let centers = seed_bin_centers(&[10.0; 20], &ClusterParams::default()).unwrap();
        assert_eq!(centers, vec![10.0]);
    }

    #[test]
    fn two_blobs_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Normal::new(10.0, 0.2).unwrap();
        let b = Normal::new(30.0, 0.2).unwrap();
        let mut ranges: Vec<f64> = (0..50).map(|_| a.sample(&mut rng)).collect();
        ranges.extend((0..50).map(|_| b.sample(&mut rng)));
        let mean_a = ranges[..50].iter().sum::<f64>() / 50.0;
        let mean_b = ranges[50..].iter().sum::<f64>() / 50.0;
        let params = ClusterParams { kmeans_k: 2, ..Default::default() };
        let centers = seed_bin_centers(&ranges, &params).unwrap();
        assert_eq!(centers.len(), 2);
        assert!((centers[0] - 10.0).abs() < 0.2 && (centers[1] - 30.0).abs() < 0.2);
        assert!((centers[0] - mean_a).abs() < 1e-9 && (centers[1] - mean_b).abs() < 1e-9);
    }

    #[test]
    fn empty_input() {
        assert_eq!(seed_bin_centers(&[], &ClusterParams::default()), Err(ClusterError::EmptyInput));
    }

    #[test]
    fn single_bin_when_ranges_are_tight() {
        let ranges = [10.0, 10.1, 9.9, 10.05];
        let centers = seed_bin_centers(&ranges, &ClusterParams { kmeans_k: 1, ..Default::default() }).unwrap();
        let hist = build_range_histogram(&ranges, &centers, &ClusterParams::default());
        assert_eq!(hist.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(hist.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn nearest_anchor_assignment() {
        let ranges = [10.2, 9.0, 31.0];
        let hist = build_range_histogram(&ranges, &[10.0, 30.0], &ClusterParams::default());
        let b = hist.assignments[0];
        assert_eq!(hist.bin_centers[b], 10.0);
        assert!(hist.bin_centers.contains(&30.0));
        assert_eq!(hist.bin_centers[hist.assignments[1]], 9.0);
        assert_eq!(hist.bin_centers[hist.assignments[2]], 31.0);
        assert_eq!(hist.counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn tiling_spacing_and_coverage() {
        let bins = tile_bins(&[10.0, 30.0], 7.1, 33.9, 0.5);
        let lo = bins[0];
        let hi = *bins.last().unwrap();
        assert!(lo - 0.25 <= 7.1 && hi + 0.25 >= 33.9);
        // Regular spacing everywhere except the single gap just below the
        // second anchor.
        let irregular = bins.windows(2).filter(|w| ((w[1] - w[0]) - 0.5).abs() > 1e-9).count();
        assert_eq!(irregular, 0, "10 and 30 are an exact multiple apart");
        let bins = tile_bins(&[10.0, 12.3], 10.0, 12.3, 0.5);
        let irregular: Vec<f64> = bins.windows(2).map(|w| w[1] - w[0]).filter(|d| (d - 0.5).abs() > 1e-9).collect();
        assert_eq!(irregular.len(), 1);
        assert!(irregular[0] > 0.5 && irregular[0] < 1.0);
    }

    #[test]
    fn close_anchors_are_merged() {
        let bins = tile_bins(&[10.0, 10.2, 20.0], 10.0, 20.0, 0.5);
        assert!(bins.contains(&10.0) && !bins.contains(&10.2));
    }

    #[test]
    fn one_concentrated_bar() {
        let c = select_candidate_clusters(&hist_from_counts(&[0, 0, 12, 0]), &ClusterParams::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].count, 12);
        assert_eq!(c[0].member_indices, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn peak_ratio_filters_small_peaks() {
        let c = select_candidate_clusters(&hist_from_counts(&[100, 0, 80, 0, 10]), &ClusterParams::default()).unwrap();
        let counts: Vec<usize> = c.iter().map(|c| c.count).collect();
        assert_eq!(counts, vec![100, 80]);
    }

    #[test]
    fn nothing_qualifies() {
        assert_eq!(
            select_candidate_clusters(&hist_from_counts(&[2, 0, 2, 0, 2]), &ClusterParams::default()),
            Err(ClusterError::NoQualifiedCluster)
        );
    }

    #[test]
    fn equal_peaks_prefer_closer_range() {
        let c = select_candidate_clusters(&hist_from_counts(&[0, 20, 0, 20, 0]), &ClusterParams::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c[0].center_range < c[1].center_range);
    }

    #[test]
    fn missing_class_granularity() {
        let cfg = ClusteringConfig::default();
        assert!(cfg.params_for(ClassLabel::Car).is_ok());
        assert_eq!(cfg.params_for(ClassLabel::Other), Err(ClusterError::MissingClass(ClassLabel::Other)));
    }

    proptest! {
        #[test]
        fn clustering_invariants(
            ranges in proptest::collection::vec(1.0f64..60.0, 1..200),
            g in 0.2f64..3.0,
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            let params = ClusterParams { granularity: g, kmeans_k: k, rng_seed: seed, min_peak_count: 1, ..Default::default() };
            let centers = seed_bin_centers(&ranges, &params).unwrap();
            prop_assert!(centers.windows(2).all(|w| w[0] < w[1]));
            let hist = build_range_histogram(&ranges, &centers, &params);
            prop_assert_eq!(hist.counts.iter().sum::<usize>(), ranges.len());
            prop_assert!(hist.bin_centers.windows(2).all(|w| w[1] - w[0] >= g - 1e-9 && w[1] - w[0] < 2.0 * g));
            let clusters = select_candidate_clusters(&hist, &params).unwrap();
            let mut seen = std::collections::HashSet::new();
            for c in &clusters {
                prop_assert_eq!(c.count, c.member_indices.len());
                for &i in &c.member_indices {
                    prop_assert!(seen.insert(i));
                    prop_assert!((ranges[i] - c.center_range).abs() <= g + 1e-9);
                }
            }
            // Determinism.
            let again = mode_clusters(&ranges, &params).unwrap();
            prop_assert_eq!(again.1, clusters);
        }
    }
}
