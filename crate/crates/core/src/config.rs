//! Pipeline configuration file (JSON). Every field has a default, so `{}` is a
//! valid configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aoi::{ClassLabel, EnlargeRatios};
use crate::cluster::ClusteringConfig;
use crate::ground::RansacPlaneConfig;
use crate::metrics::{GuaranteeConfig, ToleranceConfig};
use crate::shape::ShapeFilterConfig;
use crate::smoother::SmootherConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("no {what} configured for class {class}")]
    MissingClass { what: &'static str, class: ClassLabel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides the sequence's own calibration file.
    pub calibration: Option<PathBuf>,
    /// Benchmark registry; synthetic benchmarks are generated when absent.
    pub benchmark: Option<PathBuf>,
    /// Clusters per class for the synthetic benchmarks.
    pub synthetic_benchmark_samples: usize,
    pub output_dir: Option<PathBuf>,
    pub rng_seed: u64,
    pub ground: RansacPlaneConfig,
    pub clustering: ClusteringConfig,
    pub enlarge: BTreeMap<ClassLabel, EnlargeRatios>,
    pub shape: ShapeFilterConfig,
    pub smoother: SmootherConfig,
    pub smoothing: bool,
    pub baseline_only: bool,
    pub tolerance: ToleranceConfig,
    pub guarantee: GuaranteeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            calibration: None,
            benchmark: None,
            synthetic_benchmark_samples: 30,
            output_dir: None,
            rng_seed: 0,
            ground: RansacPlaneConfig::default(),
            clustering: ClusteringConfig::default(),
            enlarge: [ClassLabel::Car, ClassLabel::Pedestrian, ClassLabel::EscooterRider]
                .into_iter()
                .map(|c| (c, EnlargeRatios::default()))
                .collect(),
            shape: ShapeFilterConfig::default(),
            smoother: SmootherConfig::default(),
            smoothing: true,
            baseline_only: false,
            tolerance: ToleranceConfig::default(),
            guarantee: GuaranteeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the seed of every randomised stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self.ground.rng_seed = seed;
        self.clustering.rng_seed = seed;
        self.smoother.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.ground.validate().map_err(|e| invalid(&e))?;
        self.shape.validate().map_err(|e| invalid(&e))?;
        self.smoother.validate().map_err(|e| invalid(&e))?;
        self.tolerance.validate().map_err(|e| invalid(&e))?;
        self.guarantee.validate().map_err(|e| invalid(&e))?;
        for class in self.clustering.granularity.keys() {
            self.clustering.params_for(*class).map_err(|e| invalid(&e))?;
        }
        for r in self.enlarge.values() {
            r.validate().map_err(|e| invalid(&e))?;
        }
        if self.benchmark.is_none() && self.synthetic_benchmark_samples < self.shape.benchmark_min_samples {
            return Err(ConfigError::Invalid(format!(
                "synthetic_benchmark_samples must be at least {}",
                self.shape.benchmark_min_samples
            )));
        }
        Ok(())
    }

    /// Every class appearing in the detections needs clustering and
    /// enlargement settings.
    pub fn check_classes(&self, classes: impl IntoIterator<Item = ClassLabel>) -> Result<(), ConfigError> {
        for class in classes {
            if !self.clustering.granularity.contains_key(&class) {
                return Err(ConfigError::MissingClass { what: "granularity", class });
            }
            if !self.enlarge.contains_key(&class) {
                return Err(ConfigError::MissingClass { what: "enlarge ratios", class });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = r#"{"rng_seed": 5, "smoothing": false, "clustering": {"granularity": {"car": 1.0}}, "guarantee": {"t1": {"count": 3}, "t2": 0.8}}"#;
        let cfg: PipelineConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.rng_seed, 5);
        assert!(!cfg.smoothing);
        assert_eq!(cfg.clustering.granularity.len(), 1);
        assert_eq!(cfg.clustering.kmeans_k, ClusteringConfig::default().kmeans_k);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.check_classes([ClassLabel::Car]).is_ok());
        assert!(matches!(
            cfg.check_classes([ClassLabel::Pedestrian]),
            Err(ConfigError::MissingClass { what: "granularity", .. })
        ));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |text: &str| serde_json::from_str::<PipelineConfig>(text).map_err(|_| ()).and_then(|c| c.validate().map_err(|_| ()));
        assert!(bad(r#"{"unknown_key": 1}"#).is_err());
        assert!(bad(r#"{"guarantee": {"t1": {"fraction": 0.2}, "t2": 1.5}}"#).is_err());
        assert!(bad(r#"{"ground": {"p": 1.0}}"#).is_err());
        assert!(bad(r#"{"enlarge": {"car": {"left": -1, "right": 0, "up": 0, "down": 0}}}"#).is_err());
        assert!(bad(r#"{"synthetic_benchmark_samples": 2}"#).is_err());
    }

    #[test]
    fn seed_propagates() {
        let cfg = PipelineConfig::default().with_seed(9);
        assert_eq!((cfg.ground.rng_seed, cfg.clustering.rng_seed, cfg.smoother.rng_seed), (9, 9, 9));
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{ not json").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("c.json"));
    }
}
