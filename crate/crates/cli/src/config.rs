//! Run configuration: built-in defaults, optionally overlaid with a
//! JSON file, then with command-line flags.

use std::path::Path;

use calikit_core::error::{Error, Result};
use calikit_core::gcn::TrainConfig;
use calikit_core::influence::SolverConfig;
use calikit_core::uncertainty::CoverageConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs beyond the dataset itself. One seed feeds
/// all named randomness streams, so any stage can be reproduced alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Training nodes sampled per original class.
    pub label_rate: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Class treated as the rare one; the rest are merged. Defaults to
    /// the smallest class of the dataset, ties broken downward.
    pub minority_class: Option<usize>,
    /// Reliability and adaptive bin count for reported metrics.
    pub bins: usize,
    /// Calibration penalty weight for joint training.
    pub lambda: f64,
    /// Epochs between uncertainty-target recomputations.
    pub refresh_every: usize,
    /// Epochs trained before the calibration penalty engages.
    pub warmup: usize,
    /// Label-smoothing mix for that baseline.
    pub epsilon: f64,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub coverage: CoverageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            label_rate: 20,
            val_size: 500,
            test_size: 1000,
            minority_class: None,
            bins: 20,
            lambda: 0.1,
            refresh_every: 10,
            warmup: 0,
            epsilon: 0.1,
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            coverage: CoverageConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, format!("bad config: {e}")))
    }

    /// Push the run seed into the trainer and check every invariant.
    pub fn finalize(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        if self.label_rate == 0 {
            return Err(Error::Domain("label rate must be positive".into()));
        }
        if self.val_size == 0 || self.test_size == 0 {
            return Err(Error::Domain("validation and test sizes must be positive".into()));
        }
        if self.bins == 0 {
            return Err(Error::Domain("bin count must be positive".into()));
        }
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!(
                "penalty weight {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.refresh_every == 0 {
            return Err(Error::Domain("refresh interval must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Domain(format!(
                "smoothing {} outside [0, 1)",
                self.epsilon
            )));
        }
        self.train.validate()?;
        self.solver.validate()?;
        self.coverage.validate()
    }
}
