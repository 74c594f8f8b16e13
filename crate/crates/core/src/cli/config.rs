use serde::{Deserialize, Serialize};

use crate::coarsening::CoarseningConfig;
use crate::data_io::{CsvOptions, DataFormat};
use crate::error::{Error, Result};
use crate::knn_graph::DEFAULT_K;
use crate::param_fit::NudConfig;
use crate::refinement::{PipelineConfig, RefinementConfig};
use crate::svm::SolverConfig;

/// Every tunable of a training run. Stored in each output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format: DataFormat,
    pub csv: CsvOptions,
    pub kfold: usize,
    pub seed: u64,
    pub knn: usize,
    pub coarsening: CoarseningConfig,
    pub refinement: RefinementConfig,
    pub nud: NudConfig,
    pub solver: SolverConfig,
    pub val_min_ratio: f64,
    pub val_maj_ratio: f64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: DataFormat::Libsvm,
            csv: CsvOptions::default(),
            kfold: 5,
            seed: 0,
            knn: DEFAULT_K,
            coarsening: CoarseningConfig::default(),
            refinement: RefinementConfig::default(),
            nud: NudConfig::default(),
            solver: SolverConfig::default(),
            val_min_ratio: 0.5,
            val_maj_ratio: 0.1,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kfold < 2 {
            return Err(Error::config(format!("--kfold must be at least 2, got {}", self.kfold)));
        }
        if self.knn == 0 {
            return Err(Error::config("--knn must be at least 1"));
        }
        for (flag, r) in [("--val-min-ratio", self.val_min_ratio), ("--val-maj-ratio", self.val_maj_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::config(format!("{flag} must lie in (0, 1), got {r}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("--threads must be at least 1"));
        }
        if !(self.solver.tolerance > 0.0) || self.solver.max_iterations == 0 {
            return Err(Error::config("solver tolerance and iteration cap must be positive"));
        }
        self.coarsening.validate()?;
        self.refinement.validate(self.coarsening.coarsest_size)?;
        self.nud.validate()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            nud: self.nud.clone(),
            solver: self.solver.clone(),
            refinement: self.refinement.clone(),
        }
    }

    /// Seed for the validation draw of one fold.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
    }
}
