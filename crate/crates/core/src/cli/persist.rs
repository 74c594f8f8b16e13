use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::data_io::{LabelMap, NormalizationStats};
use crate::error::{Error, Result};
use crate::model_eval::QualityMetrics;
use crate::svm::SvmModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Level the model was trained at (1 = finest).
    pub level: usize,
    pub fold: Option<usize>,
    pub dataset_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Held-out fold; absent when the model was fit on all rows.
    pub test: Option<QualityMetrics>,
    /// Every labeled row of the input file.
    pub dataset: QualityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: RunConfig,
    pub normalization: NormalizationStats,
    pub labels: LabelMap,
    pub model: SvmModel,
    pub provenance: Provenance,
    pub evaluation: Evaluation,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(malformed(format!("unsupported format version {v}"))),
            None => return Err(malformed("missing format_version".into())),
        }
        let file: Self = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        file.check().map_err(malformed)?;
        Ok(file)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let m = &self.model;
        let d = self.normalization.mean.len();
        if self.normalization.stddev.len() != d {
            return Err("normalization vectors differ in length".into());
        }
        if m.n_sv() == 0 || m.support_vectors.len() != m.n_sv() {
            return Err("support vectors and coefficients disagree".into());
        }
        if m.dim() != d {
            return Err(format!("model has {} features but normalization has {d}", m.dim()));
        }
        if !(m.params.c > 0.0 && m.params.gamma > 0.0) {
            return Err("non-positive C or gamma".into());
        }
        if self.normalization.stddev.iter().any(|&s| !(s > 0.0)) {
            return Err("non-positive standard deviation".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
