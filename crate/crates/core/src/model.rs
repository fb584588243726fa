//! Versioned JSON model file shared by the `fit`, `predict` and `ale`
//! commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{CvRow, FitConfig, FitResult, FittedModel};
use crate::ingestion::DatasetManifest;

pub const MODEL_FORMAT: &str = "degidx-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported model file (format `{format}`, version {version})")]
    Unsupported { path: PathBuf, format: String, version: u32 },
}

/// Everything needed to score new units, plus how the model was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: FittedModel,
    pub lambda_selected: f64,
    pub cv_table: Vec<CvRow>,
    pub converged: bool,
    pub fit_config: FitConfig,
    pub training_data: Option<DatasetManifest>,
}

impl ModelFile {
    pub fn new(result: &FitResult, cfg: &FitConfig, training_data: Option<DatasetManifest>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: result.model.clone(),
            lambda_selected: result.lambda_selected,
            cv_table: result.cv_table.clone(),
            converged: result.converged(),
            fit_config: cfg.clone(),
            training_data,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| ModelFileError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| ModelFileError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let json_err = |source| ModelFileError::Json {
            path: path.to_path_buf(),
            source,
        };
        let header: Header = serde_json::from_str(&text).map_err(json_err)?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(ModelFileError::Unsupported {
                path: path.to_path_buf(),
                format: header.format,
                version: header.version,
            });
        }
        serde_json::from_str(&text).map_err(json_err)
    }
}
