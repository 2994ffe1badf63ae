use std::path::Path;

use boostwood_core::{BoostConfig, BoostedForest, Dataset, ForestStage, ResidualMode, TreeModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub n: usize,
    pub d: usize,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub residual_mode: ResidualMode,
    pub seed: u64,
    /// In-sample mean squared residual, used for prediction intervals.
    pub residual_mse: f64,
}

/// A fitted model as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format_version: u32,
    pub config: BoostConfig,
    pub stages: Vec<ForestStage>,
    pub training: TrainingInfo,
}

impl ModelArchive {
    pub fn new(model: &BoostedForest, data: &Dataset) -> Self {
        ModelArchive {
            format_version: FORMAT_VERSION,
            config: model.config().clone(),
            stages: model.stages().to_vec(),
            training: TrainingInfo {
                n: model.training_n(),
                d: model.d(),
                feature_names: data.feature_names().to_vec(),
                target_name: data.target_name().to_string(),
                residual_mode: model.config().residual_mode,
                seed: model.config().forest.seed,
                residual_mse: model.residual_mse(),
            },
        }
    }

    /// Rebuilds the model, re-checking every tree.
    pub fn model(&self) -> CliResult<BoostedForest> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let trees = stage
                .trees()
                .iter()
                .map(|t| TreeModel::from_nodes(t.nodes().to_vec(), t.k(), t.d()))
                .collect::<Result<Vec<_>, _>>()?;
            stages.push(ForestStage::from_parts(
                trees,
                stage.inclusion().clone(),
                stage.config().clone(),
            )?);
        }
        if stages.first().is_some_and(|s| s.d() != self.training.d)
            || self.training.feature_names.len() != self.training.d
        {
            return Err(CliError::Archive("archive metadata disagrees with its trees".into()));
        }
        Ok(BoostedForest::from_parts(
            stages,
            self.config.clone(),
            self.training.n,
            self.training.residual_mse,
        )?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("archive serialises")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Archive(format!("archive is not valid JSON: {e}")))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CliError::Archive(format!(
                    "archive format version {v} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(CliError::Archive("archive has no format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Archive(format!("malformed archive: {e}")))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Archive(format!("cannot read archive {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}
