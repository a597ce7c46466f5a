//! Grid expansion, execution with bounded concurrency and resume, JSONL
//! persistence, evaluation, and report generation.

pub mod config;
mod evaluate;
mod execute;
mod report;
mod spec;
mod store;

pub use config::{
    BackendKind, ConfigError, Exclusion, GridConfig, ModelConfig, RunConfig, RunSettings,
};
pub use evaluate::{evaluate, EvalRow, EvaluateOptions, Evaluation};
pub use execute::{execute, ExecEnv, ExecSummary, ResolvedModel};
pub use report::write_reports;
pub use spec::{expand_grid, GridDecoding, SimulationSpec};
pub use store::{RecordStore, RunRecord, StoreError};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::metrics::MetricError;
use crate::survey::{BaselineError, Dataset, TemplateSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("unknown model {0:?} in grid")]
    UnknownModel(String),
    #[error("records reference unknown question {0:?}")]
    MissingQuestion(String),
    #[error("no respondent has ground truth for question {0:?}")]
    MissingGroundTruth(String),
    #[error("no records found")]
    NoRecords,
    #[error("{0}")]
    Io(String),
}

/// Dataset, templates, and instantiated backends of one run config.
pub struct Prepared {
    pub dataset: Dataset,
    pub templates: TemplateSet,
    pub models: BTreeMap<String, ResolvedModel>,
}

impl Prepared {
    pub fn from_config(config: &RunConfig) -> Result<Self, HarnessError> {
        let (dataset, templates) = config.load_dataset()?;
        let mut models = BTreeMap::new();
        for name in &config.grid.models {
            let model = config
                .models
                .get(name)
                .ok_or_else(|| HarnessError::UnknownModel(name.clone()))?;
            let backend = config.build_backend(model, &dataset, &templates)?;
            models.insert(
                name.clone(),
                ResolvedModel {
                    backend,
                    default_temperature: model.default_temperature,
                    reasoning_enabled: model.reasoning_enabled,
                },
            );
        }
        Ok(Prepared {
            dataset,
            templates,
            models,
        })
    }

    pub fn exec_env(&self, config: &RunConfig) -> ExecEnv<'_> {
        ExecEnv {
            dataset: &self.dataset,
            templates: &self.templates,
            models: &self.models,
            logprobs_top_k: config.run.logprobs_top_k,
            max_tokens: config.run.max_tokens,
            open_max_tokens: config.run.open_max_tokens,
        }
    }
}
