//! Simulation specifications and grid expansion.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Decoding, SamplingParams};
use crate::methods::MethodId;
use crate::survey::ScaleVariant;

use super::config::{ConfigError, GridConfig, RunConfig};

/// Greedy decoding is a distinguished grid factor rather than temperature
/// zero, so reports can aggregate greedy vs default-temperature runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridDecoding {
    Greedy,
    Seeded { seed: u64 },
}

impl GridDecoding {
    pub fn key(self) -> String {
        match self {
            GridDecoding::Greedy => "greedy".to_string(),
            GridDecoding::Seeded { seed } => format!("seed-{seed}"),
        }
    }
}

/// One cell of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub dataset: String,
    pub question: String,
    pub method: MethodId,
    pub model: String,
    pub variant: ScaleVariant,
    pub decoding: GridDecoding,
    /// Resolved sampling temperature; 0 for greedy cells.
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

impl SimulationSpec {
    /// Canonical key; any field change changes it.
    pub fn key(&self) -> String {
        format!(
            "ds={};q={};m={};model={};v={};dec={};t={:x};k={}",
            self.dataset,
            self.question,
            self.method.key(),
            self.model,
            self.variant.key(),
            self.decoding.key(),
            self.temperature.to_bits(),
            self.top_k.map_or("-".to_string(), |k| k.to_string()),
        )
    }

    /// Stable resume key of one (cell, respondent) record.
    pub fn record_key(&self, respondent_id: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.key().as_bytes());
        hasher.update(b"|");
        hasher.update(respondent_id.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Backend sampling parameters for this cell.
    pub fn sampling(&self, max_tokens: u32) -> SamplingParams {
        let decoding = match self.decoding {
            GridDecoding::Greedy => Decoding::Greedy,
            GridDecoding::Seeded { seed } => Decoding::Sampled {
                temperature: self.temperature,
                seed,
            },
        };
        SamplingParams {
            decoding,
            top_k: self.top_k,
            max_tokens,
        }
    }

    /// Per-(cell, respondent) sub-seed, so cells stay independent where a
    /// derived random stream is needed (FNV-1a over the record key).
    pub fn derived_seed(&self, respondent_id: &str) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.key().bytes().chain(*b"|").chain(respondent_id.bytes()) {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// Expands the full cross product of grid factors, minus exclusions, in a
/// deterministic order.
pub fn expand_grid(config: &RunConfig) -> Result<Vec<SimulationSpec>, ConfigError> {
    let grid = &config.grid;
    let mut cells = Vec::new();
    let top_ks: Vec<Option<u32>> = if grid.sweep_top_k.is_empty() {
        vec![None]
    } else {
        grid.sweep_top_k.iter().copied().map(Some).collect()
    };
    for model_name in &grid.models {
        let model = config
            .models
            .get(model_name)
            .ok_or_else(|| ConfigError::UnknownModel(model_name.clone()))?;
        let temperatures: Vec<f64> = if grid.sweep_temperatures.is_empty() {
            vec![model.default_temperature]
        } else {
            grid.sweep_temperatures.clone()
        };
        for question in &config.questions {
            for &method in &grid.methods {
                for &variant in &grid.variants {
                    for &top_k in &top_ks {
                        let mut push = |decoding: GridDecoding, temperature: f64| {
                            cells.push(SimulationSpec {
                                dataset: config.dataset_id.clone(),
                                question: question.id.clone(),
                                method,
                                model: model_name.clone(),
                                variant,
                                decoding,
                                temperature,
                                top_k,
                            });
                        };
                        if grid.greedy {
                            push(GridDecoding::Greedy, 0.0);
                        }
                        for &seed in &grid.seeds {
                            for &temperature in &temperatures {
                                push(GridDecoding::Seeded { seed }, temperature);
                            }
                        }
                    }
                }
            }
        }
    }
    let kept: Vec<SimulationSpec> = cells
        .into_iter()
        .filter(|cell| !is_excluded(cell, grid))
        .collect();
    Ok(kept)
}

fn is_excluded(cell: &SimulationSpec, grid: &GridConfig) -> bool {
    grid.exclusions.iter().any(|e| {
        e.method.is_none_or(|m| m == cell.method)
            && e.model.as_ref().is_none_or(|m| *m == cell.model)
            && e.variant.is_none_or(|v| v == cell.variant)
            && e.question.as_ref().is_none_or(|q| *q == cell.question)
    })
}
