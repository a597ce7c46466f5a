#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use survey_sim::backend::Backend;
use survey_sim::harness::{ResolvedModel, RunConfig};
use survey_sim::methods::scripting;
use survey_sim::survey::{Dataset, TemplateSet};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_fixture() -> (RunConfig, Dataset, TemplateSet) {
    let config = RunConfig::load(&fixture_path("survey.toml")).expect("fixture config loads");
    let (dataset, templates) = config.load_dataset().expect("fixture dataset loads");
    (config, dataset, templates)
}

/// Wraps one backend as the fixture's "echo" model entry.
pub fn single_model(
    name: &str,
    backend: Arc<dyn Backend>,
    default_temperature: f64,
) -> BTreeMap<String, ResolvedModel> {
    BTreeMap::from([(
        name.to_string(),
        ResolvedModel {
            backend,
            default_temperature,
            reasoning_enabled: false,
        },
    )])
}

/// Echo mock for the whole fixture grid, kept concrete so tests can count
/// calls.
pub fn fixture_echo_mock(
    config: &RunConfig,
    dataset: &Dataset,
    templates: &TemplateSet,
) -> Arc<survey_sim::backend::MockBackend> {
    Arc::new(scripting::echo_ground_truth_mock(
        dataset,
        templates,
        &config.grid.methods,
        &config.grid.variants,
    ))
}
