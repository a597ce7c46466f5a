//! Grid execution: a worker pool consumes (cell, respondent) tasks with
//! bounded concurrency; completed keys are skipped on resume; every
//! attempted task yields exactly one persisted record.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::backend::Backend;
use crate::methods::{run_method, MethodOutcome, OpenOutputCache, RunContext};
use crate::survey::{Dataset, TemplateSet};

use super::spec::SimulationSpec;
use super::store::{RecordStore, RunRecord, StoreError};
use super::HarnessError;

/// A model backend plus its run-relevant settings.
pub struct ResolvedModel {
    pub backend: Arc<dyn Backend>,
    pub default_temperature: f64,
    pub reasoning_enabled: bool,
}

/// Everything execution needs besides the grid itself.
pub struct ExecEnv<'a> {
    pub dataset: &'a Dataset,
    pub templates: &'a TemplateSet,
    pub models: &'a BTreeMap<String, ResolvedModel>,
    pub logprobs_top_k: u32,
    pub max_tokens: u32,
    pub open_max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecSummary {
    pub completed: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// Runs every (cell, respondent) pair once. Resume: keys already present
/// in the store are skipped. Backend errors are recorded, not fatal; store
/// I/O failures abort the run.
pub fn execute(
    grid: &[SimulationSpec],
    env: &ExecEnv,
    store: &RecordStore,
    max_in_flight: usize,
) -> Result<ExecSummary, HarnessError> {
    for spec in grid {
        if !env.models.contains_key(&spec.model) {
            return Err(HarnessError::UnknownModel(spec.model.clone()));
        }
    }

    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for (spec_index, _) in grid.iter().enumerate() {
        for (respondent_index, _) in env.dataset.respondents.iter().enumerate() {
            tasks.push((spec_index, respondent_index));
        }
    }

    let open_cache = OpenOutputCache::new();
    let next_task = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let aborted = AtomicBool::new(false);
    let store_error: Mutex<Option<StoreError>> = Mutex::new(None);

    let workers = max_in_flight.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if aborted.load(Ordering::SeqCst) {
                    return;
                }
                let index = next_task.fetch_add(1, Ordering::SeqCst);
                let Some(&(spec_index, respondent_index)) = tasks.get(index) else {
                    return;
                };
                let spec = &grid[spec_index];
                let respondent = &env.dataset.respondents[respondent_index];
                let key = spec.record_key(&respondent.id);
                if store.contains(&key) {
                    skipped.fetch_add(1, Ordering::SeqCst);
                    continue;
                }
                let model = &env.models[&spec.model];
                let Some(question) = env.dataset.question(&spec.question) else {
                    failed.fetch_add(1, Ordering::SeqCst);
                    continue;
                };
                let ctx = RunContext {
                    backend: model.backend.as_ref(),
                    templates: env.templates,
                    schema: &env.dataset.schema,
                    dataset_id: &env.dataset.id,
                    model_id: &spec.model,
                    question,
                    respondent,
                    variant: spec.variant,
                    sampling: spec.sampling(env.max_tokens),
                    default_temperature: model.default_temperature,
                    derived_seed: spec.derived_seed(&respondent.id),
                    logprobs_top_k: env.logprobs_top_k,
                    open_max_tokens: env.open_max_tokens,
                    reasoning_enabled: model.reasoning_enabled,
                    open_cache: &open_cache,
                };
                let outcome = run_method(spec.method, &ctx);
                if outcome.error.is_some() {
                    failed.fetch_add(1, Ordering::SeqCst);
                } else {
                    completed.fetch_add(1, Ordering::SeqCst);
                }
                let record = make_record(spec, &respondent.id, key, outcome);
                if let Err(e) = store.append(&record) {
                    *store_error.lock().unwrap() = Some(e);
                    aborted.store(true, Ordering::SeqCst);
                    return;
                }
            });
        }
    });

    if let Some(e) = store_error.lock().unwrap().take() {
        return Err(HarnessError::Store(e));
    }
    Ok(ExecSummary {
        completed: completed.load(Ordering::SeqCst),
        failed: failed.load(Ordering::SeqCst),
        skipped: skipped.load(Ordering::SeqCst),
    })
}

fn make_record(
    spec: &SimulationSpec,
    respondent_id: &str,
    key: String,
    outcome: MethodOutcome,
) -> RunRecord {
    RunRecord {
        key,
        dataset: spec.dataset.clone(),
        question: spec.question.clone(),
        method: spec.method,
        model: spec.model.clone(),
        variant: spec.variant,
        decoding: spec.decoding,
        temperature: spec.temperature,
        top_k: spec.top_k,
        respondent: respondent_id.to_string(),
        raw_output: outcome.prediction.raw_output,
        reasoning_text: outcome.prediction.reasoning_text,
        validity: outcome.prediction.prediction.validity(),
        prediction: outcome.prediction.prediction,
        finish_reason: outcome.finish_reason,
        error: outcome.error,
        degraded: outcome.degraded,
        elapsed_ms: outcome.elapsed_ms,
    }
}
