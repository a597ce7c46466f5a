//! Grid expansion arithmetic, exclusions, resume behavior, and record
//! completeness.

mod common;

use std::sync::Arc;

use survey_sim::backend::Backend;
use survey_sim::harness::{
    evaluate, execute, expand_grid, EvaluateOptions, Exclusion, GridDecoding, RecordStore,
};
use survey_sim::methods::MethodId;
use survey_sim::survey::{Language, ResponseOption, ScaleKind, ScaleVariant, SurveyQuestion};

use common::{fixture_echo_mock, load_fixture, single_model};

#[test]
fn full_grid_is_the_cross_product() {
    let (mut config, _, _) = load_fixture();
    config.grid.seeds = vec![1, 2, 3];
    config.grid.greedy = true;
    let grid = expand_grid(&config).unwrap();
    // 8 methods x 4 variants x (3 seeds + greedy) x 1 model x 1 question.
    assert_eq!(grid.len(), 128);
    let keys: std::collections::BTreeSet<String> = grid.iter().map(|c| c.key()).collect();
    assert_eq!(keys.len(), 128, "cells are distinct");
}

#[test]
fn single_seed_multi_question_grid() {
    let (mut config, _, _) = load_fixture();
    config.grid.seeds = vec![7];
    config.grid.greedy = false;
    // Seven ordinal questions, like a multi-question panel wave.
    config.questions = (0..7)
        .map(|i| {
            SurveyQuestion::new(
                format!("q{i}"),
                format!("Statement {i}?"),
                vec![
                    ResponseOption::new("agree", "Agree"),
                    ResponseOption::new("neutral", "Neutral"),
                    ResponseOption::new("disagree", "Disagree"),
                ],
                ScaleKind::Ordinal,
                Language::En,
            )
            .unwrap()
        })
        .collect();
    let grid = expand_grid(&config).unwrap();
    assert_eq!(grid.len(), 8 * 4 * 7); // one seed, no greedy
}

#[test]
fn exclusions_remove_matching_cells() {
    let (mut config, _, _) = load_fixture();
    config.grid.seeds = vec![];
    config.grid.greedy = true;
    // A backend without logprobs cannot run the token methods.
    config.grid.exclusions = vec![
        Exclusion {
            method: Some(MethodId::FirstTokenProbabilities),
            model: Some("echo".into()),
            variant: None,
            question: None,
        },
        Exclusion {
            method: Some(MethodId::FirstTokenRestricted),
            model: Some("echo".into()),
            variant: None,
            question: None,
        },
        Exclusion {
            method: Some(MethodId::AnswerPrefix),
            model: Some("echo".into()),
            variant: None,
            question: None,
        },
    ];
    let grid = expand_grid(&config).unwrap();
    assert_eq!(grid.len(), 5 * 4);
    assert!(grid
        .iter()
        .all(|c| !c.method.taxonomy().reads_token_probabilities));
}

#[test]
fn sweep_factors_multiply_sampled_cells_only() {
    let (mut config, _, _) = load_fixture();
    config.grid.methods = vec![MethodId::RestrictedChoice];
    config.grid.variants = vec![ScaleVariant::ALL[0]];
    config.grid.seeds = vec![1, 2];
    config.grid.greedy = true;
    config.grid.sweep_temperatures = vec![0.3, 0.7, 1.0];
    config.grid.sweep_top_k = vec![20, 50];
    let grid = expand_grid(&config).unwrap();
    // top_k multiplies everything; temperatures multiply seeded cells.
    assert_eq!(grid.len(), 2 * (1 + 2 * 3));
    let greedy_cells = grid
        .iter()
        .filter(|c| c.decoding == GridDecoding::Greedy)
        .count();
    assert_eq!(greedy_cells, 2);
    assert!(grid
        .iter()
        .filter(|c| c.decoding == GridDecoding::Greedy)
        .all(|c| c.temperature == 0.0));
}

#[test]
fn resume_skips_completed_cells_and_never_duplicates() {
    let (mut config, dataset, templates) = load_fixture();
    config.grid.methods = vec![MethodId::RestrictedChoice, MethodId::VerbalizedDistribution];
    config.grid.variants = ScaleVariant::ALL[..2].to_vec();
    config.grid.seeds = vec![];
    let mock = fixture_echo_mock(&config, &dataset, &templates);
    let models = single_model("echo", mock as Arc<dyn Backend>, 0.7);
    let env = survey_sim::harness::ExecEnv {
        dataset: &dataset,
        templates: &templates,
        models: &models,
        logprobs_top_k: 20,
        max_tokens: 512,
        open_max_tokens: 1024,
    };
    let grid = expand_grid(&config).unwrap();
    assert_eq!(grid.len(), 4);
    let respondents = dataset.respondents.len();

    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    // Interruption: only part of the grid ran.
    let partial = execute(&grid[..1], &env, &store, 2).unwrap();
    assert_eq!(partial.completed, respondents);

    // Resume over the full grid on a fresh store handle.
    let store = RecordStore::open(dir.path()).unwrap();
    let resumed = execute(&grid, &env, &store, 2).unwrap();
    assert_eq!(resumed.skipped, respondents);
    assert_eq!(resumed.completed, 3 * respondents);

    let records = store.load_all().unwrap();
    assert_eq!(records.len(), grid.len() * respondents);
    let keys: std::collections::BTreeSet<&str> = records.iter().map(|r| r.key.as_str()).collect();
    assert_eq!(keys.len(), records.len(), "zero duplicate records");

    // A third run touches nothing.
    let idle = execute(&grid, &env, &store, 2).unwrap();
    assert_eq!(idle.completed, 0);
    assert_eq!(idle.skipped, grid.len() * respondents);
}

#[test]
fn evaluation_contains_one_baseline_row_per_question() {
    let (mut config, dataset, templates) = load_fixture();
    config.grid.methods = vec![MethodId::RestrictedChoice];
    config.grid.variants = vec![ScaleVariant::ALL[0]];
    config.grid.seeds = vec![];
    let mock = fixture_echo_mock(&config, &dataset, &templates);
    let models = single_model("echo", mock as Arc<dyn Backend>, 0.7);
    let env = survey_sim::harness::ExecEnv {
        dataset: &dataset,
        templates: &templates,
        models: &models,
        logprobs_top_k: 20,
        max_tokens: 512,
        open_max_tokens: 1024,
    };
    let grid = expand_grid(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    execute(&grid, &env, &store, 2).unwrap();
    let records = store.load_all().unwrap();
    let evaluation = evaluate(&records, &dataset, &EvaluateOptions::default()).unwrap();
    let baseline_rows: Vec<_> = evaluation
        .rows
        .iter()
        .filter(|r| r.method == "stratified_baseline")
        .collect();
    assert_eq!(baseline_rows.len(), 1);
    assert_eq!(baseline_rows[0].question, dataset.questions[0].id);
    // Multiset preservation: the baseline's population distance is exactly
    // zero.
    let population = baseline_rows[0].metrics.population.as_ref().unwrap();
    assert_eq!(population.distance, 0.0);
}
