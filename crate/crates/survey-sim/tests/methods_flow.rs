//! Method dispatch against scripted backends: taxonomy-conformant request
//! shapes, capability gating, degraded mode, the shared open-output cache,
//! and error propagation into outcomes.

mod common;

use std::sync::Arc;

use survey_sim::backend::{
    Backend, BackendCapabilities, FinishReason, MockBackend, ScriptedResponse, TokenLogprob,
};
use survey_sim::harness::{execute, ExecEnv, RecordStore, SimulationSpec};
use survey_sim::methods::{
    run_method, scripting, MethodId, OpenOutputCache, Prediction, RunContext,
};
use survey_sim::survey::{
    Dataset, Language, PromptTemplate, Respondent, ResponseOption, ScaleKind, ScaleVariant,
    SurveyQuestion, TemplateSet,
};

use common::{fixture_echo_mock, load_fixture, single_model};

struct Fixture {
    dataset: Dataset,
    templates: TemplateSet,
}

fn fixture() -> Fixture {
    let (_, dataset, templates) = load_fixture();
    Fixture { dataset, templates }
}

fn context<'a>(
    f: &'a Fixture,
    backend: &'a dyn Backend,
    cache: &'a OpenOutputCache,
    respondent: &'a Respondent,
    question: &'a SurveyQuestion,
    variant: ScaleVariant,
) -> RunContext<'a> {
    RunContext {
        backend,
        templates: &f.templates,
        schema: &f.dataset.schema,
        dataset_id: &f.dataset.id,
        model_id: "echo",
        question,
        respondent,
        variant,
        sampling: survey_sim::backend::SamplingParams::greedy(512),
        default_temperature: 0.7,
        derived_seed: 11,
        logprobs_top_k: 20,
        open_max_tokens: 1024,
        reasoning_enabled: false,
        open_cache: cache,
    }
}

fn truth_of<'a>(f: &'a Fixture, respondent: &Respondent) -> &'a str {
    let question = &f.dataset.questions[0];
    f.dataset
        .respondent(&respondent.id)
        .unwrap()
        .truth(&question.id)
        .unwrap()
}

#[test]
fn every_method_echoes_the_ground_truth() {
    let f = fixture();
    let (config, dataset, templates) = load_fixture();
    let mock = scripting::echo_ground_truth_mock(
        &dataset,
        &templates,
        &config.grid.methods,
        &config.grid.variants,
    );
    let question = &f.dataset.questions[0];
    let respondent = &f.dataset.respondents[0];
    let truth = truth_of(&f, respondent);
    for variant in ScaleVariant::ALL {
        let cache = OpenOutputCache::new();
        for method in MethodId::ALL {
            let ctx = context(&f, &mock, &cache, respondent, question, variant);
            let outcome = run_method(method, &ctx);
            assert_eq!(outcome.error, None, "{method} {}", variant.key());
            assert_eq!(outcome.finish_reason, FinishReason::Stop);
            let presented = survey_sim::survey::render_scale(question, variant);
            let derived = match &outcome.prediction.prediction {
                Prediction::Choice { option_id } => Some(option_id.clone()),
                Prediction::Distribution { probabilities, .. } => {
                    survey_sim::methods::argmax_option(probabilities, &presented)
                }
                Prediction::Invalid => None,
            };
            assert_eq!(
                derived.as_deref(),
                Some(truth),
                "{method} under {}",
                variant.key()
            );
            // Taxonomy: distribution methods yield distributions, choice
            // methods a single option.
            match &outcome.prediction.prediction {
                Prediction::Distribution { .. } => {
                    assert!(method.taxonomy().yields_distribution, "{method}")
                }
                Prediction::Choice { .. } => {
                    assert!(!method.taxonomy().yields_distribution, "{method}")
                }
                Prediction::Invalid => unreachable!(),
            }
        }
    }
}

#[test]
fn choice_capability_gate_fires_before_any_call() {
    let f = fixture();
    let mock = MockBackend::fixed(ScriptedResponse::text("Clinton")).with_capabilities(
        BackendCapabilities {
            supports_choice_set: false,
            ..BackendCapabilities::full(20)
        },
    );
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    let outcome = run_method(MethodId::FirstTokenRestricted, &ctx);
    assert!(outcome
        .error
        .as_deref()
        .unwrap()
        .contains("capability unsupported"));
    assert_eq!(outcome.prediction.prediction, Prediction::Invalid);
    assert_eq!(mock.call_count(), 0, "gate must fire before any call");
}

#[test]
fn schema_methods_degrade_to_instruction_only() {
    let f = fixture();
    let (config, dataset, templates) = load_fixture();
    let mock = scripting::echo_ground_truth_mock(
        &dataset,
        &templates,
        &config.grid.methods,
        &config.grid.variants,
    )
    .with_capabilities(BackendCapabilities {
        supports_json_schema: false,
        ..BackendCapabilities::full(20)
    });
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let respondent = &f.dataset.respondents[0];
    let ctx = context(
        &f,
        &mock,
        &cache,
        respondent,
        question,
        ScaleVariant::ALL[0],
    );
    let outcome = run_method(MethodId::RestrictedChoice, &ctx);
    assert!(
        outcome.degraded,
        "schema-less backend runs instruction-only"
    );
    assert_eq!(outcome.error, None);
    assert_eq!(
        outcome.prediction.prediction,
        Prediction::Choice {
            option_id: truth_of(&f, respondent).to_string()
        }
    );
}

#[test]
fn open_methods_share_one_step_one_call() {
    let f = fixture();
    let (config, dataset, templates) = load_fixture();
    let mock = scripting::echo_ground_truth_mock(
        &dataset,
        &templates,
        &config.grid.methods,
        &config.grid.variants,
    );
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let respondent = &f.dataset.respondents[0];
    let variant = ScaleVariant::ALL[0];

    let ctx = context(&f, &mock, &cache, respondent, question, variant);
    let first = run_method(MethodId::OpenEndedClassification, &ctx);
    let second = run_method(MethodId::OpenEndedDistribution, &ctx);
    assert_eq!(first.error, None);
    assert_eq!(second.error, None);
    assert_eq!(cache.len(), 1);

    let open_system = survey_sim::survey::prompts::system_prompt(
        survey_sim::survey::prompts::SystemPromptKind::OpenGeneration,
        question.language,
        &question.text,
        &survey_sim::survey::render_scale(question, variant),
        variant.labeling,
    );
    let open_calls = mock
        .calls()
        .iter()
        .filter(|c| c.system_text == open_system)
        .count();
    assert_eq!(open_calls, 1, "step 1 runs once for the method pair");
}

#[test]
fn backend_errors_become_invalid_records_not_panics() {
    let f = fixture();
    let mock = scripting::garbage_mock();
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    let outcome = run_method(MethodId::RestrictedChoice, &ctx);
    assert_eq!(outcome.finish_reason, FinishReason::Error);
    assert!(outcome
        .error
        .as_deref()
        .unwrap()
        .contains("constraint rejected"));
    assert_eq!(outcome.prediction.prediction, Prediction::Invalid);
}

#[test]
fn reasoning_segment_is_carried_into_the_prediction() {
    let f = fixture();
    let mock = MockBackend::fixed(
        ScriptedResponse::text("Clinton")
            .with_logprobs(vec![TokenLogprob::new("Clinton", 0.0)])
            .with_reasoning("deliberating"),
    );
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let mut ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    ctx.reasoning_enabled = true;
    let outcome = run_method(MethodId::FirstTokenProbabilities, &ctx);
    assert_eq!(outcome.error, None);
    assert_eq!(
        outcome.prediction.reasoning_text.as_deref(),
        Some("deliberating")
    );
    let Prediction::Distribution { probabilities, .. } = &outcome.prediction.prediction else {
        panic!("token method yields a distribution");
    };
    assert!((probabilities["clinton"] - 1.0).abs() < 1e-12);
}

#[test]
fn request_shapes_match_the_method_taxonomy() {
    let f = fixture();
    let (config, dataset, templates) = load_fixture();
    let question = &f.dataset.questions[0];
    let respondent = &f.dataset.respondents[0];
    let variant = ScaleVariant::ALL[0];

    for method in MethodId::ALL {
        let mock = scripting::echo_ground_truth_mock(
            &dataset,
            &templates,
            &config.grid.methods,
            &config.grid.variants,
        );
        let cache = OpenOutputCache::new();
        let ctx = context(&f, &mock, &cache, respondent, question, variant);
        let outcome = run_method(method, &ctx);
        assert_eq!(outcome.error, None, "{method}");

        let calls = mock.calls();
        let taxonomy = method.taxonomy();
        assert_eq!(
            calls.iter().any(|c| c.requested_logprobs),
            taxonomy.reads_token_probabilities,
            "{method}: logprobs read iff token method"
        );
        assert_eq!(
            calls.len(),
            if method.is_open_generation() { 2 } else { 1 },
            "{method}: open methods make two calls"
        );
        use survey_sim::backend::ConstraintKind;
        // The first call is vocabulary-restricted exactly when the
        // taxonomy says so; for the open methods the restriction moves to
        // the second, classification call.
        assert_eq!(
            calls[0].constraint != ConstraintKind::Unconstrained,
            taxonomy.restricts_vocabulary,
            "{method}: first-call restriction"
        );
        if method.is_open_generation() {
            assert_eq!(calls[1].constraint, ConstraintKind::JsonSchema);
        }
        assert_eq!(
            calls.iter().any(|c| c.has_prefill),
            method == MethodId::AnswerPrefix,
            "{method}: only the prefix method prefills"
        );
    }
}

#[test]
fn first_token_probabilities_aggregate_the_scripted_distribution() {
    let f = fixture();
    let mock = MockBackend::fixed(ScriptedResponse::text("Don").with_logprobs(vec![
        TokenLogprob::new(" Don", (0.4f64).ln()),
        TokenLogprob::new("Tru", (0.3f64).ln()),
        TokenLogprob::new("Cl", (0.2f64).ln()),
        TokenLogprob::new("Non", (0.1f64).ln()),
    ]));
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    let outcome = run_method(MethodId::FirstTokenProbabilities, &ctx);
    assert_eq!(outcome.error, None);
    let Prediction::Distribution { probabilities, .. } = &outcome.prediction.prediction else {
        panic!("expected a distribution");
    };
    assert!((probabilities["trump"] - 0.7).abs() < 1e-12);
    assert!((probabilities["clinton"] - 0.2).abs() < 1e-12);
    assert!((probabilities["non_voter"] - 0.1).abs() < 1e-12);
}

#[test]
fn open_step_scales_temperature_but_classification_keeps_the_default() {
    let f = fixture();
    let (config, dataset, templates) = load_fixture();
    let mock = scripting::echo_ground_truth_mock(
        &dataset,
        &templates,
        &config.grid.methods,
        &config.grid.variants,
    );
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let mut ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    ctx.sampling = survey_sim::backend::SamplingParams::sampled(1.3, 5, 512);
    ctx.default_temperature = 0.6;
    let outcome = run_method(MethodId::OpenEndedClassification, &ctx);
    assert_eq!(outcome.error, None);
    let calls = mock.calls();
    assert_eq!(calls.len(), 2);
    assert_eq!(
        calls[0].temperature, 1.3,
        "step 1 uses the cell temperature"
    );
    assert_eq!(calls[1].temperature, 0.6, "step 2 uses the model default");
}

#[test]
fn whitespace_open_output_is_skipped_as_invalid() {
    let f = fixture();
    let mock = MockBackend::fixed(ScriptedResponse::text("unused"));
    let cache = OpenOutputCache::new();
    let question = &f.dataset.questions[0];
    let ctx = context(
        &f,
        &mock,
        &cache,
        &f.dataset.respondents[0],
        question,
        ScaleVariant::ALL[0],
    );
    let presented = survey_sim::survey::render_scale(question, ScaleVariant::ALL[0]);
    let outcome = survey_sim::methods::classify_open(
        &ctx,
        &presented,
        "  \n\t ",
        survey_sim::methods::ClassifyMode::Choice,
    )
    .unwrap();
    assert_eq!(outcome.prediction.prediction, Prediction::Invalid);
    assert_eq!(
        mock.call_count(),
        0,
        "no classification call for empty text"
    );
}

#[test]
fn execute_counts_open_step_calls_across_the_pair() {
    let (config, dataset, templates) = load_fixture();
    let mock = fixture_echo_mock(&config, &dataset, &templates);
    let models = single_model("echo", mock.clone() as Arc<dyn Backend>, 0.7);
    let env = ExecEnv {
        dataset: &dataset,
        templates: &templates,
        models: &models,
        logprobs_top_k: 20,
        max_tokens: 512,
        open_max_tokens: 1024,
    };
    // Both open methods, two variants, greedy: 4 cells.
    let mut grid: Vec<SimulationSpec> = Vec::new();
    for method in [
        MethodId::OpenEndedClassification,
        MethodId::OpenEndedDistribution,
    ] {
        for &variant in &ScaleVariant::ALL[..2] {
            grid.push(SimulationSpec {
                dataset: dataset.id.clone(),
                question: dataset.questions[0].id.clone(),
                method,
                model: "echo".into(),
                variant,
                decoding: survey_sim::harness::GridDecoding::Greedy,
                temperature: 0.0,
                top_k: None,
            });
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    let summary = execute(&grid, &env, &store, 4).unwrap();
    assert_eq!(summary.completed, 4 * dataset.respondents.len());

    let open_system_prefix =
        "You are a political scientist predicting responses to the following question:";
    let open_calls = mock
        .calls()
        .iter()
        .filter(|c| {
            c.system_text.starts_with(open_system_prefix)
                && !c.system_text.contains("answer option")
        })
        .count();
    // cells/2 x respondents: the pair shares one step-1 call per cell pair.
    assert_eq!(open_calls, 2 * dataset.respondents.len());
}

fn german_fixture() -> (Dataset, TemplateSet) {
    let question = SurveyQuestion::new(
        "zweitstimme",
        "Welcher Partei habe ich meine Zweitstimme gegeben?",
        vec![
            ResponseOption::new("cdu", "CDU/CSU"),
            ResponseOption::new("spd", "SPD"),
            ResponseOption::new("gruene", "B\u{fc}ndnis 90/Die Gr\u{fc}nen").with_aliases(["Die Gr\u{fc}nen"]),
        ],
        ScaleKind::Categorical,
        Language::De,
    )
    .unwrap();
    let truths = ["cdu", "spd", "gruene"];
    let respondents: Vec<Respondent> = (0..6)
        .map(|i| Respondent {
            id: format!("d{i}"),
            attributes: std::collections::BTreeMap::from([
                ("alter".to_string(), (25 + 9 * i).to_string()),
                ("bundesland".to_string(), format!("Land {i}")),
            ]),
            ground_truth: std::collections::BTreeMap::from([(
                "zweitstimme".to_string(),
                truths[i % 3].to_string(),
            )]),
        })
        .collect();
    let schema = survey_sim::survey::Schema {
        id_column: "id".into(),
        attributes: vec![
            survey_sim::survey::AttributeSpec::new("alter"),
            survey_sim::survey::AttributeSpec::new("bundesland"),
        ],
        ground_truth: vec![],
    };
    let dataset = Dataset {
        id: "gles-like".into(),
        language: Language::De,
        questions: vec![question],
        respondents,
        schema,
    };
    let template = PromptTemplate::parse(
        "Ich bin {alter} Jahre alt. |Ich lebe in {bundesland}.|\n\nWelcher Partei habe ich meine Zweitstimme gegeben?",
        "|",
    )
    .unwrap();
    (dataset, TemplateSet::new(template, Language::De))
}

#[test]
fn german_dataset_round_trips_through_every_method() {
    let (dataset, templates) = german_fixture();
    let f = Fixture {
        dataset: dataset.clone(),
        templates: templates.clone(),
    };
    let mock = scripting::echo_ground_truth_mock(
        &dataset,
        &templates,
        &MethodId::ALL,
        &ScaleVariant::ALL,
    );
    let question = &f.dataset.questions[0];
    for variant in ScaleVariant::ALL {
        let cache = OpenOutputCache::new();
        for respondent in &f.dataset.respondents {
            let truth = respondent.truth(&question.id).unwrap().to_string();
            for method in MethodId::ALL {
                let ctx = context(&f, &mock, &cache, respondent, question, variant);
                let outcome = run_method(method, &ctx);
                assert_eq!(
                    outcome.error,
                    None,
                    "{method} {} {}",
                    variant.key(),
                    respondent.id
                );
                let presented = survey_sim::survey::render_scale(question, variant);
                let derived = match &outcome.prediction.prediction {
                    Prediction::Choice { option_id } => Some(option_id.clone()),
                    Prediction::Distribution { probabilities, .. } => {
                        survey_sim::methods::argmax_option(probabilities, &presented)
                    }
                    Prediction::Invalid => None,
                };
                assert_eq!(derived.as_deref(), Some(truth.as_str()), "{method}");
            }
        }
    }
    // The German prompts carry the localized keys and prefill.
    let calls = mock.calls();
    assert!(calls
        .iter()
        .any(|c| c.system_text.contains("\"antwort\":")));
    assert!(calls
        .iter()
        .any(|c| c.system_text.contains("Du bist ein Politikwissenschaftler")));
    assert!(calls.iter().any(|c| c.has_prefill));
}
