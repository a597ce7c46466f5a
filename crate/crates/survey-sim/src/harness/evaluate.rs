//! Evaluation of persisted run records: per-specification metrics,
//! cross-specification agreement facets, the stratified baseline row, and
//! the validity-based exclusion gate.

use std::collections::{BTreeMap, BTreeSet};

use crate::methods::{argmax_option, Prediction};
use crate::metrics::{
    accuracy, apply_exclusion, build_subpopulations, distance_correlation,
    fleiss_kappa_from_labels, jsd, macro_f1, mean_brier, subpop_distribution, to_distribution,
    tv_distance, validity_stats, wasserstein1, AlignmentValues, ResponseDistribution, SpecMetrics,
    SubpopulationKey,
};
use crate::survey::{
    render_scale, stratified_baseline, Dataset, PresentedScale, ScaleKind, ScaleVariant,
    SurveyQuestion,
};
use crate::token_map::Validity;

use super::spec::{GridDecoding, SimulationSpec};
use super::store::RunRecord;
use super::HarnessError;

#[derive(Debug, Clone, Copy)]
pub struct EvaluateOptions {
    /// Specifications with an invalid fraction above this lose alignment,
    /// robustness, and calibration fields.
    pub threshold: f64,
    /// Shuffle seed of the stratified baseline row.
    pub baseline_seed: u64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            threshold: crate::metrics::DEFAULT_EXCLUSION_THRESHOLD,
            baseline_seed: 0,
        }
    }
}

/// One output row: a simulation specification (or the baseline) with its
/// metrics.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub dataset: String,
    pub question: String,
    /// Method key, or "stratified_baseline".
    pub method: String,
    pub model: String,
    pub variant: Option<ScaleVariant>,
    pub decoding: String,
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub scale_kind: ScaleKind,
    pub metrics: SpecMetrics,
}

impl EvalRow {
    fn sort_key(&self) -> (String, String, String, String, String, String, u64, u32) {
        (
            self.dataset.clone(),
            self.question.clone(),
            self.method.clone(),
            self.model.clone(),
            self.variant.map(|v| v.key()).unwrap_or("-").to_string(),
            self.decoding.clone(),
            self.temperature.unwrap_or(0.0).to_bits(),
            self.top_k.unwrap_or(0),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    /// Member counts per subpopulation, for size-weighted aggregation
    /// views.
    pub subpop_sizes: BTreeMap<SubpopulationKey, usize>,
}

struct SpecGroup<'a> {
    spec: SimulationSpec,
    by_respondent: BTreeMap<&'a str, &'a RunRecord>,
}

/// Computes all metrics for every specification found in the records, adds
/// one stratified baseline row per question, and applies the exclusion
/// rule.
pub fn evaluate(
    records: &[RunRecord],
    dataset: &Dataset,
    options: &EvaluateOptions,
) -> Result<Evaluation, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }

    let mut groups: BTreeMap<String, SpecGroup> = BTreeMap::new();
    for record in records {
        let key = record.spec_key();
        let group = groups.entry(key).or_insert_with(|| SpecGroup {
            spec: record.spec(),
            by_respondent: BTreeMap::new(),
        });
        group.by_respondent.insert(&record.respondent, record);
    }

    let subpops = build_subpopulations(&dataset.respondents, &dataset.schema.attributes);
    let subpop_sizes: BTreeMap<SubpopulationKey, usize> = subpops
        .iter()
        .map(|(key, members)| (key.clone(), members.len()))
        .collect();

    let mut rows = Vec::new();
    let mut metrics_by_key: BTreeMap<String, SpecMetrics> = BTreeMap::new();
    for (key, group) in &groups {
        let question = dataset
            .question(&group.spec.question)
            .ok_or_else(|| HarnessError::MissingQuestion(group.spec.question.clone()))?;
        let metrics = spec_metrics(group, question, dataset, &subpops)?;
        metrics_by_key.insert(key.clone(), metrics);
    }

    attach_kappas(&groups, dataset, &mut metrics_by_key);

    for (key, group) in &groups {
        let question = dataset
            .question(&group.spec.question)
            .expect("checked above");
        let mut metrics = metrics_by_key.remove(key).expect("computed above");
        apply_exclusion(&mut metrics, options.threshold);
        rows.push(EvalRow {
            dataset: group.spec.dataset.clone(),
            question: group.spec.question.clone(),
            method: group.spec.method.key().to_string(),
            model: group.spec.model.clone(),
            variant: Some(group.spec.variant),
            decoding: group.spec.decoding.key(),
            temperature: Some(group.spec.temperature),
            top_k: group.spec.top_k,
            scale_kind: question.scale_kind,
            metrics,
        });
    }

    // One stratified baseline row per question.
    for question in &dataset.questions {
        if !records.iter().any(|r| r.question == question.id) {
            continue;
        }
        rows.push(baseline_row(
            dataset,
            question,
            options.baseline_seed,
            &subpops,
        )?);
    }

    rows.sort_by_key(|row| row.sort_key());
    Ok(Evaluation { rows, subpop_sizes })
}

/// The choice an individual prediction reduces to: stored choices as-is,
/// distributions by argmax with presentation-order tie-break, invalid as
/// none.
fn derived_choice(record: &RunRecord, presented: &PresentedScale) -> Option<String> {
    match &record.prediction {
        Prediction::Choice { option_id } => Some(option_id.clone()),
        Prediction::Distribution { probabilities, .. } => argmax_option(probabilities, presented),
        Prediction::Invalid => None,
    }
}

struct PredictionSet {
    /// (derived choice, truth) per respondent with ground truth.
    pairs: Vec<(Option<String>, String)>,
    generated: BTreeMap<String, ResponseDistribution>,
    human: BTreeMap<String, ResponseDistribution>,
    members: BTreeSet<String>,
    validities: Vec<Validity>,
}

fn spec_metrics(
    group: &SpecGroup,
    question: &SurveyQuestion,
    dataset: &Dataset,
    subpops: &BTreeMap<SubpopulationKey, BTreeSet<String>>,
) -> Result<SpecMetrics, HarnessError> {
    let presented = render_scale(question, group.spec.variant);
    let n_options = question.options.len();

    let mut set = PredictionSet {
        pairs: Vec::new(),
        generated: BTreeMap::new(),
        human: BTreeMap::new(),
        members: BTreeSet::new(),
        validities: Vec::new(),
    };
    for respondent in &dataset.respondents {
        let Some(record) = group.by_respondent.get(respondent.id.as_str()) else {
            continue;
        };
        set.validities.push(record.validity);
        let Some(truth) = respondent.truth(&question.id) else {
            continue;
        };
        set.members.insert(respondent.id.clone());
        set.pairs
            .push((derived_choice(record, &presented), truth.to_string()));
        if let Some(dist) = to_distribution(&record.prediction, question) {
            set.generated.insert(respondent.id.clone(), dist);
        }
        let truth_index = question.option_index(truth).expect("validated at load");
        set.human.insert(
            respondent.id.clone(),
            ResponseDistribution::one_hot(n_options, truth_index).expect("valid index"),
        );
    }
    compute_metrics(&set, question, subpops)
}

fn compute_metrics(
    set: &PredictionSet,
    question: &SurveyQuestion,
    subpops: &BTreeMap<SubpopulationKey, BTreeSet<String>>,
) -> Result<SpecMetrics, HarnessError> {
    if set.pairs.is_empty() {
        return Err(HarnessError::MissingGroundTruth(question.id.clone()));
    }
    let pair_refs: Vec<(Option<&str>, &str)> = set
        .pairs
        .iter()
        .map(|(pred, truth)| (pred.as_deref(), truth.as_str()))
        .collect();
    let macro_f1 = macro_f1(&pair_refs)?;
    let accuracy = accuracy(&pair_refs)?;
    let (invalid_fraction, partial_fraction) = validity_stats(&set.validities);

    let distance = |p: &ResponseDistribution, q: &ResponseDistribution| match question.scale_kind {
        ScaleKind::Categorical => tv_distance(p.values(), q.values()),
        ScaleKind::Ordinal => wasserstein1(p.values(), q.values()),
    };

    let population = match subpop_distribution(&set.generated, &set.members) {
        Ok(generated) => {
            let human =
                subpop_distribution(&set.human, &set.members).map_err(HarnessError::Metric)?;
            Some(AlignmentValues {
                distance: distance(&generated, &human).map_err(HarnessError::Metric)?,
                jsd: jsd(generated.values(), human.values()).map_err(HarnessError::Metric)?,
            })
        }
        Err(_) => None,
    };

    let mut per_subpop = BTreeMap::new();
    let mut dcor_generated = Vec::new();
    let mut dcor_human = Vec::new();
    for (key, members) in subpops {
        let members_with_truth: BTreeSet<String> =
            members.intersection(&set.members).cloned().collect();
        if members_with_truth.is_empty() {
            continue;
        }
        let Ok(generated) = subpop_distribution(&set.generated, &members_with_truth) else {
            continue;
        };
        let human =
            subpop_distribution(&set.human, &members_with_truth).map_err(HarnessError::Metric)?;
        per_subpop.insert(
            key.clone(),
            AlignmentValues {
                distance: distance(&generated, &human).map_err(HarnessError::Metric)?,
                jsd: jsd(generated.values(), human.values()).map_err(HarnessError::Metric)?,
            },
        );
        dcor_generated.push(generated.values().to_vec());
        dcor_human.push(human.values().to_vec());
    }

    let dcor = if dcor_generated.len() >= 2 {
        Some(distance_correlation(&dcor_generated, &dcor_human).map_err(HarnessError::Metric)?)
    } else {
        None
    };

    let brier_pairs: Vec<(ResponseDistribution, usize)> = set
        .members
        .iter()
        .filter_map(|id| {
            let dist = set.generated.get(id)?.clone();
            let truth = set.human.get(id)?;
            let truth_index = truth.values().iter().position(|&v| v == 1.0)?;
            Some((dist, truth_index))
        })
        .collect();
    let brier = mean_brier(&brier_pairs);

    Ok(SpecMetrics {
        macro_f1,
        accuracy,
        invalid_fraction,
        partial_fraction,
        population,
        subpopulations: Some(per_subpop),
        dcor,
        brier,
        kappa_scales: None,
        kappa_seeds: None,
    })
}

const INVALID_CATEGORY: &str = "\u{0}invalid";

/// Fleiss' kappa across the scale variants (raters = the four variants)
/// and across the sampled seeds (raters = the seeds), attached to every
/// member specification of the facet group. Invalid predictions are rated
/// as their own category.
fn attach_kappas(
    groups: &BTreeMap<String, SpecGroup>,
    dataset: &Dataset,
    metrics_by_key: &mut BTreeMap<String, SpecMetrics>,
) {
    let mut scale_facets: BTreeMap<String, Vec<&String>> = BTreeMap::new();
    let mut seed_facets: BTreeMap<String, Vec<&String>> = BTreeMap::new();
    for (key, group) in groups {
        let spec = &group.spec;
        let scale_facet = format!(
            "{}|{}|{}|{}|{}|{:x}|{:?}",
            spec.dataset,
            spec.question,
            spec.method.key(),
            spec.model,
            spec.decoding.key(),
            spec.temperature.to_bits(),
            spec.top_k
        );
        scale_facets.entry(scale_facet).or_default().push(key);
        if matches!(spec.decoding, GridDecoding::Seeded { .. }) {
            let seed_facet = format!(
                "{}|{}|{}|{}|{}|{:x}|{:?}",
                spec.dataset,
                spec.question,
                spec.method.key(),
                spec.model,
                spec.variant.key(),
                spec.temperature.to_bits(),
                spec.top_k
            );
            seed_facets.entry(seed_facet).or_default().push(key);
        }
    }

    for (facet, assign) in [(&scale_facets, 0usize), (&seed_facets, 1usize)] {
        for member_keys in facet.values() {
            if member_keys.len() < 2 {
                continue;
            }
            let Some(kappa) = facet_kappa(groups, dataset, member_keys) else {
                continue;
            };
            for key in member_keys {
                if let Some(metrics) = metrics_by_key.get_mut(*key) {
                    if assign == 0 {
                        metrics.kappa_scales = Some(kappa);
                    } else {
                        metrics.kappa_seeds = Some(kappa);
                    }
                }
            }
        }
    }
}

fn facet_kappa(
    groups: &BTreeMap<String, SpecGroup>,
    dataset: &Dataset,
    member_keys: &[&String],
) -> Option<f64> {
    // Items are the respondents rated by every member specification.
    let mut shared: Option<BTreeSet<&str>> = None;
    for key in member_keys {
        let ids: BTreeSet<&str> = groups[*key].by_respondent.keys().copied().collect();
        shared = Some(match shared {
            None => ids,
            Some(prev) => prev.intersection(&ids).copied().collect(),
        });
    }
    let shared = shared?;
    if shared.is_empty() {
        return None;
    }
    // The presented scale depends on the rater's spec, not the respondent.
    let rater_presented: Vec<PresentedScale> = member_keys
        .iter()
        .map(|key| {
            let spec = &groups[*key].spec;
            let question = dataset.question(&spec.question)?;
            Some(render_scale(question, spec.variant))
        })
        .collect::<Option<_>>()?;
    let mut items: Vec<Vec<String>> = Vec::with_capacity(shared.len());
    for respondent in &shared {
        let mut ratings = Vec::with_capacity(member_keys.len());
        for (rater, key) in member_keys.iter().enumerate() {
            let record = groups[*key].by_respondent[respondent];
            let rating = derived_choice(record, &rater_presented[rater])
                .unwrap_or_else(|| INVALID_CATEGORY.to_string());
            ratings.push(rating);
        }
        items.push(ratings);
    }
    fleiss_kappa_from_labels(&items).ok()
}

fn baseline_row(
    dataset: &Dataset,
    question: &SurveyQuestion,
    seed: u64,
    subpops: &BTreeMap<SubpopulationKey, BTreeSet<String>>,
) -> Result<EvalRow, HarnessError> {
    let with_truth: Vec<crate::survey::Respondent> = dataset
        .respondents
        .iter()
        .filter(|r| r.truth(&question.id).is_some())
        .cloned()
        .collect();
    let assignment = stratified_baseline(&with_truth, &question.id, seed)?;
    let n_options = question.options.len();

    let mut set = PredictionSet {
        pairs: Vec::new(),
        generated: BTreeMap::new(),
        human: BTreeMap::new(),
        members: BTreeSet::new(),
        validities: Vec::new(),
    };
    for respondent in &with_truth {
        let truth = respondent.truth(&question.id).expect("filtered above");
        let assigned = assignment[&respondent.id].clone();
        set.members.insert(respondent.id.clone());
        set.validities.push(Validity::Full);
        set.pairs.push((Some(assigned.clone()), truth.to_string()));
        let assigned_index = question.option_index(&assigned).expect("valid option");
        let truth_index = question.option_index(truth).expect("valid option");
        set.generated.insert(
            respondent.id.clone(),
            ResponseDistribution::one_hot(n_options, assigned_index).expect("valid"),
        );
        set.human.insert(
            respondent.id.clone(),
            ResponseDistribution::one_hot(n_options, truth_index).expect("valid"),
        );
    }
    let metrics = compute_metrics(&set, question, subpops)?;
    Ok(EvalRow {
        dataset: dataset.id.clone(),
        question: question.id.clone(),
        method: "stratified_baseline".to_string(),
        model: "-".to_string(),
        variant: None,
        decoding: format!("shuffle-seed-{seed}"),
        temperature: None,
        top_k: None,
        scale_kind: question.scale_kind,
        metrics,
    })
}
