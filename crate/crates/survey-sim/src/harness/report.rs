//! Deterministic report emission: a long-format metrics CSV, a Markdown
//! summary, and per-panel plot-data CSVs. Identical evaluations produce
//! byte-identical files.

use std::path::{Path, PathBuf};

use crate::survey::ScaleKind;

use super::evaluate::{EvalRow, Evaluation};
use super::HarnessError;

fn distance_metric_name(scale_kind: ScaleKind) -> &'static str {
    match scale_kind {
        ScaleKind::Categorical => "tv_distance",
        ScaleKind::Ordinal => "wasserstein1",
    }
}

fn fmt(value: f64) -> String {
    format!("{value}")
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt).unwrap_or_default()
}

fn fmt_short(value: Option<f64>) -> String {
    value
        .map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "-".into())
}

/// Mean subpopulation distance, unweighted and weighted by subpopulation
/// size. Which of the two enters downstream aggregation is left to the
/// consumer.
fn mean_distances(row: &EvalRow, evaluation: &Evaluation) -> (Option<f64>, Option<f64>) {
    let Some(subpops) = &row.metrics.subpopulations else {
        return (None, None);
    };
    if subpops.is_empty() {
        return (None, None);
    }
    let mut sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for (key, values) in subpops {
        sum += values.distance;
        let weight = evaluation.subpop_sizes.get(key).copied().unwrap_or(1) as f64;
        weighted_sum += weight * values.distance;
        weight_total += weight;
    }
    (
        Some(sum / subpops.len() as f64),
        Some(weighted_sum / weight_total),
    )
}

fn spec_fields(row: &EvalRow) -> [String; 8] {
    [
        row.dataset.clone(),
        row.question.clone(),
        row.method.clone(),
        row.model.clone(),
        row.variant.map(|v| v.key()).unwrap_or("-").to_string(),
        row.decoding.clone(),
        row.temperature.map(fmt).unwrap_or_default(),
        row.top_k.map(|k| k.to_string()).unwrap_or_default(),
    ]
}

/// Writes all report files under `<out_dir>/reports/` and returns their
/// paths.
pub fn write_reports(
    evaluation: &Evaluation,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let reports_dir = out_dir.join("reports");
    let plot_dir = reports_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir)
        .map_err(|e| HarnessError::Io(format!("cannot create {}: {e}", plot_dir.display())))?;

    let mut written = Vec::new();
    written.push(write_metrics_csv(evaluation, &reports_dir)?);
    written.push(write_summary_md(evaluation, &reports_dir)?);
    written.extend(write_plotdata(evaluation, &plot_dir)?);
    Ok(written)
}

fn csv_writer(path: &PathBuf) -> Result<csv::Writer<std::fs::File>, HarnessError> {
    csv::Writer::from_path(path)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io(format!("cannot write {}: {e}", path.display()))
}

/// Long format: one row per specification x metric x subpopulation.
fn write_metrics_csv(evaluation: &Evaluation, reports_dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = reports_dir.join("metrics.csv");
    let mut writer = csv_writer(&path)?;
    let header = [
        "dataset",
        "question",
        "method",
        "model",
        "variant",
        "decoding",
        "temperature",
        "top_k",
        "metric",
        "subpop_attribute",
        "subpop_value",
        "value",
    ];
    writer
        .write_record(header)
        .map_err(|e| csv_error(&path, e))?;

    for row in &evaluation.rows {
        let spec = spec_fields(row);
        let mut emit = |metric: &str, attribute: &str, value_key: &str, value: f64| {
            let mut record: Vec<String> = spec.to_vec();
            record.push(metric.to_string());
            record.push(attribute.to_string());
            record.push(value_key.to_string());
            record.push(fmt(value));
            writer.write_record(&record)
        };
        let m = &row.metrics;
        let distance_name = distance_metric_name(row.scale_kind);
        emit("macro_f1", "", "", m.macro_f1).map_err(|e| csv_error(&path, e))?;
        emit("accuracy", "", "", m.accuracy).map_err(|e| csv_error(&path, e))?;
        emit("invalid_fraction", "", "", m.invalid_fraction).map_err(|e| csv_error(&path, e))?;
        emit("partial_fraction", "", "", m.partial_fraction).map_err(|e| csv_error(&path, e))?;
        if let Some(population) = &m.population {
            emit(distance_name, "population", "all", population.distance)
                .map_err(|e| csv_error(&path, e))?;
            emit("jsd", "population", "all", population.jsd).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(subpops) = &m.subpopulations {
            for (key, values) in subpops {
                emit(distance_name, &key.attribute, &key.value, values.distance)
                    .map_err(|e| csv_error(&path, e))?;
                emit("jsd", &key.attribute, &key.value, values.jsd)
                    .map_err(|e| csv_error(&path, e))?;
            }
        }
        let (unweighted, weighted) = mean_distances(row, evaluation);
        if let Some(v) = unweighted {
            emit("mean_subpop_distance_unweighted", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(v) = weighted {
            emit("mean_subpop_distance_weighted", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(v) = m.dcor {
            emit("distance_correlation", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(v) = m.brier {
            emit("brier", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(v) = m.kappa_scales {
            emit("fleiss_kappa_scales", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
        if let Some(v) = m.kappa_seeds {
            emit("fleiss_kappa_seeds", "", "", v).map_err(|e| csv_error(&path, e))?;
        }
    }
    writer
        .flush()
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_summary_md(evaluation: &Evaluation, reports_dir: &Path) -> Result<PathBuf, HarnessError> {
    let path = reports_dir.join("summary.md");
    let mut out = String::new();
    out.push_str("# Evaluation summary\n\n");
    out.push_str(
        "One row per simulation specification; the stratified baseline appears as method `stratified_baseline`.\n",
    );
    out.push_str(
        "Alignment, robustness, and calibration cells are `-` when gated by the invalid-fraction exclusion rule or not applicable.\n\n",
    );
    out.push_str("| dataset | question | method | model | variant | decoding | temp | top_k | macro_f1 | accuracy | invalid | partial | pop_dist | mean_subpop_dist | dcor | brier | kappa_scales | kappa_seeds |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for row in &evaluation.rows {
        let m = &row.metrics;
        let (unweighted, _) = mean_distances(row, evaluation);
        let spec = spec_fields(row);
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} | {} | {} | {} | {} |\n",
            spec[0],
            spec[1],
            spec[2],
            spec[3],
            spec[4],
            spec[5],
            if spec[6].is_empty() { "-" } else { &spec[6] },
            if spec[7].is_empty() { "-" } else { &spec[7] },
            m.macro_f1,
            m.accuracy,
            m.invalid_fraction,
            m.partial_fraction,
            fmt_short(m.population.as_ref().map(|p| p.distance)),
            fmt_short(unweighted),
            fmt_short(m.dcor),
            fmt_short(m.brier),
            fmt_short(m.kappa_scales),
            fmt_short(m.kappa_seeds),
        ));
    }
    std::fs::write(&path, out)
        .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_plotdata(evaluation: &Evaluation, plot_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let spec_header = [
        "dataset",
        "question",
        "method",
        "model",
        "variant",
        "decoding",
        "temperature",
        "top_k",
    ];
    let mut written = Vec::new();

    let panels: [(&str, Vec<&str>); 5] = [
        ("individual_alignment.csv", vec!["macro_f1", "accuracy"]),
        (
            "subpop_alignment.csv",
            vec![
                "population_distance",
                "mean_subpop_distance_unweighted",
                "mean_subpop_distance_weighted",
                "distance_correlation",
            ],
        ),
        ("validity.csv", vec!["invalid_fraction", "partial_fraction"]),
        (
            "robustness.csv",
            vec!["fleiss_kappa_scales", "fleiss_kappa_seeds"],
        ),
        ("calibration.csv", vec!["brier"]),
    ];
    for (file, metric_columns) in panels {
        let path = plot_dir.join(file);
        let mut writer = csv_writer(&path)?;
        let mut header: Vec<&str> = spec_header.to_vec();
        header.extend(metric_columns.iter());
        writer
            .write_record(&header)
            .map_err(|e| csv_error(&path, e))?;
        for row in &evaluation.rows {
            let m = &row.metrics;
            let (unweighted, weighted) = mean_distances(row, evaluation);
            let mut record: Vec<String> = spec_fields(row).to_vec();
            for column in &metric_columns {
                let value = match *column {
                    "macro_f1" => Some(m.macro_f1),
                    "accuracy" => Some(m.accuracy),
                    "invalid_fraction" => Some(m.invalid_fraction),
                    "partial_fraction" => Some(m.partial_fraction),
                    "population_distance" => m.population.as_ref().map(|p| p.distance),
                    "mean_subpop_distance_unweighted" => unweighted,
                    "mean_subpop_distance_weighted" => weighted,
                    "distance_correlation" => m.dcor,
                    "brier" => m.brier,
                    "fleiss_kappa_scales" => m.kappa_scales,
                    "fleiss_kappa_seeds" => m.kappa_seeds,
                    other => unreachable!("unknown plot column {other}"),
                };
                record.push(fmt_opt(value));
            }
            writer
                .write_record(&record)
                .map_err(|e| csv_error(&path, e))?;
        }
        writer
            .flush()
            .map_err(|e| HarnessError::Io(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
