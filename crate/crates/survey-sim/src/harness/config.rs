//! The declarative run config: one TOML document binding dataset path,
//! schema, templates, question definitions, the simulation grid, and the
//! model backends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::backend::{Backend, HttpBackend, HttpBackendConfig, MockBackend, ServerProfile};
use crate::methods::{scripting, MethodId};
use crate::survey::{
    load_dataset, AttributeKind, AttributeSpec, Dataset, DatasetError, GroundTruthSpec,
    InstrumentError, Language, PromptTemplate, ResponseOption, ScaleKind, ScaleVariant, Schema,
    SurveyQuestion, TemplateError, TemplateSet, DEFAULT_SENTENCE_MARKER,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown model {0:?} referenced by the grid")]
    UnknownModel(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

// Raw TOML shape.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    questions: Vec<RawQuestion>,
    templates: RawTemplates,
    grid: RawGrid,
    models: BTreeMap<String, RawModel>,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    id: String,
    path: String,
    language: String,
    schema: RawSchema,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    id_column: String,
    #[serde(default)]
    attributes: Vec<RawAttribute>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribute {
    name: String,
    #[serde(default)]
    column: Option<String>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    value_map: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuestion {
    id: String,
    text: String,
    scale: String,
    ground_truth_column: String,
    #[serde(default)]
    ground_truth_map: Option<BTreeMap<String, String>>,
    options: Vec<RawOption>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOption {
    id: String,
    text: String,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplates {
    user: String,
    #[serde(default)]
    sentence_marker: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default)]
    methods: Vec<String>,
    #[serde(default)]
    variants: Vec<String>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default = "default_true")]
    greedy: bool,
    models: Vec<String>,
    #[serde(default)]
    exclude: Vec<RawExclusion>,
    #[serde(default)]
    sweep: Option<RawSweep>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExclusion {
    #[serde(default)]
    method: Option<String>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    variant: Option<String>,
    #[serde(default)]
    question: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    temperatures: Vec<f64>,
    #[serde(default)]
    top_k: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    backend: String,
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    model_id: Option<String>,
    #[serde(default)]
    profile: Option<String>,
    #[serde(default)]
    api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    default_temperature: f64,
    #[serde(default)]
    max_logprobs: Option<u32>,
    #[serde(default)]
    reasoning: bool,
    #[serde(default)]
    behavior: Option<String>,
    #[serde(default)]
    script: Option<String>,
}

fn default_temperature() -> f64 {
    0.7
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default)]
    out_dir: Option<String>,
    #[serde(default)]
    max_in_flight: Option<usize>,
    #[serde(default)]
    logprobs_top_k: Option<u32>,
    #[serde(default)]
    max_tokens: Option<u32>,
    #[serde(default)]
    open_max_tokens: Option<u32>,
    #[serde(default)]
    threshold: Option<f64>,
    #[serde(default)]
    baseline_seed: Option<u64>,
    #[serde(default)]
    timeout_secs: Option<u64>,
}

// Resolved config.

/// Grid factors as declared by the config.
#[derive(Debug, Clone)]
pub struct GridConfig {
    pub methods: Vec<MethodId>,
    pub variants: Vec<ScaleVariant>,
    pub seeds: Vec<u64>,
    pub greedy: bool,
    pub models: Vec<String>,
    pub exclusions: Vec<Exclusion>,
    pub sweep_temperatures: Vec<f64>,
    pub sweep_top_k: Vec<u32>,
}

/// Cells matching every present field are removed from the grid.
#[derive(Debug, Clone)]
pub struct Exclusion {
    pub method: Option<MethodId>,
    pub model: Option<String>,
    pub variant: Option<ScaleVariant>,
    pub question: Option<String>,
}

#[derive(Debug, Clone)]
pub enum BackendKind {
    Http {
        endpoint: String,
        model_id: String,
        profile: Box<ServerProfile>,
        api_key_env: Option<String>,
        max_logprobs: Option<u32>,
    },
    MockEchoGroundTruth,
    MockGarbage,
    MockScript {
        path: PathBuf,
    },
}

/// One model entry of the run config.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub name: String,
    pub kind: BackendKind,
    pub default_temperature: f64,
    pub reasoning_enabled: bool,
}

/// Run-wide knobs.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub out_dir: PathBuf,
    pub max_in_flight: usize,
    pub logprobs_top_k: u32,
    pub max_tokens: u32,
    pub open_max_tokens: u32,
    pub threshold: f64,
    pub baseline_seed: u64,
    pub timeout: Duration,
}

/// Fully resolved run config; relative paths are anchored at the config
/// file's directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_id: String,
    pub dataset_path: PathBuf,
    pub language: Language,
    pub schema: Schema,
    pub questions: Vec<SurveyQuestion>,
    pub template_path: PathBuf,
    pub sentence_marker: String,
    pub grid: GridConfig,
    pub models: BTreeMap<String, ModelConfig>,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let raw: RawConfig =
            toml::from_str(&source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::resolve(raw, &base)
    }

    fn resolve(raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        let language = Language::parse(&raw.dataset.language).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown language {:?}", raw.dataset.language))
        })?;

        let mut questions = Vec::new();
        let mut ground_truth = Vec::new();
        for q in &raw.questions {
            let scale_kind = match q.scale.as_str() {
                "categorical" => ScaleKind::Categorical,
                "ordinal" => ScaleKind::Ordinal,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "question {}: unknown scale {other:?}",
                        q.id
                    )));
                }
            };
            let options = q
                .options
                .iter()
                .map(|o| ResponseOption::new(&o.id, &o.text).with_aliases(o.aliases.clone()))
                .collect();
            questions.push(SurveyQuestion::new(
                &q.id, &q.text, options, scale_kind, language,
            )?);
            ground_truth.push(GroundTruthSpec {
                question_id: q.id.clone(),
                column: q.ground_truth_column.clone(),
                value_map: q.ground_truth_map.clone(),
            });
        }
        if questions.is_empty() {
            return Err(ConfigError::Invalid("no questions defined".into()));
        }

        let attributes = raw
            .dataset
            .schema
            .attributes
            .iter()
            .map(|a| {
                let kind = match a.kind.as_deref() {
                    None | Some("text") => AttributeKind::Text,
                    Some("age") => AttributeKind::Age,
                    Some(other) => {
                        return Err(ConfigError::Invalid(format!(
                            "attribute {}: unknown kind {other:?}",
                            a.name
                        )));
                    }
                };
                Ok(AttributeSpec {
                    name: a.name.clone(),
                    column: a.column.clone(),
                    kind,
                    value_map: a.value_map.clone(),
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let schema = Schema {
            id_column: raw.dataset.schema.id_column.clone(),
            attributes,
            ground_truth,
        };

        let methods = if raw.grid.methods.is_empty() || raw.grid.methods.iter().any(|m| m == "all")
        {
            MethodId::ALL.to_vec()
        } else {
            raw.grid
                .methods
                .iter()
                .map(|m| {
                    MethodId::parse(m)
                        .ok_or_else(|| ConfigError::Invalid(format!("unknown method {m:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let variants =
            if raw.grid.variants.is_empty() || raw.grid.variants.iter().any(|v| v == "all") {
                ScaleVariant::ALL.to_vec()
            } else {
                raw.grid
                    .variants
                    .iter()
                    .map(|v| {
                        ScaleVariant::parse(v)
                            .ok_or_else(|| ConfigError::Invalid(format!("unknown variant {v:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
        if !raw.grid.greedy && raw.grid.seeds.is_empty() {
            return Err(ConfigError::Invalid(
                "grid needs greedy decoding or at least one seed".into(),
            ));
        }
        if raw.grid.models.is_empty() {
            return Err(ConfigError::Invalid("grid lists no models".into()));
        }
        for model in &raw.grid.models {
            if !raw.models.contains_key(model) {
                return Err(ConfigError::UnknownModel(model.clone()));
            }
        }
        let exclusions = raw
            .grid
            .exclude
            .iter()
            .map(|e| {
                Ok(Exclusion {
                    method: e
                        .method
                        .as_deref()
                        .map(|m| {
                            MethodId::parse(m).ok_or_else(|| {
                                ConfigError::Invalid(format!("unknown method {m:?} in exclusion"))
                            })
                        })
                        .transpose()?,
                    model: e.model.clone(),
                    variant: e
                        .variant
                        .as_deref()
                        .map(|v| {
                            ScaleVariant::parse(v).ok_or_else(|| {
                                ConfigError::Invalid(format!("unknown variant {v:?} in exclusion"))
                            })
                        })
                        .transpose()?,
                    question: e.question.clone(),
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let (sweep_temperatures, sweep_top_k) = match &raw.grid.sweep {
            Some(sweep) => {
                if sweep.temperatures.iter().any(|t| *t < 0.0) {
                    return Err(ConfigError::Invalid("negative sweep temperature".into()));
                }
                if sweep.top_k.contains(&0) {
                    return Err(ConfigError::Invalid("sweep top_k must be positive".into()));
                }
                (sweep.temperatures.clone(), sweep.top_k.clone())
            }
            None => (Vec::new(), Vec::new()),
        };

        let grid = GridConfig {
            methods,
            variants,
            seeds: raw.grid.seeds.clone(),
            greedy: raw.grid.greedy,
            models: raw.grid.models.clone(),
            exclusions,
            sweep_temperatures,
            sweep_top_k,
        };

        let mut models = BTreeMap::new();
        for (name, m) in &raw.models {
            let kind = match m.backend.as_str() {
                "http" => {
                    let endpoint = m.endpoint.clone().ok_or_else(|| {
                        ConfigError::Invalid(format!("model {name}: http backend needs endpoint"))
                    })?;
                    let model_id = m.model_id.clone().unwrap_or_else(|| name.clone());
                    let profile = match m.profile.as_deref() {
                        None => ServerProfile::vllm(),
                        Some(p) => ServerProfile::by_name(p).ok_or_else(|| {
                            ConfigError::Invalid(format!("unknown server profile {p:?}"))
                        })?,
                    };
                    BackendKind::Http {
                        endpoint,
                        model_id,
                        profile: Box::new(profile),
                        api_key_env: m.api_key_env.clone(),
                        max_logprobs: m.max_logprobs,
                    }
                }
                "mock" => match (m.behavior.as_deref(), &m.script) {
                    (Some("echo_ground_truth"), None) => BackendKind::MockEchoGroundTruth,
                    (Some("garbage"), None) => BackendKind::MockGarbage,
                    (None, Some(script)) => BackendKind::MockScript {
                        path: base.join(script),
                    },
                    (Some(other), None) => {
                        return Err(ConfigError::Invalid(format!(
                            "model {name}: unknown mock behavior {other:?}"
                        )));
                    }
                    _ => {
                        return Err(ConfigError::Invalid(format!(
                            "model {name}: mock backend needs either behavior or script"
                        )));
                    }
                },
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "model {name}: unknown backend {other:?}"
                    )));
                }
            };
            models.insert(
                name.clone(),
                ModelConfig {
                    name: name.clone(),
                    kind,
                    default_temperature: m.default_temperature,
                    reasoning_enabled: m.reasoning,
                },
            );
        }

        let run = RunSettings {
            out_dir: base.join(raw.run.out_dir.as_deref().unwrap_or("runs")),
            max_in_flight: raw.run.max_in_flight.unwrap_or(4).max(1),
            logprobs_top_k: raw.run.logprobs_top_k.unwrap_or(20),
            max_tokens: raw.run.max_tokens.unwrap_or(512),
            open_max_tokens: raw.run.open_max_tokens.unwrap_or(1024),
            threshold: raw
                .run
                .threshold
                .unwrap_or(crate::metrics::DEFAULT_EXCLUSION_THRESHOLD),
            baseline_seed: raw.run.baseline_seed.unwrap_or(0),
            timeout: Duration::from_secs(raw.run.timeout_secs.unwrap_or(120)),
        };

        Ok(RunConfig {
            dataset_id: raw.dataset.id,
            dataset_path: base.join(&raw.dataset.path),
            language,
            schema,
            questions,
            template_path: base.join(&raw.templates.user),
            sentence_marker: raw
                .templates
                .sentence_marker
                .unwrap_or_else(|| DEFAULT_SENTENCE_MARKER.to_string()),
            grid,
            models,
            run,
        })
    }

    /// Loads the dataset and the template set this config points at.
    pub fn load_dataset(&self) -> Result<(Dataset, TemplateSet), ConfigError> {
        let respondents = load_dataset(&self.dataset_path, &self.schema, &self.questions)?;
        let dataset = Dataset {
            id: self.dataset_id.clone(),
            language: self.language,
            questions: self.questions.clone(),
            respondents,
            schema: self.schema.clone(),
        };
        let user = PromptTemplate::from_file(&self.template_path, &self.sentence_marker)?;
        let known: std::collections::BTreeSet<&str> = self
            .schema
            .attributes
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        user.validate(&known)?;
        Ok((dataset, TemplateSet::new(user, self.language)))
    }

    /// Instantiates the backend of one model entry. Mock behaviors that
    /// replay the dataset need it passed in.
    pub fn build_backend(
        &self,
        model: &ModelConfig,
        dataset: &Dataset,
        templates: &TemplateSet,
    ) -> Result<Arc<dyn Backend>, ConfigError> {
        match &model.kind {
            BackendKind::Http {
                endpoint,
                model_id,
                profile,
                api_key_env,
                max_logprobs,
            } => {
                let mut config = HttpBackendConfig::new(endpoint.clone(), model_id.clone());
                config.profile = (**profile).clone();
                if let Some(limit) = max_logprobs {
                    config.profile.max_logprobs = *limit;
                }
                config.api_key_env = api_key_env.clone();
                config.timeout = self.run.timeout;
                config.max_in_flight = self.run.max_in_flight;
                Ok(Arc::new(
                    HttpBackend::new(config).map_err(|e| ConfigError::Backend(e.to_string()))?,
                ))
            }
            BackendKind::MockEchoGroundTruth => Ok(Arc::new(scripting::echo_ground_truth_mock(
                dataset,
                templates,
                &self.grid.methods,
                &self.grid.variants,
            ))),
            BackendKind::MockGarbage => Ok(Arc::new(scripting::garbage_mock())),
            BackendKind::MockScript { path } => Ok(Arc::new(
                MockBackend::from_script_file(path)
                    .map_err(|e| ConfigError::Backend(e.to_string()))?,
            )),
        }
    }

    /// Static validation: referenced files exist, instrument and template
    /// are internally consistent.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.dataset_path.exists() {
            return Err(ConfigError::Invalid(format!(
                "dataset file {} does not exist",
                self.dataset_path.display()
            )));
        }
        if !self.template_path.exists() {
            return Err(ConfigError::Invalid(format!(
                "template file {} does not exist",
                self.template_path.display()
            )));
        }
        for question in &self.questions {
            question.validate()?;
        }
        let user = PromptTemplate::from_file(&self.template_path, &self.sentence_marker)?;
        let known: std::collections::BTreeSet<&str> = self
            .schema
            .attributes
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        user.validate(&known)?;
        Ok(())
    }
}
