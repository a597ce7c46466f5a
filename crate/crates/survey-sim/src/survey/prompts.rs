//! Assembly of the prompt bundle for one (respondent, question, variant,
//! method) cell: method-specific system prompt with formatting
//! instructions, persona user prompt, and the optional assistant prefill.

use super::{Labeling, ScaleVariant, TemplateError, TemplateSet};
use super::{Language, PresentedScale, PromptBundle, Respondent, Schema, SurveyQuestion};
use crate::methods::MethodId;

/// The distinct system prompt shapes. All three token probability-based
/// methods share one shape; the classification shapes are used in the
/// second step of the open generation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemPromptKind {
    TokenMethods,
    RestrictedChoice,
    RestrictedReasoning,
    VerbalizedDistribution,
    OpenGeneration,
    ClassifyChoice,
    ClassifyDistribution,
}

impl SystemPromptKind {
    pub fn for_method(method: MethodId) -> Self {
        match method {
            MethodId::FirstTokenProbabilities
            | MethodId::FirstTokenRestricted
            | MethodId::AnswerPrefix => SystemPromptKind::TokenMethods,
            MethodId::RestrictedChoice => SystemPromptKind::RestrictedChoice,
            MethodId::RestrictedReasoning => SystemPromptKind::RestrictedReasoning,
            MethodId::VerbalizedDistribution => SystemPromptKind::VerbalizedDistribution,
            MethodId::OpenEndedClassification | MethodId::OpenEndedDistribution => {
                SystemPromptKind::OpenGeneration
            }
        }
    }
}

/// Inline rendering of the response options for `{RESPONSE OPTIONS}`:
/// comma-separated index labels when indexed, comma-separated quoted full
/// texts otherwise.
pub fn response_options_inline(presented: &PresentedScale, labeling: Labeling) -> String {
    match labeling {
        Labeling::Indexed => presented
            .entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<Vec<_>>()
            .join(", "),
        Labeling::FullText => presented
            .entries
            .iter()
            .map(|e| format!("'{}'", e.label))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

/// For indexed variants the prompt additionally shows what each index
/// stands for, one "A) full text" line per option.
pub fn option_listing(presented: &PresentedScale) -> String {
    presented
        .entries
        .iter()
        .map(|e| format!("{}) {}", e.label, e.full_text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The assistant prefill used by the answer-prefix method.
pub fn answer_prefix(language: Language) -> &'static str {
    match language {
        Language::En => "My answer is ",
        Language::De => "Meine Antwort ist ",
    }
}

fn options_sentence(language: Language, inline: &str, listing: Option<&str>) -> String {
    let lead = match language {
        Language::En => format!("These are the possible answer options: {inline}."),
        Language::De => format!("Dies sind die m\u{f6}glichen Antwortoptionen: {inline}."),
    };
    match listing {
        Some(block) => format!("{lead}\n{block}\n"),
        None => format!("{lead} "),
    }
}

fn labels_sentence(language: Language, inline: &str, listing: Option<&str>) -> String {
    let lead = match language {
        Language::En => format!("These are the possible labels: {inline}."),
        Language::De => format!("Das sind die m\u{f6}glichen Labels: {inline}."),
    };
    match listing {
        Some(block) => format!("{lead}\n{block}\n"),
        None => format!("{lead} "),
    }
}

fn role_sentence(language: Language, question_text: &str) -> String {
    match language {
        Language::En => format!(
            "You are a political scientist predicting responses to the following question: {question_text}."
        ),
        Language::De => format!(
            "Du bist ein Politikwissenschaftler, der Antworten auf die folgende Frage vorhersagt: {question_text}."
        ),
    }
}

fn distribution_block(presented: &PresentedScale, language: Language) -> String {
    let value = match language {
        Language::En => "<probability>",
        Language::De => "<Wahrscheinlichkeit>",
    };
    let lines: Vec<String> = presented
        .entries
        .iter()
        .map(|e| format!("  \"{}\": {value}", e.label))
        .collect();
    format!("```json\n{{\n{}\n}}\n```", lines.join(",\n"))
}

/// Builds the system prompt carrying the method's formatting instructions.
pub fn system_prompt(
    kind: SystemPromptKind,
    language: Language,
    question_text: &str,
    presented: &PresentedScale,
    labeling: Labeling,
) -> String {
    let inline = response_options_inline(presented, labeling);
    let listing = match labeling {
        Labeling::Indexed => Some(option_listing(presented)),
        Labeling::FullText => None,
    };
    let role = role_sentence(language, question_text);
    let answer_key = crate::methods::answer_key(language);
    let reasoning_key = crate::methods::reasoning_key(language);

    match (kind, language) {
        (SystemPromptKind::OpenGeneration, _) => role,
        (SystemPromptKind::TokenMethods, _) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            format!("{role} {options}You only respond with the most probable answer option.")
        }
        (SystemPromptKind::RestrictedChoice, Language::En) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            format!(
                "{role} {options}You only respond with the most probable answer option in the following JSON format:\n```json\n{{\n  \"{answer_key}\": {inline}\n}}\n```"
            )
        }
        (SystemPromptKind::RestrictedChoice, Language::De) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            format!(
                "{role} {options}Du antwortest ausschlie\u{df}lich mit der wahrscheinlichsten Antwortoption im folgenden JSON-Format:\n```json\n{{\n  \"{answer_key}\": {inline}\n}}\n```"
            )
        }
        (SystemPromptKind::RestrictedReasoning, Language::En) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            format!(
                "{role} {options}You always reason about the possible answer options first.\nYou respond with your reasoning and the most probable answer option in the following JSON format:\n```json\n{{\n  \"{reasoning_key}\": <your reasoning about the answer options>,\n  \"{answer_key}\": <{inline}>\n}}\n```"
            )
        }
        (SystemPromptKind::RestrictedReasoning, Language::De) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            format!(
                "{role} {options}Du argumentierst immer zuerst \u{fc}ber die m\u{f6}glichen Antwort-Optionen.\nDu antwortest mit deiner Argumentation und der wahrscheinlichsten Antwort-Option im folgenden JSON-Format:\n```json\n{{\n  \"{reasoning_key}\": <deine Argumentation \u{fc}ber die Antwort-Optionen>,\n  \"{answer_key}\": <{inline}>\n}}\n```"
            )
        }
        (SystemPromptKind::VerbalizedDistribution, Language::En) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            let block = distribution_block(presented, language);
            format!(
                "{role} {options}You only respond with a probability for each answer option in the following JSON format:\n{block}"
            )
        }
        (SystemPromptKind::VerbalizedDistribution, Language::De) => {
            let options = options_sentence(language, &inline, listing.as_deref());
            let block = distribution_block(presented, language);
            format!(
                "{role} {options}Du antwortest ausschlie\u{df}lich mit einer Wahrscheinlichkeit f\u{fc}r jede Antwort-Option im folgenden JSON-Format:\n{block}"
            )
        }
        (SystemPromptKind::ClassifyChoice, Language::En) => {
            let labels = labels_sentence(language, &inline, listing.as_deref());
            format!(
                "You are an expert annotator. {labels}You only respond with the most probable label in the following JSON format:\n```json\n{{\n  \"{answer_key}\": <{inline}>\n}}\n```"
            )
        }
        (SystemPromptKind::ClassifyChoice, Language::De) => {
            let labels = labels_sentence(language, &inline, listing.as_deref());
            format!(
                "Du bist ein erfahrener Annotator. {labels}Du antwortest nur mit dem wahrscheinlichsten Label im folgenden JSON-Format:\n```json\n{{\n  \"{answer_key}\": <{inline}>\n}}\n```"
            )
        }
        (SystemPromptKind::ClassifyDistribution, Language::En) => {
            let labels = labels_sentence(language, &inline, listing.as_deref());
            let block = distribution_block(presented, language);
            format!(
                "You are an expert annotator. {labels}You only respond with a probability for each answer option in the following JSON format:\n{block}"
            )
        }
        (SystemPromptKind::ClassifyDistribution, Language::De) => {
            let labels = labels_sentence(language, &inline, listing.as_deref());
            let block = distribution_block(presented, language);
            format!(
                "Du bist ein erfahrener Annotator. {labels}Du antwortest nur mit einer Wahrscheinlichkeit f\u{fc}r jede Antwortoption im folgenden JSON-Format:\n{block}"
            )
        }
    }
}

/// User prompt of the second, classification step of the open generation
/// methods: the open-ended statement framed by the survey question.
pub fn classification_user_prompt(
    language: Language,
    question_text: &str,
    presented: &PresentedScale,
    labeling: Labeling,
    statement: &str,
) -> String {
    let inline = response_options_inline(presented, labeling);
    match language {
        Language::En => format!(
            "Below is a STATEMENT that responds to the question: {question_text}\nDoes the following STATEMENT express preference for exactly one of the following answer options: <{inline}>? If yes, which option is preferred?\n\nSTATEMENT: {statement}"
        ),
        Language::De => format!(
            "Nachfolgend findest du eine AUSSAGE, die auf die Frage {question_text} antwortet.\nDr\u{fc}ckt die folgende AUSSAGE eine Pr\u{e4}ferenz f\u{fc}r genau eine der folgenden Antwortoptionen aus: <{inline}>? Wenn ja, welche Option wird bevorzugt?\n\nAUSSAGE: {statement}"
        ),
    }
}

/// Renders the full prompt bundle for one cell.
///
/// Rendering is pure: identical inputs yield byte-identical bundles. The
/// assistant prefill is set only for the answer-prefix method.
pub fn render_prompts(
    templates: &TemplateSet,
    schema: &Schema,
    respondent: &Respondent,
    question: &SurveyQuestion,
    presented: &PresentedScale,
    variant: ScaleVariant,
    method: MethodId,
) -> Result<PromptBundle, TemplateError> {
    let known: std::collections::BTreeSet<&str> =
        schema.attributes.iter().map(|a| a.name.as_str()).collect();
    let inline = response_options_inline(presented, variant.labeling);
    let user_text = templates
        .user
        .render(respondent, &known, &question.text, &inline)?;
    let system_text = system_prompt(
        SystemPromptKind::for_method(method),
        question.language,
        &question.text,
        presented,
        variant.labeling,
    );
    let assistant_prefill = match method {
        MethodId::AnswerPrefix => Some(answer_prefix(question.language).to_string()),
        _ => None,
    };
    Ok(PromptBundle {
        system_text,
        user_text,
        assistant_prefill,
    })
}
