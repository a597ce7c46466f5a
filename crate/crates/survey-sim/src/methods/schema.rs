//! JSON schema documents for the three restricted output formats, built
//! dynamically per question and scale variant.

use serde_json::{json, Map, Value};

use crate::survey::{Language, PresentedScale};

/// JSON key of the answer field.
pub fn answer_key(language: Language) -> &'static str {
    match language {
        Language::En => "answer_option",
        Language::De => "antwort",
    }
}

/// JSON key of the reasoning field.
pub fn reasoning_key(language: Language) -> &'static str {
    match language {
        Language::En => "reasoning",
        Language::De => "argumentation",
    }
}

/// Schema forcing `{"answer_option": <one of the presented surfaces>}`.
/// Enum values are the presentation labels in presentation order; no other
/// fields are allowed.
pub fn build_choice_schema(presented: &PresentedScale, language: Language) -> Value {
    let key = answer_key(language);
    let labels: Vec<&str> = presented.labels().collect();
    json!({
        "type": "object",
        "properties": {
            key: { "type": "string", "enum": labels }
        },
        "required": [key],
        "additionalProperties": false
    })
}

/// Choice schema extended with a required free-string reasoning field whose
/// serialization order precedes the answer field.
pub fn build_reasoning_schema(presented: &PresentedScale, language: Language) -> Value {
    let r_key = reasoning_key(language);
    let a_key = answer_key(language);
    let labels: Vec<&str> = presented.labels().collect();
    // Property order matters: guided decoding generates fields in schema
    // order, and the reasoning must come first.
    let mut properties = Map::new();
    properties.insert(r_key.to_string(), json!({ "type": "string" }));
    properties.insert(
        a_key.to_string(),
        json!({ "type": "string", "enum": labels }),
    );
    json!({
        "type": "object",
        "properties": properties,
        "required": [r_key, a_key],
        "additionalProperties": false
    })
}

/// Schema requiring one numeric field per response option, named by the
/// presentation labels. The [0, 1] range is checked after parsing, not by
/// the schema.
pub fn build_distribution_schema(presented: &PresentedScale) -> Value {
    let mut properties = Map::new();
    for entry in &presented.entries {
        properties.insert(entry.label.clone(), json!({ "type": "number" }));
    }
    let labels: Vec<&str> = presented.labels().collect();
    json!({
        "type": "object",
        "properties": properties,
        "required": labels,
        "additionalProperties": false
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{
        render_scale, Labeling, OptionOrder, ResponseOption, ScaleKind, ScaleVariant,
        SurveyQuestion,
    };

    fn question() -> SurveyQuestion {
        SurveyQuestion::new(
            "vote",
            "Who?",
            vec![
                ResponseOption::new("clinton", "Clinton"),
                ResponseOption::new("trump", "Trump"),
                ResponseOption::new("non_voter", "Non-voter"),
            ],
            ScaleKind::Categorical,
            Language::En,
        )
        .unwrap()
    }

    fn presented(labeling: Labeling, order: OptionOrder) -> PresentedScale {
        render_scale(&question(), ScaleVariant { labeling, order })
    }

    fn enum_values(schema: &Value, key: &str) -> Vec<String> {
        schema["properties"][key]["enum"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect()
    }

    #[test]
    fn choice_schema_enumerates_full_texts() {
        let schema = build_choice_schema(
            &presented(Labeling::FullText, OptionOrder::Original),
            Language::En,
        );
        assert_eq!(
            enum_values(&schema, "answer_option"),
            vec!["Clinton", "Trump", "Non-voter"]
        );
        assert_eq!(schema["required"], json!(["answer_option"]));
        assert_eq!(schema["additionalProperties"], json!(false));
    }

    #[test]
    fn choice_schema_enumerates_index_labels() {
        let schema = build_choice_schema(
            &presented(Labeling::Indexed, OptionOrder::Original),
            Language::En,
        );
        assert_eq!(enum_values(&schema, "answer_option"), vec!["A", "B", "C"]);
    }

    #[test]
    fn reversed_variant_reverses_enum_order() {
        let schema = build_choice_schema(
            &presented(Labeling::FullText, OptionOrder::Reversed),
            Language::En,
        );
        assert_eq!(
            enum_values(&schema, "answer_option"),
            vec!["Non-voter", "Trump", "Clinton"]
        );
    }

    #[test]
    fn reasoning_schema_orders_reasoning_before_answer() {
        let schema = build_reasoning_schema(
            &presented(Labeling::FullText, OptionOrder::Original),
            Language::En,
        );
        let keys: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["reasoning", "answer_option"]);
        assert_eq!(schema["required"], json!(["reasoning", "answer_option"]));
        assert_eq!(schema["additionalProperties"], json!(false));
    }

    #[test]
    fn german_keys_follow_the_templates() {
        let schema = build_reasoning_schema(
            &presented(Labeling::FullText, OptionOrder::Original),
            Language::De,
        );
        let keys: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["argumentation", "antwort"]);
    }

    #[test]
    fn distribution_schema_requires_one_numeric_field_per_option() {
        let schema =
            build_distribution_schema(&presented(Labeling::FullText, OptionOrder::Original));
        let props = schema["properties"].as_object().unwrap();
        assert_eq!(props.len(), 3);
        for (_, prop) in props {
            assert_eq!(prop["type"], "number");
        }
        assert_eq!(schema["required"], json!(["Clinton", "Trump", "Non-voter"]));
    }

    #[test]
    fn schema_violations_detected_by_conformance_check() {
        use crate::backend::mock::value_conforms;
        let schema = build_reasoning_schema(
            &presented(Labeling::FullText, OptionOrder::Original),
            Language::En,
        );
        let ok = json!({ "reasoning": "because", "answer_option": "Trump" });
        assert!(value_conforms(&ok, &schema));
        let missing_reasoning = json!({ "answer_option": "Trump" });
        assert!(!value_conforms(&missing_reasoning, &schema));
        let extra_key = json!({ "reasoning": "r", "answer_option": "Trump", "x": 1 });
        assert!(!value_conforms(&extra_key, &schema));
    }
}
