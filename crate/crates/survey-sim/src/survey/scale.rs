//! The four presentation variants of a response option scale and their
//! rendering into a presented scale.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::SurveyQuestion;

/// Whether the scale is shown as full option texts or as index letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    FullText,
    Indexed,
}

/// Whether the options are shown in their original or reversed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionOrder {
    Original,
    Reversed,
}

/// One of the four presentation variants of the response option scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScaleVariant {
    pub labeling: Labeling,
    pub order: OptionOrder,
}

impl ScaleVariant {
    pub const ALL: [ScaleVariant; 4] = [
        ScaleVariant {
            labeling: Labeling::FullText,
            order: OptionOrder::Original,
        },
        ScaleVariant {
            labeling: Labeling::FullText,
            order: OptionOrder::Reversed,
        },
        ScaleVariant {
            labeling: Labeling::Indexed,
            order: OptionOrder::Original,
        },
        ScaleVariant {
            labeling: Labeling::Indexed,
            order: OptionOrder::Reversed,
        },
    ];

    pub fn key(self) -> &'static str {
        match (self.labeling, self.order) {
            (Labeling::FullText, OptionOrder::Original) => "full_text_original",
            (Labeling::FullText, OptionOrder::Reversed) => "full_text_reversed",
            (Labeling::Indexed, OptionOrder::Original) => "indexed_original",
            (Labeling::Indexed, OptionOrder::Reversed) => "indexed_reversed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == s)
    }
}

/// One line of a presented scale: the label shown to the model and the
/// option it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedEntry {
    /// Presentation label: the full text, or "A", "B", ... when indexed.
    pub label: String,
    pub option_id: String,
    pub full_text: String,
}

/// A question's options as presented under one scale variant, together with
/// the surface strings accepted as denoting each option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedScale {
    /// Permutation of the question's options in presentation order.
    pub entries: Vec<PresentedEntry>,
    /// option_id -> surface strings the model may use for that option under
    /// this variant.
    pub surface_forms: BTreeMap<String, BTreeSet<String>>,
}

impl PresentedScale {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    /// Presentation position of an option id.
    pub fn position(&self, option_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.option_id == option_id)
    }

    pub fn entry_for(&self, option_id: &str) -> Option<&PresentedEntry> {
        self.entries.iter().find(|e| e.option_id == option_id)
    }

    /// All surface forms of all options, flattened in presentation order
    /// (label first, then the remaining surfaces sorted), deduplicated.
    pub fn all_surface_forms(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for entry in &self.entries {
            let mut push = |s: &str| {
                if seen.insert(s.to_string()) {
                    out.push(s.to_string());
                }
            };
            push(&entry.label);
            if let Some(forms) = self.surface_forms.get(&entry.option_id) {
                for form in forms {
                    push(form);
                }
            }
        }
        out
    }
}

/// Index label for a presentation position: "A".."Z", then "AA", "AB", ...
pub fn index_label(position: usize) -> String {
    let mut n = position;
    let mut label = String::new();
    loop {
        label.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    label
}

/// Renders a question's options under one scale variant.
///
/// Reversed order reverses the option list. Indexed labeling assigns "A",
/// "B", ... to presentation positions; the accepted surfaces are the index
/// label plus the full text. Full-text labeling accepts the full text plus
/// the configured aliases.
pub fn render_scale(question: &SurveyQuestion, variant: ScaleVariant) -> PresentedScale {
    let mut options: Vec<_> = question.options.iter().collect();
    if variant.order == OptionOrder::Reversed {
        options.reverse();
    }
    let mut entries = Vec::with_capacity(options.len());
    let mut surface_forms = BTreeMap::new();
    for (position, option) in options.iter().enumerate() {
        let label = match variant.labeling {
            Labeling::FullText => option.full_text.clone(),
            Labeling::Indexed => index_label(position),
        };
        let mut surfaces: BTreeSet<String> = BTreeSet::new();
        match variant.labeling {
            Labeling::FullText => {
                surfaces.insert(option.full_text.clone());
                surfaces.extend(option.aliases.iter().cloned());
            }
            Labeling::Indexed => {
                surfaces.insert(label.clone());
                surfaces.insert(option.full_text.clone());
            }
        }
        entries.push(PresentedEntry {
            label,
            option_id: option.id.clone(),
            full_text: option.full_text.clone(),
        });
        surface_forms.insert(option.id.clone(), surfaces);
    }
    PresentedScale {
        entries,
        surface_forms,
    }
}


#[cfg(test)]
mod property_tests {
    use super::*;
    use crate::survey::{Language, ResponseOption, ScaleKind};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn rendering_invariants_hold_for_random_instruments(
            ids in proptest::collection::btree_set("[a-z]{1,8}", 2..8)
        ) {
            let options: Vec<ResponseOption> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| ResponseOption::new(id.clone(), format!("Option {i} {id}")))
                .collect();
            let question = SurveyQuestion::new(
                "q",
                "Question?",
                options,
                ScaleKind::Categorical,
                Language::En,
            )
            .unwrap();

            for variant in ScaleVariant::ALL {
                let presented = render_scale(&question, variant);
                prop_assert_eq!(presented.entries.len(), question.options.len());

                let rendered: BTreeSet<&String> =
                    presented.entries.iter().map(|e| &e.option_id).collect();
                let expected: BTreeSet<&String> =
                    question.options.iter().map(|o| &o.id).collect();
                prop_assert_eq!(rendered, expected, "bijection on option ids");

                let labels: BTreeSet<&String> =
                    presented.entries.iter().map(|e| &e.label).collect();
                prop_assert_eq!(labels.len(), presented.entries.len(), "unique labels");

                if variant.labeling == Labeling::Indexed {
                    for (position, entry) in presented.entries.iter().enumerate() {
                        prop_assert_eq!(&entry.label, &index_label(position));
                    }
                }
            }

            // Reversing twice restores the original entry order.
            for labeling in [Labeling::FullText, Labeling::Indexed] {
                let original = render_scale(
                    &question,
                    ScaleVariant { labeling, order: OptionOrder::Original },
                );
                let reversed = render_scale(
                    &question,
                    ScaleVariant { labeling, order: OptionOrder::Reversed },
                );
                let mut twice: Vec<&String> =
                    reversed.entries.iter().map(|e| &e.option_id).collect();
                twice.reverse();
                let once: Vec<&String> =
                    original.entries.iter().map(|e| &e.option_id).collect();
                prop_assert_eq!(twice, once);
            }
        }
    }
}
