//! The canonical factor vocabulary: 45 linguistic feature families (binned or
//! boolean) plus 11 humor-strategy labels.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorGroup {
    Basic,
    Morphological,
    Symbol,
    Ending,
    Style,
    Relational,
    Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Quartile([&'static str; 4]),
    Median([&'static str; 2]),
    Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: &'static str,
    pub group: FactorGroup,
    pub kind: FeatureKind,
    /// Needs a morphological annotation of the response.
    pub needs_morph: bool,
}

const fn spec(
    name: &'static str,
    group: FactorGroup,
    kind: FeatureKind,
    needs_morph: bool,
) -> FeatureSpec {
    FeatureSpec {
        name,
        group,
        kind,
        needs_morph,
    }
}

use FactorGroup::*;
use FeatureKind::*;

const MINMAX: [&str; 2] = ["minimal", "high"];
const MIN_LOW_MED_HIGH: [&str; 4] = ["minimal", "low", "medium", "high"];
const LENGTHS: [&str; 4] = ["short", "medium", "long", "xlong"];

pub const FEATURES: [FeatureSpec; 45] = [
    // basic
    spec("len-char", Basic, Quartile(LENGTHS), false),
    spec("hiragana", Basic, Quartile(MIN_LOW_MED_HIGH), false),
    spec("katakana", Basic, Median(MINMAX), false),
    spec("kanji", Basic, Quartile(MIN_LOW_MED_HIGH), false),
    spec("alphabet", Basic, Median(MINMAX), false),
    spec("digit", Basic, Median(MINMAX), false),
    spec("punct", Basic, Median(MINMAX), false),
    spec("space", Basic, Median(MINMAX), false),
    spec("symbol", Basic, Median(MINMAX), false),
    spec("punct-count", Basic, Median(["few", "most"]), false),
    spec("sentences", Basic, Median(["one", "many"]), false),
    // morphological
    spec("pos-noun", Morphological, Quartile(["low", "medium", "high", "dominant"]), true),
    spec("pos-verb", Morphological, Median(MINMAX), true),
    spec("pos-adj", Morphological, Median(MINMAX), true),
    spec("pos-adverb", Morphological, Median(MINMAX), true),
    spec("pos-particle", Morphological, Quartile(MIN_LOW_MED_HIGH), true),
    spec("pos-auxiliary", Morphological, Median(MINMAX), true),
    spec("len-token", Morphological, Quartile(LENGTHS), true),
    spec("vocab-unique", Morphological, Quartile(["few", "some", "many", "most"]), true),
    spec("vocab-diversity", Morphological, Median(["repetitive", "very-diverse"]), true),
    spec("proper-noun", Morphological, Flag, true),
    // special symbols
    spec("dialogue", Symbol, Flag, false),
    spec("parentheses", Symbol, Flag, false),
    spec("tilde", Symbol, Flag, false),
    spec("number", Symbol, Flag, false),
    spec("slang", Symbol, Flag, false),
    // sentence endings
    spec("ending-period", Ending, Flag, false),
    spec("ending-question", Ending, Flag, false),
    spec("ending-exclamation", Ending, Flag, false),
    spec("ending-ellipsis", Ending, Flag, false),
    spec("ending-noun", Ending, Flag, true),
    spec("ending-verb", Ending, Flag, true),
    spec("ending-adjective", Ending, Flag, true),
    spec("ending-particle", Ending, Flag, true),
    spec("ending-auxiliary", Ending, Flag, true),
    // writing style
    spec("polite-style", Style, Flag, false),
    spec("casual-style", Style, Flag, false),
    spec("exaggeration-rule", Style, Flag, false),
    spec("negation", Style, Flag, false),
    // prompt-response relations
    spec("prompt-overlap", Relational, Quartile(MIN_LOW_MED_HIGH), false),
    spec("prompt-kanji-share", Relational, Median(MINMAX), false),
    spec("prompt-noun", Relational, Flag, true),
    spec("prompt-verb", Relational, Flag, true),
    spec("prompt-proper-noun", Relational, Flag, true),
    spec("length-ratio", Relational, Quartile(["short", "balanced", "long", "very-long"]), false),
];

pub const STRATEGY_LABELS: [&str; 11] = [
    "wordplay",
    "shared_experience",
    "exaggeration",
    "black_joke_satire",
    "surreal_nonsense",
    "incongruity",
    "meta",
    "self_reference",
    "personification",
    "parody",
    "mini_story",
];

pub fn feature_spec(name: &str) -> Option<&'static FeatureSpec> {
    FEATURES.iter().find(|f| f.name == name)
}

/// One interpretable factor, e.g. `len-char-xlong` or `self_reference`.
///
/// Ordered by name; serialized as the bare name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FactorId {
    name: String,
    group: FactorGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not in the factor vocabulary")]
pub struct UnknownFactor(pub String);

impl FactorId {
    pub fn parse(name: &str) -> Result<Self, UnknownFactor> {
        vocabulary_index()
            .get(name)
            .map(|&group| FactorId {
                name: name.to_string(),
                group,
            })
            .ok_or_else(|| UnknownFactor(name.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> FactorGroup {
        self.group
    }
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl TryFrom<String> for FactorId {
    type Error = UnknownFactor;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        FactorId::parse(&value)
    }
}

impl From<FactorId> for String {
    fn from(value: FactorId) -> Self {
        value.name
    }
}

/// Factor names produced by one feature family.
pub fn family_factor_names(spec: &FeatureSpec) -> Vec<String> {
    match spec.kind {
        Quartile(levels) => levels.iter().map(|l| format!("{}-{l}", spec.name)).collect(),
        Median(levels) => levels.iter().map(|l| format!("{}-{l}", spec.name)).collect(),
        Flag => vec![spec.name.to_string()],
    }
}

fn vocabulary_index() -> &'static HashMap<String, FactorGroup> {
    static INDEX: OnceLock<HashMap<String, FactorGroup>> = OnceLock::new();
    INDEX.get_or_init(|| {
        let mut index = HashMap::new();
        for spec in &FEATURES {
            for name in family_factor_names(spec) {
                index.insert(name, spec.group);
            }
        }
        for label in STRATEGY_LABELS {
            index.insert(label.to_string(), Strategy);
        }
        index
    })
}

/// The full factor vocabulary in name order. With `with_morph == false`, the
/// families that need a morphological annotation are left out.
pub fn vocabulary(with_morph: bool) -> Vec<FactorId> {
    let mut out: Vec<FactorId> = FEATURES
        .iter()
        .filter(|s| with_morph || !s.needs_morph)
        .flat_map(|s| {
            family_factor_names(s).into_iter().map(move |name| FactorId {
                name,
                group: s.group,
            })
        })
        .chain(STRATEGY_LABELS.iter().map(|l| FactorId {
            name: l.to_string(),
            group: Strategy,
        }))
        .collect();
    out.sort();
    out
}
