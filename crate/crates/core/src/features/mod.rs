//! Turns prompt/response pairs into sets of interpretable categorical
//! factors: binned linguistic features plus humor-strategy labels.

mod binning;
mod charclass;
mod extract;
mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use binning::{
    apply_binning, default_scheme, fit_binning, percentile, BinningModel, BinningScheme,
    FactorSet, FittedBins, LevelSpec,
};
pub use charclass::{CharClass, CharClassTable};
pub use extract::{
    extract_raw_features, sentence_count, FeatureExtractor, Lexicon, MorphAnnotation, Pos,
    RawFeatureVector, Token,
};
pub use vocab::{
    feature_spec, family_factor_names, vocabulary, FactorGroup, FactorId, FeatureKind,
    FeatureSpec, UnknownFactor, FEATURES, STRATEGY_LABELS,
};

use crate::model::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot fit binning on an empty population")]
    EmptyPopulation,
    #[error(transparent)]
    UnknownFactor(#[from] UnknownFactor),
}

/// Strategy labels for one response; the hand-off record between the
/// annotator and feature extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub response_id: String,
    pub labels: BTreeSet<FactorId>,
}

pub struct FactorTable {
    pub binning: BinningModel,
    pub raw: BTreeMap<String, RawFeatureVector>,
    pub factor_sets: Vec<FactorSet>,
}

/// Extracts raw features for every response, fits the binning on that whole
/// population and applies it. Output is in response-id order.
pub fn build_factor_sets(
    dataset: &Dataset,
    extractor: &FeatureExtractor,
    morph: &HashMap<String, MorphAnnotation>,
    labels: &HashMap<String, BTreeSet<FactorId>>,
    scheme: &BinningScheme,
) -> Result<FactorTable, FeatureError> {
    let raw: Vec<(String, RawFeatureVector)> = dataset
        .responses()
        .par_iter()
        .map(|r| {
            let prompt = dataset.prompt(&r.prompt_id).expect("integrity");
            (
                r.response_id.clone(),
                extractor.extract(prompt, r, morph.get(&r.response_id)),
            )
        })
        .collect();
    let vectors: Vec<RawFeatureVector> = raw.iter().map(|(_, v)| v.clone()).collect();
    let binning = fit_binning(&vectors, scheme, "filtered-dataset")?;
    let empty = BTreeSet::new();
    let factor_sets = raw
        .iter()
        .map(|(id, v)| apply_binning(id, v, &binning, labels.get(id).unwrap_or(&empty)))
        .collect();
    Ok(FactorTable {
        binning,
        raw: raw.into_iter().collect(),
        factor_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Prompt, Response};

    #[test]
    fn every_binned_family_contributes_one_level() {
        let prompts = vec![Prompt {
            prompt_id: "p".into(),
            text: "こんな猫は嫌だ".into(),
        }];
        let texts = [
            "空を飛ぶ",
            "「にゃー」と鳴く。",
            "ずっと寝てるwww",
            "世界一かわいい猫です！",
            "カレーが好き(笑)",
            "100匹いる",
            "ABCしか喋らない…",
            "嫌です",
        ];
        let responses = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Response {
                response_id: format!("r{i}"),
                prompt_id: "p".into(),
                text: t.to_string(),
            })
            .collect();
        let d = Dataset::new(prompts, responses, vec![], Default::default()).unwrap();
        let table = build_factor_sets(
            &d,
            &FeatureExtractor::default(),
            &HashMap::new(),
            &HashMap::new(),
            &default_scheme(),
        )
        .unwrap();
        assert_eq!(table.factor_sets.len(), texts.len());
        for fs in &table.factor_sets {
            for family in table.binning.features.keys() {
                let hits = fs
                    .factors
                    .iter()
                    .filter(|f| {
                        f.name()
                            .strip_prefix(family.as_str())
                            .and_then(|rest| rest.strip_prefix('-'))
                            .is_some_and(|lvl| table.binning.features[family].levels.iter().any(|l| l == lvl))
                    })
                    .count();
                assert_eq!(hits, 1, "{family} in {:?}", fs.factors);
            }
        }
    }
}
