//! Quartile / median discretization of continuous features.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use super::extract::RawFeatureVector;
use super::vocab::{FactorId, FeatureKind, FEATURES};
use super::FeatureError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSpec {
    Quartile([String; 4]),
    Median([String; 2]),
}

/// Level names per continuous feature family.
pub type BinningScheme = BTreeMap<String, LevelSpec>;

/// The scheme of the linguistic feature table.
pub fn default_scheme() -> BinningScheme {
    FEATURES
        .iter()
        .filter_map(|f| {
            let spec = match f.kind {
                FeatureKind::Quartile(l) => LevelSpec::Quartile(l.map(String::from)),
                FeatureKind::Median(l) => LevelSpec::Median(l.map(String::from)),
                FeatureKind::Flag => return None,
            };
            Some((f.name.to_string(), spec))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBins {
    /// Non-decreasing cut points; 3 for quartiles, 1 for a median split.
    pub boundaries: Vec<f64>,
    /// Level suffixes, one more than `boundaries`.
    pub levels: Vec<String>,
}

impl FittedBins {
    /// Index of the level for `x`: each boundary strictly exceeded advances
    /// one level, so a value equal to a boundary stays in the lower level.
    pub fn level_of(&self, x: f64) -> usize {
        self.boundaries.iter().filter(|&&b| x > b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningModel {
    pub features: BTreeMap<String, FittedBins>,
    /// Families dropped at fit time for lack of distinct values.
    pub dropped: Vec<String>,
    pub population: String,
}

/// Percentile by linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn distinct_count(sorted: &[f64]) -> usize {
    let mut n = 0;
    let mut prev = None;
    for &x in sorted {
        if prev != Some(x) {
            n += 1;
            prev = Some(x);
        }
    }
    n
}

pub fn fit_binning(
    vectors: &[RawFeatureVector],
    scheme: &BinningScheme,
    population: &str,
) -> Result<BinningModel, FeatureError> {
    if vectors.is_empty() {
        return Err(FeatureError::EmptyPopulation);
    }
    let mut features = BTreeMap::new();
    let mut dropped = Vec::new();
    for (name, spec) in scheme {
        let mut values: Vec<f64> = vectors
            .iter()
            .filter_map(|v| v.continuous.get(name).copied())
            .filter(|x| x.is_finite())
            .collect();
        if values.is_empty() {
            // e.g. part-of-speech families when no tagger output was supplied
            continue;
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let distinct = distinct_count(&values);
        if distinct < 2 {
            warn!("feature `{name}` has fewer than 2 distinct values; dropped");
            dropped.push(name.clone());
            continue;
        }
        let fitted = match spec {
            LevelSpec::Quartile(levels) if distinct >= 4 => FittedBins {
                boundaries: vec![
                    percentile(&values, 0.25),
                    percentile(&values, 0.50),
                    percentile(&values, 0.75),
                ],
                levels: levels.to_vec(),
            },
            LevelSpec::Quartile(levels) => {
                warn!("feature `{name}` has {distinct} distinct values; using a median split");
                FittedBins {
                    boundaries: vec![percentile(&values, 0.5)],
                    levels: vec![levels[0].clone(), levels[3].clone()],
                }
            }
            LevelSpec::Median(levels) => FittedBins {
                boundaries: vec![percentile(&values, 0.5)],
                levels: levels.to_vec(),
            },
        };
        features.insert(name.clone(), fitted);
    }
    Ok(BinningModel {
        features,
        dropped,
        population: population.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSet {
    pub response_id: String,
    pub factors: BTreeSet<FactorId>,
}

pub fn apply_binning(
    response_id: &str,
    v: &RawFeatureVector,
    model: &BinningModel,
    labels: &BTreeSet<FactorId>,
) -> FactorSet {
    let mut factors = BTreeSet::new();
    for (name, bins) in &model.features {
        match v.continuous.get(name) {
            Some(&x) => {
                let level = &bins.levels[bins.level_of(x)];
                let id = format!("{name}-{level}");
                match FactorId::parse(&id) {
                    Ok(f) => {
                        factors.insert(f);
                    }
                    Err(e) => warn!("{e}"),
                }
            }
            None => warn!("response `{response_id}` has no value for `{name}`"),
        }
    }
    for (name, &on) in &v.boolean {
        if on {
            match FactorId::parse(name) {
                Ok(f) => {
                    factors.insert(f);
                }
                Err(e) => warn!("{e}"),
            }
        }
    }
    factors.extend(labels.iter().cloned());
    FactorSet {
        response_id: response_id.to_string(),
        factors,
    }
}
