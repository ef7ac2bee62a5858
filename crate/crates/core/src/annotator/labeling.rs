use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FactorGroup, FactorId, LabelRecord};
use crate::model::{Dataset, Prompt, Response};

use super::templates::{render_label_prompt, StrategyLabelSpec, MAX_BATCH};
use super::transport::Transport;
use super::{json_object, AnnotatorError, TransportConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// Labels one trial assigned to one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVote {
    pub response_id: String,
    pub trial: u32,
    pub labels: BTreeMap<FactorId, Confidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingParams {
    pub trials: u32,
    pub batch_size: usize,
}

impl Default for LabelingParams {
    fn default() -> Self {
        LabelingParams {
            trials: 3,
            batch_size: MAX_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationOutcome {
    /// Majority labels per response id; every response of the dataset is
    /// present, possibly with an empty set.
    pub labels: BTreeMap<String, BTreeSet<FactorId>>,
    pub votes: Vec<LabelVote>,
    /// (batch index, trial) pairs whose replies never parsed.
    pub failed_trials: Vec<(usize, u32)>,
}

impl AnnotationOutcome {
    pub fn records(&self) -> Vec<LabelRecord> {
        self.labels
            .iter()
            .map(|(r, l)| LabelRecord {
                response_id: r.clone(),
                labels: l.clone(),
            })
            .collect()
    }
}

/// Labels present in more than half of `trials`.
pub fn majority<'a>(votes: impl IntoIterator<Item = &'a BTreeSet<FactorId>>, trials: u32) -> BTreeSet<FactorId> {
    let mut counts: BTreeMap<&FactorId, u32> = BTreeMap::new();
    for set in votes {
        for l in set {
            *counts.entry(l).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > trials)
        .map(|(l, _)| l.clone())
        .collect()
}

fn parse_confidence(v: &serde_json::Value) -> Confidence {
    match v.as_str().map(|s| s.trim().to_ascii_lowercase()).as_deref() {
        Some("high") => Confidence::High,
        Some("medium") => Confidence::Medium,
        Some("low") => Confidence::Low,
        other => {
            warn!("confidence {other:?} not recognized, recorded as low");
            Confidence::Low
        }
    }
}

/// Labels per response id for the ids in `batch`. `None` when the reply has
/// no parseable `items` array. Unknown labels and ids are skipped; batch ids
/// missing from the reply get an empty map.
pub fn parse_label_reply(
    text: &str,
    batch: &[&str],
) -> Option<HashMap<String, BTreeMap<FactorId, Confidence>>> {
    let value = json_object(text)?;
    let items = value.get("items")?.as_array()?;
    let mut out: HashMap<String, BTreeMap<FactorId, Confidence>> =
        batch.iter().map(|id| (id.to_string(), BTreeMap::new())).collect();
    for item in items {
        let Some(id) = item.get("response_id").and_then(|v| v.as_str()) else {
            continue;
        };
        let Some(slot) = out.get_mut(id) else {
            warn!("reply labels response `{id}`, which is not in the batch");
            continue;
        };
        let Some(selected) = item.get("selected_labels").and_then(|v| v.as_array()) else {
            continue;
        };
        for choice in selected {
            let Some(name) = choice.get("label").and_then(|v| v.as_str()) else {
                continue;
            };
            match FactorId::parse(name.trim()) {
                Ok(f) if f.group() == FactorGroup::Strategy => {
                    let conf = parse_confidence(&choice["confidence"]);
                    slot.entry(f)
                        .and_modify(|c| *c = (*c).min(conf))
                        .or_insert(conf);
                }
                _ => warn!("ignoring unknown strategy label `{name}`"),
            }
        }
    }
    Some(out)
}

/// Self-consistency strategy labeling: every batch is sent `trials` times and
/// a label is kept when a strict majority of trials assigned it.
pub fn annotate_strategies(
    d: &Dataset,
    cfg: &TransportConfig,
    transport: &dyn Transport,
    specs: &[StrategyLabelSpec],
    params: &LabelingParams,
) -> Result<AnnotationOutcome, AnnotatorError> {
    if params.trials == 0 || params.trials.is_multiple_of(2) {
        return Err(AnnotatorError::Trials(params.trials));
    }
    if params.batch_size == 0 || params.batch_size > MAX_BATCH {
        return Err(AnnotatorError::BatchSize(params.batch_size));
    }
    let pairs: Vec<(&Prompt, &Response)> = d
        .responses()
        .iter()
        .map(|r| (d.prompt(&r.prompt_id).expect("validated dataset"), r))
        .collect();
    let batches: Vec<&[(&Prompt, &Response)]> = pairs.chunks(params.batch_size).collect();
    let texts: Vec<String> = batches
        .iter()
        .map(|b| render_label_prompt(b, specs))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u32)> = (0..batches.len())
        .flat_map(|b| (1..=params.trials).map(move |t| (b, t)))
        .collect();

    let run = |&(b, trial): &(usize, u32)| {
        let ids: Vec<&str> = batches[b].iter().map(|(_, r)| r.response_id.as_str()).collect();
        for attempt in 1..=cfg.retry.max_attempts {
            let req = cfg.request(None, texts[b].clone(), trial, attempt);
            let reply = transport.complete(&req)?;
            if let Some(parsed) = parse_label_reply(&reply, &ids) {
                return Ok((b, trial, Some(parsed)));
            }
            warn!("batch {b} trial {trial} attempt {attempt}: unparseable reply");
        }
        warn!("batch {b} trial {trial}: no parseable reply, counted as an empty trial");
        Ok::<_, AnnotatorError>((b, trial, None))
    };
    let results: Vec<_> = cfg
        .pool()
        .install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>, _>>())?;

    let mut outcome = AnnotationOutcome::default();
    let mut per_response: BTreeMap<String, Vec<BTreeSet<FactorId>>> = BTreeMap::new();
    for (b, trial, parsed) in results {
        if parsed.is_none() {
            outcome.failed_trials.push((b, trial));
        }
        let mut parsed = parsed.unwrap_or_default();
        for (_, r) in batches[b] {
            let labels = parsed.remove(&r.response_id).unwrap_or_default();
            per_response
                .entry(r.response_id.clone())
                .or_default()
                .push(labels.keys().cloned().collect());
            outcome.votes.push(LabelVote {
                response_id: r.response_id.clone(),
                trial,
                labels,
            });
        }
    }
    outcome.votes.sort_by(|a, b| (&a.response_id, a.trial).cmp(&(&b.response_id, b.trial)));
    outcome.labels = per_response
        .into_iter()
        .map(|(r, sets)| (r, majority(&sets, params.trials)))
        .collect();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[&str]) -> BTreeSet<FactorId> {
        names.iter().map(|n| FactorId::parse(n).unwrap()).collect()
    }

    #[test]
    fn majority_rule() {
        let trials = [set(&["wordplay", "meta"]), set(&["wordplay"]), set(&["parody"])];
        assert_eq!(majority(&trials, 3), set(&["wordplay"]));
        let only_second = [set(&[]), set(&["meta"]), set(&[])];
        assert!(majority(&only_second, 3).is_empty());
        let mut rev = trials.clone();
        rev.reverse();
        assert_eq!(majority(&rev, 3), majority(&trials, 3));
    }

    #[test]
    fn parse_reply_filters_unknowns() {
        let text = r#"Here you go:
```json
{"items": [
  {"prompt_id": "p", "response_id": "r1", "selected_labels": [
    {"reason": "pun", "label": "wordplay", "confidence": "high"},
    {"reason": "?", "label": "sarcasm", "confidence": "low"},
    {"reason": "not a strategy", "label": "dialogue", "confidence": "low"}
  ]},
  {"prompt_id": "p", "response_id": "zz", "selected_labels": []}
]}
```"#;
        let parsed = parse_label_reply(text, &["r1", "r2"]).unwrap();
        assert_eq!(parsed["r1"].len(), 1);
        assert_eq!(parsed["r1"][&FactorId::parse("wordplay").unwrap()], Confidence::High);
        assert!(parsed["r2"].is_empty());
        assert!(!parsed.contains_key("zz"));
        assert!(parse_label_reply("{\"oops\": 1}", &["r1"]).is_none());
        assert!(parse_label_reply("not json", &["r1"]).is_none());
    }
}
