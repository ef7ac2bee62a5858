use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{eligible_prompts, Dataset, Response, VoteRecord};

use super::templates::{render_selection_prompt, Persona};
use super::transport::Transport;
use super::{json_object, AnnotatorError, TransportConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub prompt_id: String,
    pub trial: u32,
    pub selected_response_id: Option<String>,
    pub reasoning: String,
    pub presentation_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreferenceParams {
    pub trials: u32,
    pub min_candidates: usize,
    pub seed: u64,
}

impl Default for PreferenceParams {
    fn default() -> Self {
        PreferenceParams {
            trials: 3,
            min_candidates: 5,
            seed: 0,
        }
    }
}

/// Parsed reply: at most one selected id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub response_id: Option<String>,
    pub reasoning: String,
}

/// `None` when the reply is not the expected JSON or selects more than one
/// response.
pub fn parse_selection_reply(text: &str) -> Option<Selection> {
    let value = json_object(text)?;
    let picks = value.get("selected_responses")?.as_array()?;
    match picks.as_slice() {
        [] => Some(Selection {
            response_id: None,
            reasoning: String::new(),
        }),
        [one] => Some(Selection {
            response_id: Some(one.get("response_id")?.as_str()?.trim().to_string()),
            reasoning: one
                .get("reasoning")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string(),
        }),
        _ => None,
    }
}

/// Candidate order for one (prompt, trial), drawn from a stream derived from
/// the run seed.
pub fn presentation_order(seed: u64, prompt_id: &str, trial: u32, ids: &[String]) -> Vec<String> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt_id.as_bytes());
    h.update([0]);
    h.update(trial.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut order = ids.to_vec();
    order.shuffle(&mut rng);
    order
}

pub fn condition_id(model: &str, persona: &str) -> String {
    format!("{model}:{persona}")
}

/// Funniest-response selection for every prompt with at least
/// `min_candidates` responses, `trials` times each with a fresh candidate
/// order. A reply that does not parse or names an id outside the candidates
/// is re-asked once and then recorded as no selection.
pub fn collect_preferences(
    d: &Dataset,
    persona: &Persona,
    cfg: &TransportConfig,
    transport: &dyn Transport,
    params: &PreferenceParams,
) -> Result<Vec<SelectionResult>, AnnotatorError> {
    if params.trials == 0 {
        return Err(AnnotatorError::Trials(0));
    }
    let by_prompt = d.responses_by_prompt();
    let eligible = eligible_prompts(d, params.min_candidates as u64);
    let skipped = by_prompt.len() - eligible.len();
    if skipped > 0 {
        warn!(
            "{skipped} prompts have fewer than {} responses and are skipped",
            params.min_candidates
        );
    }
    let jobs: Vec<(&str, u32)> = eligible
        .iter()
        .flat_map(|p| (1..=params.trials).map(move |t| (*p, t)))
        .collect();

    let run = |&(prompt_id, trial): &(&str, u32)| {
        let prompt = d.prompt(prompt_id).expect("validated dataset");
        let ids: Vec<String> = by_prompt[prompt_id]
            .iter()
            .map(|r| r.response_id.clone())
            .collect();
        let order = presentation_order(params.seed, prompt_id, trial, &ids);
        let index: BTreeMap<&str, &Response> = by_prompt[prompt_id]
            .iter()
            .map(|r| (r.response_id.as_str(), *r))
            .collect();
        let candidates: Vec<&Response> = order.iter().map(|id| index[id.as_str()]).collect();
        let rendered = render_selection_prompt(persona, prompt, &candidates);

        let mut chosen = None;
        for attempt in 1..=2 {
            let req = cfg.request(Some(rendered.system.clone()), rendered.user.clone(), trial, attempt);
            let reply = transport.complete(&req)?;
            match parse_selection_reply(&reply) {
                Some(s) if s.response_id.as_deref().is_none_or(|id| index.contains_key(id)) => {
                    chosen = Some(s);
                    break;
                }
                Some(s) => warn!(
                    "prompt {prompt_id} trial {trial}: selected id {:?} is not a candidate",
                    s.response_id
                ),
                None => warn!("prompt {prompt_id} trial {trial}: unparseable reply"),
            }
        }
        let s = chosen.unwrap_or_else(|| {
            warn!("prompt {prompt_id} trial {trial}: recorded as no selection");
            Selection {
                response_id: None,
                reasoning: String::new(),
            }
        });
        Ok::<_, AnnotatorError>(SelectionResult {
            prompt_id: prompt_id.to_string(),
            trial,
            selected_response_id: s.response_id,
            reasoning: s.reasoning,
            presentation_order: order,
        })
    };
    cfg.pool()
        .install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>, _>>())
}

/// One vote per selecting trial, attributed to the synthetic voter
/// `<model>:<persona>:<trial>`.
pub fn selections_to_votes(results: &[SelectionResult], model: &str, persona: &str) -> Vec<VoteRecord> {
    let mut merged: BTreeMap<(String, String), u64> = BTreeMap::new();
    for r in results {
        if let Some(id) = &r.selected_response_id {
            let user = format!("{model}:{persona}:{}", r.trial);
            *merged.entry((user, id.clone())).or_insert(0) += 1;
        }
    }
    merged
        .into_iter()
        .map(|((user_id, response_id), count)| VoteRecord {
            user_id,
            response_id,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn orders_are_seeded_permutations() {
        let base = ids(8);
        let a = presentation_order(7, "p1", 1, &base);
        assert_eq!(a, presentation_order(7, "p1", 1, &base));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, base);
        let others: Vec<Vec<String>> = (2..=4).map(|t| presentation_order(7, "p1", t, &base)).collect();
        assert!(others.iter().any(|o| *o != a));
    }

    #[test]
    fn first_position_is_roughly_uniform() {
        let base = ids(5);
        let mut counts = [0usize; 5];
        for t in 0..5000 {
            let o = presentation_order(1, "p", t, &base);
            counts[o[0][1..].parse::<usize>().unwrap()] += 1;
        }
        for c in counts {
            assert!((850..1150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn parse_selection_shapes() {
        let one = parse_selection_reply(
            r#"{"selected_responses": [{"reasoning": "wordplay", "response_id": "r3"}]}"#,
        )
        .unwrap();
        assert_eq!(one.response_id.as_deref(), Some("r3"));
        let none = parse_selection_reply(r#"{"selected_responses": []}"#).unwrap();
        assert_eq!(none.response_id, None);
        assert!(parse_selection_reply(
            r#"{"selected_responses": [{"response_id": "a"}, {"response_id": "b"}]}"#
        )
        .is_none());
        assert!(parse_selection_reply("I like r3").is_none());
    }

    fn result(trial: u32, pick: Option<&str>) -> SelectionResult {
        SelectionResult {
            prompt_id: "p".into(),
            trial,
            selected_response_id: pick.map(str::to_string),
            reasoning: String::new(),
            presentation_order: vec![],
        }
    }

    #[test]
    fn votes_from_selections() {
        let all_r1 = [result(1, Some("r1")), result(2, Some("r1")), result(3, Some("r1"))];
        let v = selections_to_votes(&all_r1, "m", "no_persona");
        assert_eq!(v.len(), 3);
        assert_eq!(v.iter().map(|x| x.count).sum::<u64>(), 3);
        assert!(v.iter().all(|x| x.response_id == "r1"));
        assert_eq!(v[0].user_id, "m:no_persona:1");

        let mixed = [result(1, Some("r1")), result(2, Some("r2")), result(3, None)];
        let v = selections_to_votes(&mixed, "m", "male_20");
        let got: Vec<(&str, u64)> = v.iter().map(|x| (x.response_id.as_str(), x.count)).collect();
        assert_eq!(got, vec![("r1", 1), ("r2", 1)]);
    }
}
