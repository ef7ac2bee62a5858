//! Domain records for vote-based response data, ingestion, and the
//! active-user / minimum-vote filters that define the analytical dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::io::{read_jsonl, write_jsonl, IoError};

/// Votes a single user may spend on one prompt.
pub const MAX_VOTES_PER_PROMPT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub response_id: String,
    pub prompt_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub user_id: String,
    pub response_id: String,
    pub count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("response `{response_id}` references unknown prompt `{prompt_id}`")]
    DanglingPrompt {
        response_id: String,
        prompt_id: String,
    },
    #[error("vote by `{user_id}` references unknown response `{response_id}`")]
    DanglingResponse {
        user_id: String,
        response_id: String,
    },
    #[error("{kind} `{id}` has empty text")]
    EmptyText { kind: &'static str, id: String },
}

/// A validated collection of prompts, responses and per-user votes.
///
/// All three collections are kept sorted by id; votes are sorted by
/// `(user_id, response_id)` and unique on that pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    prompts: Vec<Prompt>,
    responses: Vec<Response>,
    votes: Vec<VoteRecord>,
    pub provenance: BTreeMap<String, serde_json::Value>,
    prompt_index: HashMap<String, usize>,
    response_index: HashMap<String, usize>,
}

impl Dataset {
    /// Validates referential integrity. Duplicate `(user, response)` vote rows
    /// are merged by summing their counts and zero-count rows are dropped,
    /// both with a warning.
    pub fn new(
        mut prompts: Vec<Prompt>,
        mut responses: Vec<Response>,
        votes: Vec<VoteRecord>,
        provenance: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self, DatasetError> {
        prompts.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        responses.sort_by(|a, b| a.response_id.cmp(&b.response_id));

        let mut prompt_index = HashMap::with_capacity(prompts.len());
        for (i, p) in prompts.iter().enumerate() {
            if p.text.is_empty() {
                return Err(DatasetError::EmptyText {
                    kind: "prompt",
                    id: p.prompt_id.clone(),
                });
            }
            if prompt_index.insert(p.prompt_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId {
                    kind: "prompt",
                    id: p.prompt_id.clone(),
                });
            }
        }

        let mut response_index = HashMap::with_capacity(responses.len());
        for (i, r) in responses.iter().enumerate() {
            if r.text.is_empty() {
                return Err(DatasetError::EmptyText {
                    kind: "response",
                    id: r.response_id.clone(),
                });
            }
            if !prompt_index.contains_key(&r.prompt_id) {
                return Err(DatasetError::DanglingPrompt {
                    response_id: r.response_id.clone(),
                    prompt_id: r.prompt_id.clone(),
                });
            }
            if response_index.insert(r.response_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId {
                    kind: "response",
                    id: r.response_id.clone(),
                });
            }
        }

        let mut merged: BTreeMap<(String, String), u64> = BTreeMap::new();
        for v in votes {
            if !response_index.contains_key(&v.response_id) {
                return Err(DatasetError::DanglingResponse {
                    user_id: v.user_id,
                    response_id: v.response_id,
                });
            }
            let slot = merged.entry((v.user_id, v.response_id)).or_insert(0);
            if *slot > 0 {
                warn!("merging duplicate vote rows (summing counts)");
            }
            *slot += v.count;
        }
        let votes: Vec<VoteRecord> = merged
            .into_iter()
            .filter_map(|((user_id, response_id), count)| {
                if count == 0 {
                    warn!("dropping zero-count vote by `{user_id}` for `{response_id}`");
                    None
                } else {
                    Some(VoteRecord {
                        user_id,
                        response_id,
                        count,
                    })
                }
            })
            .collect();

        Ok(Dataset {
            prompts,
            responses,
            votes,
            provenance,
            prompt_index,
            response_index,
        })
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.votes
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty() && self.responses.is_empty() && self.votes.is_empty()
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<&Prompt> {
        self.prompt_index.get(prompt_id).map(|&i| &self.prompts[i])
    }

    pub fn response(&self, response_id: &str) -> Option<&Response> {
        self.response_index
            .get(response_id)
            .map(|&i| &self.responses[i])
    }

    /// Response ids grouped per prompt, both levels in id order. Prompts with
    /// no responses map to an empty list.
    pub fn responses_by_prompt(&self) -> BTreeMap<&str, Vec<&Response>> {
        let mut out: BTreeMap<&str, Vec<&Response>> = self
            .prompts
            .iter()
            .map(|p| (p.prompt_id.as_str(), Vec::new()))
            .collect();
        for r in &self.responses {
            out.get_mut(r.prompt_id.as_str())
                .expect("integrity checked at construction")
                .push(r);
        }
        out
    }

    /// Per-response vote totals `v`; responses without votes report 0.
    pub fn response_totals(&self) -> BTreeMap<&str, u64> {
        let mut totals: BTreeMap<&str, u64> = self
            .responses
            .iter()
            .map(|r| (r.response_id.as_str(), 0))
            .collect();
        for v in &self.votes {
            *totals.get_mut(v.response_id.as_str()).expect("integrity") += v.count;
        }
        totals
    }

    pub fn user_totals(&self) -> BTreeMap<&str, u64> {
        let mut totals = BTreeMap::new();
        for v in &self.votes {
            *totals.entry(v.user_id.as_str()).or_insert(0) += v.count;
        }
        totals
    }

    pub fn users(&self) -> Vec<&str> {
        self.user_totals().into_keys().collect()
    }

    pub fn total_votes(&self) -> u64 {
        self.votes.iter().map(|v| v.count).sum()
    }

    /// `(user, prompt, total)` triples where a user spent more than the
    /// platform's per-prompt allowance.
    pub fn vote_rule_violations(&self) -> Vec<(String, String, u64)> {
        let mut per: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for v in &self.votes {
            let prompt = &self.responses[self.response_index[&v.response_id]].prompt_id;
            *per.entry((v.user_id.as_str(), prompt.as_str())).or_insert(0) += v.count;
        }
        per.into_iter()
            .filter(|&(_, total)| total > MAX_VOTES_PER_PROMPT)
            .map(|((u, p), total)| (u.to_string(), p.to_string(), total))
            .collect()
    }

    /// Restricts the dataset to the given vote rows, keeping every prompt and
    /// response.
    pub fn with_votes(&self, votes: Vec<VoteRecord>) -> Result<Dataset, DatasetError> {
        Dataset::new(
            self.prompts.clone(),
            self.responses.clone(),
            votes,
            self.provenance.clone(),
        )
    }

    /// Writes `prompts.jsonl`, `responses.jsonl` and `votes.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        write_jsonl(&dir.join("prompts.jsonl"), &self.prompts)?;
        write_jsonl(&dir.join("responses.jsonl"), &self.responses)?;
        write_jsonl(&dir.join("votes.jsonl"), &self.votes)?;
        Ok(())
    }
}

pub fn load_dataset(
    prompts_path: &Path,
    responses_path: &Path,
    votes_path: &Path,
) -> Result<Dataset, DatasetError> {
    let prompts: Vec<Prompt> = read_jsonl(prompts_path)?;
    let responses: Vec<Response> = read_jsonl(responses_path)?;
    let votes: Vec<VoteRecord> = read_jsonl(votes_path)?;
    let mut provenance = BTreeMap::new();
    provenance.insert(
        "source.prompts".to_string(),
        serde_json::Value::String(prompts_path.display().to_string()),
    );
    let dataset = Dataset::new(prompts, responses, votes, provenance)?;
    for (user, prompt, total) in dataset.vote_rule_violations() {
        warn!(
            "user `{user}` cast {total} votes on prompt `{prompt}` (platform allows {MAX_VOTES_PER_PROMPT})"
        );
    }
    Ok(dataset)
}

/// Loads the three standard files from a directory written by [`Dataset::save`].
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, DatasetError> {
    load_dataset(
        &dir.join("prompts.jsonl"),
        &dir.join("responses.jsonl"),
        &dir.join("votes.jsonl"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub min_user_votes: u64,
    pub min_response_votes: u64,
    /// Only used when exporting prompts for LLM preference collection.
    pub min_responses_per_prompt: u64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_user_votes: 100,
            min_response_votes: 3,
            min_responses_per_prompt: 5,
        }
    }
}

const FILTER_KEY: &str = "filter";

fn filter_record(p: &FilterParams) -> serde_json::Value {
    serde_json::json!({
        "min_user_votes": p.min_user_votes,
        "min_response_votes": p.min_response_votes,
    })
}

/// Drops inactive users' votes, then responses whose recomputed total falls
/// below `min_response_votes` (and their votes). One pass, in that order.
///
/// Re-applying the parameters already recorded in the provenance returns the
/// dataset unchanged.
pub fn filter_dataset(d: &Dataset, p: &FilterParams) -> Dataset {
    let record = filter_record(p);
    if d.provenance.get(FILTER_KEY) == Some(&record) {
        return d.clone();
    }

    let active: BTreeSet<&str> = d
        .user_totals()
        .into_iter()
        .filter(|&(_, total)| total >= p.min_user_votes)
        .map(|(u, _)| u)
        .collect();
    let votes: Vec<&VoteRecord> = d
        .votes
        .iter()
        .filter(|v| active.contains(v.user_id.as_str()))
        .collect();

    let mut totals: HashMap<&str, u64> = d
        .responses
        .iter()
        .map(|r| (r.response_id.as_str(), 0))
        .collect();
    for v in &votes {
        *totals.get_mut(v.response_id.as_str()).expect("integrity") += v.count;
    }
    let keep = |id: &str| totals[id] >= p.min_response_votes;

    let responses: Vec<Response> = d
        .responses
        .iter()
        .filter(|r| keep(&r.response_id))
        .cloned()
        .collect();
    let votes: Vec<VoteRecord> = votes
        .into_iter()
        .filter(|v| keep(&v.response_id))
        .cloned()
        .collect();

    let mut provenance = d.provenance.clone();
    provenance.insert(FILTER_KEY.to_string(), record);
    Dataset::new(d.prompts.clone(), responses, votes, provenance)
        .expect("subset of a valid dataset is valid")
}

/// Prompts that keep at least `min_responses` responses, for the LLM
/// preference-collection export.
pub fn eligible_prompts(d: &Dataset, min_responses: u64) -> Vec<&str> {
    d.responses_by_prompt()
        .into_iter()
        .filter(|(_, rs)| rs.len() as u64 >= min_responses)
        .map(|(p, _)| p)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub prompts: usize,
    pub responses: usize,
    pub users: usize,
    pub votes: u64,
    pub mean_voters_per_prompt: f64,
}

pub fn dataset_stats(d: &Dataset) -> StatsReport {
    let mut voters: BTreeMap<&str, BTreeSet<&str>> = d
        .prompts
        .iter()
        .map(|p| (p.prompt_id.as_str(), BTreeSet::new()))
        .collect();
    for v in &d.votes {
        let prompt = d.response(&v.response_id).expect("integrity").prompt_id.as_str();
        voters.get_mut(prompt).expect("integrity").insert(v.user_id.as_str());
    }
    let mean = if voters.is_empty() {
        0.0
    } else {
        voters.values().map(|s| s.len()).sum::<usize>() as f64 / voters.len() as f64
    };
    StatsReport {
        prompts: d.prompts.len(),
        responses: d.responses.len(),
        users: d.user_totals().len(),
        votes: d.total_votes(),
        mean_voters_per_prompt: mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(id: &str) -> Prompt {
        Prompt {
            prompt_id: id.into(),
            text: format!("prompt {id}"),
        }
    }
    fn r(id: &str, prompt: &str) -> Response {
        Response {
            response_id: id.into(),
            prompt_id: prompt.into(),
            text: format!("response {id}"),
        }
    }
    fn v(user: &str, resp: &str, count: u64) -> VoteRecord {
        VoteRecord {
            user_id: user.into(),
            response_id: resp.into(),
            count,
        }
    }

    #[test]
    fn totals_are_aggregated_per_response() {
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1"), r("r2", "p1")],
            vec![v("a", "r1", 2), v("b", "r1", 1), v("a", "r2", 1)],
            BTreeMap::new(),
        )
        .unwrap();
        let totals = d.response_totals();
        assert_eq!(totals["r1"], 3);
        assert_eq!(totals["r2"], 1);
        assert_eq!(d.total_votes(), 4);
    }

    #[test]
    fn dangling_vote_names_the_response() {
        let err = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1")],
            vec![v("a", "ghost", 1)],
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn duplicate_votes_are_merged() {
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1")],
            vec![v("a", "r1", 1), v("a", "r1", 1)],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(d.votes(), &[v("a", "r1", 2)]);
    }

    #[test]
    fn over_allowance_is_reported_not_rejected() {
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1"), r("r2", "p1")],
            vec![v("a", "r1", 3), v("a", "r2", 1)],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(
            d.vote_rule_violations(),
            vec![("a".to_string(), "p1".to_string(), 4)]
        );
    }

    #[test]
    fn inactive_user_votes_are_removed() {
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1")],
            vec![v("a", "r1", 99)],
            BTreeMap::new(),
        )
        .unwrap();
        let f = filter_dataset(
            &d,
            &FilterParams {
                min_user_votes: 100,
                min_response_votes: 0,
                ..Default::default()
            },
        );
        assert!(f.votes().is_empty());
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r1", "p1"), r("r2", "p1")],
            vec![v("a", "r1", 1)],
            BTreeMap::new(),
        )
        .unwrap();
        let f = filter_dataset(
            &d,
            &FilterParams {
                min_user_votes: 0,
                min_response_votes: 0,
                ..Default::default()
            },
        );
        assert_eq!(f.prompts(), d.prompts());
        assert_eq!(f.responses(), d.responses());
        assert_eq!(f.votes(), d.votes());
    }

    #[test]
    fn response_filter_uses_recomputed_totals() {
        // A has 120 votes in total, B only 50; r gets 2 from A and 1 from B.
        let d = Dataset::new(
            vec![p("p1")],
            vec![r("r", "p1"), r("other", "p1")],
            vec![v("A", "r", 2), v("A", "other", 118), v("B", "r", 1), v("B", "other", 49)],
            BTreeMap::new(),
        )
        .unwrap();
        let f = filter_dataset(&d, &FilterParams::default());
        assert!(f.response("r").is_none());
        assert!(f.response("other").is_some());
        assert_eq!(f.votes(), &[v("A", "other", 118)]);
    }

    #[test]
    fn stats_on_empty_and_small_inputs() {
        let s = dataset_stats(&Dataset::default());
        assert_eq!(s.prompts, 0);
        assert_eq!(s.mean_voters_per_prompt, 0.0);

        let d = Dataset::new(
            vec![p("p1"), p("p2")],
            vec![r("r1", "p1"), r("r2", "p2")],
            ["a", "b", "c"]
                .iter()
                .map(|u| v(u, "r1", 1))
                .chain(["a", "b", "c", "d", "e"].iter().map(|u| v(u, "r2", 1)))
                .collect(),
            BTreeMap::new(),
        )
        .unwrap();
        let s = dataset_stats(&d);
        assert_eq!(s.mean_voters_per_prompt, 4.0);
        assert_eq!(s.users, 5);
        assert_eq!(s.votes, 8);
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(
            vec![p("p1"), p("p2")],
            vec![r("r1", "p1"), r("r2", "p2")],
            vec![v("a", "r1", 2), v("b", "r2", 1)],
            BTreeMap::new(),
        )
        .unwrap();
        d.save(dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.prompts(), d.prompts());
        assert_eq!(back.responses(), d.responses());
        assert_eq!(back.votes(), d.votes());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        std::fs::write(&path, "{\"prompt_id\":\"p\",\"text\":\"t\"}\nnot json\n").unwrap();
        let err = read_jsonl::<Prompt>(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_jsonl::<Prompt>(&path),
            Err(IoError::Empty { .. })
        ));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        prop::collection::vec((0usize..6, 0usize..12, 1u64..4), 0..80).prop_map(|rows| {
            let prompts = (0..3).map(|i| p(&format!("p{i}"))).collect();
            let responses = (0..12)
                .map(|i| r(&format!("r{i:02}"), &format!("p{}", i % 3)))
                .collect();
            let votes = rows
                .into_iter()
                .map(|(u, resp, c)| v(&format!("u{u}"), &format!("r{resp:02}"), c))
                .collect();
            Dataset::new(prompts, responses, votes, BTreeMap::new()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent_and_conserves_totals(
            d in arb_dataset(), mu in 0u64..12, mr in 0u64..6
        ) {
            let params = FilterParams { min_user_votes: mu, min_response_votes: mr, ..Default::default() };
            let once = filter_dataset(&d, &params);
            let twice = filter_dataset(&once, &params);
            prop_assert_eq!(&once, &twice);
            let totals: u64 = once.response_totals().values().sum();
            prop_assert_eq!(totals, once.total_votes());
        }

        #[test]
        fn raising_thresholds_never_adds_records(
            d in arb_dataset(), mu in 0u64..12, mr in 0u64..6, du in 0u64..5, dr in 0u64..3
        ) {
            let lo = filter_dataset(&d, &FilterParams { min_user_votes: mu, min_response_votes: mr, ..Default::default() });
            let hi = filter_dataset(&d, &FilterParams { min_user_votes: mu + du, min_response_votes: mr + dr, ..Default::default() });
            for vote in hi.votes() {
                prop_assert!(lo.votes().contains(vote));
            }
            for resp in hi.responses() {
                prop_assert!(lo.response(&resp.response_id).is_some());
            }
        }
    }
}
