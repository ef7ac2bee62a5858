//! Deterministic offline stand-in for a chat model, used to build fixtures
//! and cassettes.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::STRATEGY_LABELS;

use super::transport::{CompletionRequest, Transport, TransportError};

/// Answers label requests from a planted label table and selection requests
/// from per-persona response scores, with seeded noise keyed on the request.
#[derive(Debug, Clone, Default)]
pub struct SimulatedBackend {
    seed: u64,
    labels: HashMap<String, BTreeSet<String>>,
    label_noise: f64,
    /// system text (persona description) -> response id -> score
    scores: HashMap<String, HashMap<String, f64>>,
    default_scores: HashMap<String, f64>,
    choice_noise: f64,
    abstain_below: f64,
}

impl SimulatedBackend {
    pub fn new(seed: u64) -> Self {
        SimulatedBackend {
            seed,
            abstain_below: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    pub fn with_labels(mut self, labels: HashMap<String, BTreeSet<String>>) -> Self {
        self.labels = labels;
        self
    }

    /// Each true label is dropped, and each other label added, with
    /// probability `p` per trial.
    pub fn with_label_noise(mut self, p: f64) -> Self {
        self.label_noise = p;
        self
    }

    pub fn with_scores(mut self, system: Option<&str>, scores: HashMap<String, f64>) -> Self {
        match system {
            Some(s) => {
                self.scores.insert(s.to_string(), scores);
            }
            None => self.default_scores = scores,
        }
        self
    }

    /// Gumbel noise scale; the pick is then a softmax draw at this temperature.
    pub fn with_choice_noise(mut self, scale: f64) -> Self {
        self.choice_noise = scale;
        self
    }

    /// Selects nothing when the best noisy score falls below `threshold`.
    pub fn with_abstain_below(mut self, threshold: f64) -> Self {
        self.abstain_below = threshold;
        self
    }

    fn rng(&self, req: &CompletionRequest) -> ChaCha8Rng {
        let hash = req.hash();
        let mut key = [0u8; 32];
        hex::decode_to_slice(&hash, &mut key).expect("hex sha256");
        for (k, s) in key.iter_mut().zip(self.seed.to_le_bytes()) {
            *k ^= s;
        }
        ChaCha8Rng::from_seed(key)
    }

    fn label_reply(&self, req: &CompletionRequest, target: &str) -> String {
        let mut rng = self.rng(req);
        let mut items = Vec::new();
        let mut prompt_id = "";
        for line in target.lines() {
            if let Some(p) = line.strip_prefix("prompt_id: ") {
                prompt_id = p;
            }
            let Some(id) = line.strip_prefix("response_id: ") else {
                continue;
            };
            let truth = self.labels.get(id);
            let mut chosen = Vec::new();
            for label in STRATEGY_LABELS {
                let planted = truth.is_some_and(|t| t.contains(label));
                let flip = rng.random::<f64>() < self.label_noise;
                if planted != flip {
                    chosen.push(serde_json::json!({
                        "reason": "simulated",
                        "label": label,
                        "confidence": if planted { "high" } else { "low" },
                    }));
                }
            }
            items.push(serde_json::json!({
                "prompt_id": prompt_id,
                "response_id": id,
                "selected_labels": chosen,
            }));
        }
        serde_json::json!({ "items": items }).to_string()
    }

    fn selection_reply(&self, req: &CompletionRequest, candidates: &str) -> String {
        let mut rng = self.rng(req);
        let table = req
            .system
            .as_ref()
            .and_then(|s| self.scores.get(s))
            .unwrap_or(&self.default_scores);
        let mut best: Option<(&str, f64)> = None;
        for line in candidates.lines() {
            let Some(rest) = line.strip_prefix("- [") else {
                break;
            };
            let Some(end) = rest.find("] ") else { continue };
            let id = &rest[..end];
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let gumbel = -(-u.ln()).ln();
            let s = table.get(id).copied().unwrap_or(0.0) + self.choice_noise * gumbel;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        let picks = match best {
            Some((id, s)) if s >= self.abstain_below => vec![serde_json::json!({
                "reasoning": "simulated",
                "response_id": id,
            })],
            _ => vec![],
        };
        serde_json::json!({ "selected_responses": picks }).to_string()
    }
}

impl Transport for SimulatedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, TransportError> {
        if let Some((_, target)) = req.user.split_once("## Annotation Target\n") {
            return Ok(self.label_reply(req, target));
        }
        if let Some((_, rest)) = req.user.split_once("## Response_candidates\n") {
            return Ok(self.selection_reply(req, rest));
        }
        Err(TransportError::Payload(
            "simulated backend does not recognize the request".into(),
        ))
    }
}
