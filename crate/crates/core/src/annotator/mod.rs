//! LLM-backed strategy labeling and preference elicitation.

mod labeling;
mod selection;
mod simulated;
mod templates;
mod transport;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use labeling::{
    annotate_strategies, majority, parse_label_reply, AnnotationOutcome, Confidence,
    LabelVote, LabelingParams,
};
pub use selection::{
    collect_preferences, condition_id, parse_selection_reply, presentation_order,
    selections_to_votes, PreferenceParams, Selection, SelectionResult,
};
pub use simulated::SimulatedBackend;
pub use templates::{
    builtin_label_specs, builtin_personas, candidate_line, persona, render_label_prompt,
    render_selection_prompt, LabelExample, Persona, SelectionRequest, StrategyLabelSpec,
    MAX_BATCH, PERSONA_NAMES,
};
pub use transport::{
    now_epoch, CassetteEntry, CompletionRequest, FnTransport, LiveTransport,
    RecordingTransport, ReplayTransport, RetryPolicy, Transport, TransportError,
};

#[derive(Debug, thiserror::Error)]
pub enum AnnotatorError {
    #[error("batch size must be between 1 and {MAX_BATCH}, got {0}")]
    BatchSize(usize),
    #[error("trial count must be odd and positive, got {0}")]
    Trials(u32),
    #[error("invalid transport configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Live,
    Replay,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub mode: TransportMode,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub credentials_env: String,
    pub model: String,
    pub cassette_path: Option<PathBuf>,
    pub temperature: f64,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            mode: TransportMode::Replay,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            credentials_env: "OPENAI_API_KEY".into(),
            model: "gpt-5.1".into(),
            cassette_path: None,
            temperature: 1.0,
            max_concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), AnnotatorError> {
        let bad = |m: String| Err(AnnotatorError::Config(m));
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!("temperature {} is not a finite non-negative number", self.temperature));
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive".into());
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be positive".into());
        }
        if self.model.is_empty() {
            return bad("model name is empty".into());
        }
        match (self.mode, &self.cassette_path) {
            (TransportMode::Replay, None) | (TransportMode::Record, None) => {
                bad("replay and record modes need cassette_path".into())
            }
            (TransportMode::Replay, Some(p)) if !p.exists() => {
                Err(TransportError::MissingCassette(p.clone()).into())
            }
            (TransportMode::Live, _) | (TransportMode::Record, _)
                if std::env::var(&self.credentials_env).map_or(true, |v| v.is_empty()) =>
            {
                Err(TransportError::MissingCredentials(self.credentials_env.clone()).into())
            }
            _ => Ok(()),
        }
    }

    pub fn request(&self, system: Option<String>, user: String, trial: u32, attempt: u32) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            system,
            user,
            temperature: self.temperature,
            trial,
            attempt,
        }
    }

    pub(crate) fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_concurrency.max(1))
            .build()
            .expect("thread pool")
    }
}

/// Transport described by `cfg`, after validation.
pub fn build_transport(cfg: &TransportConfig) -> Result<Box<dyn Transport>, AnnotatorError> {
    cfg.validate()?;
    let live = || LiveTransport::new(&cfg.endpoint, &cfg.credentials_env, cfg.retry.clone());
    Ok(match cfg.mode {
        TransportMode::Live => Box::new(live()?),
        TransportMode::Replay => Box::new(ReplayTransport::open(
            cfg.cassette_path.as_deref().expect("validated"),
        )?),
        TransportMode::Record => Box::new(RecordingTransport::new(
            live()?,
            cfg.cassette_path.as_deref().expect("validated"),
        )?),
    })
}

/// Extracts the outermost JSON object from a completion, tolerating code
/// fences and surrounding prose.
pub(crate) fn json_object(text: &str) -> Option<serde_json::Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = TransportConfig::default();
        assert!(matches!(cfg.validate(), Err(AnnotatorError::Config(_))));
        cfg.cassette_path = Some("/nonexistent/cassette.jsonl".into());
        assert!(matches!(
            cfg.validate(),
            Err(AnnotatorError::Transport(TransportError::MissingCassette(_)))
        ));
        cfg.mode = TransportMode::Live;
        cfg.credentials_env = "FACTORPREF_TEST_UNSET_KEY".into();
        assert!(matches!(
            cfg.validate(),
            Err(AnnotatorError::Transport(TransportError::MissingCredentials(_)))
        ));
        cfg.temperature = f64::NAN;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_object_tolerates_fences() {
        let v = json_object("```json\n{\"a\": 1}\n```").unwrap();
        assert_eq!(v["a"], 1);
        assert!(json_object("no json").is_none());
    }
}
