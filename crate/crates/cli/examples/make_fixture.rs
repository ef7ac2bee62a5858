//! Regenerates the bundled synthetic fixture and its cassettes.
//!
//! cargo run -p factorpref-cli --example make_fixture [-- <dir>]
//!
//! Two planted user groups: group A votes for responses ending in `！`,
//! group B for responses carrying `（笑）`. LLM answers come from the
//! simulated backend and are recorded through the real pipeline stages, so
//! replay hits exactly the requests the CLI makes.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use factorpref_cli::{LoadedConfig, Pipeline};
use factorpref_core::annotator::{persona, RecordingTransport, SimulatedBackend};
use factorpref_core::features::{MorphAnnotation, Pos, Token};
use factorpref_core::io::{write_jsonl, write_string};
use factorpref_core::model::{Prompt, Response, VoteRecord};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_251_018;
const GROUP_SIZE: usize = 30;

const NOUNS: [&str; 10] = ["猫", "先生", "電車", "宇宙人", "カレー", "会社", "冷蔵庫", "忍者", "布団", "ロボット"];
const PROPER: [&str; 3] = ["富士山", "東京", "太郎"];
const PARTICLES: [&str; 4] = ["が", "を", "に", "で"];
const VERBS: [&str; 6] = ["走る", "歌う", "踊る", "寝る", "怒る", "泣く"];
const ADJECTIVES: [&str; 4] = ["大きい", "怖い", "眠い", "熱い"];
const TOPICS: [&str; 8] = ["猫", "先生", "会社", "電車", "冷蔵庫", "忍者", "布団", "ロボット"];

struct Planted {
    exclaim: bool,
    laugh: bool,
}

fn tok(surface: &str, pos: Pos) -> Token {
    Token {
        surface: surface.to_string(),
        pos,
    }
}

fn response_tokens(rng: &mut ChaCha8Rng, topic: &str, p: &Planted) -> Vec<Token> {
    let mut t = Vec::new();
    let clauses = rng.random_range(1..=3);
    for c in 0..clauses {
        if c == 0 && rng.random_bool(0.5) {
            t.push(tok(topic, Pos::Noun));
        } else if rng.random_bool(0.2) {
            t.push(tok(PROPER.choose(rng).unwrap(), Pos::ProperNoun));
        } else {
            t.push(tok(NOUNS.choose(rng).unwrap(), Pos::Noun));
        }
        t.push(tok(PARTICLES.choose(rng).unwrap(), Pos::Particle));
        if rng.random_bool(0.3) {
            t.push(tok("とても", Pos::Adverb));
        }
        if rng.random_bool(0.6) {
            t.push(tok(VERBS.choose(rng).unwrap(), Pos::Verb));
        } else {
            t.push(tok(ADJECTIVES.choose(rng).unwrap(), Pos::Adjective));
        }
        if rng.random_bool(0.3) {
            t.push(tok("です", Pos::Auxiliary));
        }
        if c + 1 < clauses {
            t.push(tok("、", Pos::Other));
        }
    }
    if p.laugh {
        t.push(tok("（笑）", Pos::Other));
    }
    if p.exclaim {
        t.push(tok("！", Pos::Other));
    }
    t
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    -(-u.ln()).ln()
}

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic"));
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut prompts = Vec::new();
    let mut responses = Vec::new();
    let mut morph = Vec::new();
    let mut planted: HashMap<String, Planted> = HashMap::new();
    let mut by_prompt: Vec<Vec<String>> = Vec::new();
    for p in 0..32 {
        let topic = TOPICS[p % TOPICS.len()];
        let prompt_id = format!("p{p:02}");
        prompts.push(Prompt {
            prompt_id: prompt_id.clone(),
            text: format!("こんな{topic}は嫌だ。どんな{topic}？"),
        });
        let n = if p >= 30 { 4 } else { 8 };
        let mut ids = Vec::new();
        for r in 0..n {
            let response_id = format!("{prompt_id}r{r}");
            let traits = Planted {
                exclaim: r % 2 == 0,
                laugh: (r / 2) % 2 == 0,
            };
            let tokens = response_tokens(&mut rng, topic, &traits);
            responses.push(Response {
                response_id: response_id.clone(),
                prompt_id: prompt_id.clone(),
                text: tokens.iter().map(|t| t.surface.as_str()).collect(),
            });
            morph.push(MorphAnnotation {
                response_id: response_id.clone(),
                tokens,
            });
            planted.insert(response_id.clone(), traits);
            ids.push(response_id);
        }
        by_prompt.push(ids);
    }

    let score = |id: &str, group: usize| {
        let t = &planted[id];
        match group {
            0 => 2.5 * f64::from(u8::from(t.exclaim)) - 0.5 * f64::from(u8::from(t.laugh)),
            _ => 2.5 * f64::from(u8::from(t.laugh)) - 0.5 * f64::from(u8::from(t.exclaim)),
        }
    };
    let mut votes = Vec::new();
    for u in 0..2 * GROUP_SIZE {
        let group = u / GROUP_SIZE;
        for ids in &by_prompt {
            let mut ranked: Vec<(f64, &String)> = ids.iter().map(|id| (score(id, group) + gumbel(&mut rng), id)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let picks = rng.random_range(1..=2);
            for (_, id) in ranked.iter().take(picks) {
                votes.push(VoteRecord {
                    user_id: format!("u{u:03}"),
                    response_id: id.to_string(),
                    count: 1,
                });
            }
        }
    }
    // occasional visitors, removed by the activity filter
    for u in 0..6 {
        for ids in by_prompt.iter().take(3) {
            votes.push(VoteRecord {
                user_id: format!("v{u:03}"),
                response_id: ids.choose(&mut rng).unwrap().clone(),
                count: 1,
            });
        }
    }

    write_jsonl(&dir.join("prompts.jsonl"), &prompts)?;
    write_jsonl(&dir.join("responses.jsonl"), &responses)?;
    write_jsonl(&dir.join("votes.jsonl"), &votes)?;
    write_jsonl(&dir.join("morph.jsonl"), &morph)?;
    write_string(&dir.join("factorpref.toml"), CONFIG)?;

    let cassettes = dir.join("cassettes");
    for f in ["labels.jsonl", "selections.jsonl"] {
        let p = cassettes.join(f);
        if p.exists() {
            std::fs::remove_file(&p)?;
        }
    }

    let labels: HashMap<String, BTreeSet<String>> = planted
        .iter()
        .map(|(id, t)| {
            let mut s = BTreeSet::new();
            if t.exclaim {
                s.insert("exaggeration".to_string());
            }
            if t.laugh {
                s.insert("self_reference".to_string());
            }
            if id.ends_with('7') {
                s.insert("wordplay".to_string());
            }
            (id.clone(), s)
        })
        .collect();
    let labeler = SimulatedBackend::new(SEED).with_labels(labels).with_label_noise(0.05);

    let persona_scores = |f: &dyn Fn(&Planted) -> f64| -> HashMap<String, f64> {
        planted.iter().map(|(id, t)| (id.clone(), f(t))).collect()
    };
    let b = |x: bool| f64::from(u8::from(x));
    let selector = SimulatedBackend::new(SEED)
        .with_choice_noise(1.0)
        .with_scores(
            Some(&persona("no_persona").unwrap().description),
            persona_scores(&|t| 2.0 * b(t.exclaim)),
        )
        .with_scores(
            Some(&persona("female_20").unwrap().description),
            persona_scores(&|t| 2.0 * b(t.laugh)),
        )
        .with_scores(
            Some(&persona("male_65").unwrap().description),
            persona_scores(&|t| b(t.exclaim) + b(t.laugh)),
        );

    let scratch = tempfile::tempdir()?;
    let out = format!("paths.out_dir=\"{}\"", scratch.path().display());
    let config = LoadedConfig::load(&dir.join("factorpref.toml"), &[out])?;
    let mut pipeline = Pipeline::open(config, false)?;
    pipeline.ingest()?;
    pipeline.annotate(Some(&RecordingTransport::new(labeler, &cassettes.join("labels.jsonl"))?))?;
    pipeline.collect_llm(Some(&RecordingTransport::new(selector, &cassettes.join("selections.jsonl"))?))?;
    println!("fixture written to {}", dir.display());
    Ok(())
}

const CONFIG: &str = r#"# Synthetic two-group corpus. Regenerate with
# cargo run -p factorpref-cli --example make_fixture

[paths]
prompts = "prompts.jsonl"
responses = "responses.jsonl"
votes = "votes.jsonl"
morph = "morph.jsonl"
out_dir = "out"

[filter]
min_user_votes = 30
min_response_votes = 3
min_responses_per_prompt = 5

[cluster]
dims = 20
k = 2
seed = 20251018
k_min = 2
k_max = 6

[btl]
alpha = 0.01

[annotate.transport]
mode = "replay"
model = "gpt-5.1"
cassette_path = "cassettes/labels.jsonl"

[collect]
personas = ["no_persona", "female_20", "male_65"]
trials = 3
seed = 7

[collect.transport]
mode = "replay"
model = "gpt-5.1"
cassette_path = "cassettes/selections.jsonl"
"#;
