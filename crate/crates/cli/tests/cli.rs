use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use factorpref_core::cluster::{adjusted_rand_index, AssignmentRecord};
use factorpref_core::io::read_jsonl;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic/factorpref.toml")
}

fn factorpref(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factorpref"))
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const EXPECTED: [&str; 25] = [
    "manifest.json",
    "dataset/prompts.jsonl",
    "dataset/responses.jsonl",
    "dataset/votes.jsonl",
    "dataset/stats.json",
    "labels/labels.jsonl",
    "labels/label_votes.jsonl",
    "features/factors.jsonl",
    "features/binning.json",
    "features/raw_features.jsonl",
    "cluster/assignments.jsonl",
    "cluster/diagnostics.tsv",
    "cluster/coords.tsv",
    "cluster/model.json",
    "llm/conditions.json",
    "llm/gpt-5.1/no_persona.jsonl",
    "btl/scores.tsv",
    "btl/comparisons/all_users.tsv",
    "report/rankings.tsv",
    "report/score_matrix.tsv",
    "report/heatmap.tsv",
    "report/correlation.tsv",
    "report/correlation_overlap.tsv",
    "report/alignment.json",
    "report/alignment.tsv",
];

#[test]
fn full_pipeline_on_the_fixture() {
    let out = tempfile::tempdir().unwrap();
    let o = factorpref(&fixture(), out.path(), &["run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in EXPECTED {
        assert!(out.path().join(f).is_file(), "missing {f}");
    }

    // the two planted voter groups come back as the two clusters
    let assignments: Vec<AssignmentRecord> = read_jsonl(&out.path().join("cluster/assignments.jsonl")).unwrap();
    let planted: Vec<usize> = assignments
        .iter()
        .map(|a| usize::from(a.user_id[1..].parse::<usize>().unwrap() >= 30))
        .collect();
    let found: Vec<usize> = assignments.iter().map(|a| a.cluster).collect();
    assert_eq!(assignments.len(), 60);
    assert!(adjusted_rand_index(&planted, &found) > 0.9);

    let rankings = std::fs::read_to_string(out.path().join("report/rankings.tsv")).unwrap();
    let preferred: Vec<&str> = rankings.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    let tops: Vec<&str> = preferred[..2].iter().map(|p| p.split(' ').next().unwrap()).collect();
    let mut tops = tops;
    tops.sort();
    assert_eq!(tops, vec!["ending-exclamation", "parentheses"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["cluster"], 20251018);
    for stage in ["ingest", "annotate", "features", "cluster", "collect-llm", "btl", "report"] {
        assert!(manifest["stages"][stage]["outputs"].as_object().is_some_and(|o| !o.is_empty()), "{stage}");
    }
    assert!(manifest["config"]["paths"].get("out_dir").is_none());
}

#[test]
fn btl_before_features_names_the_factor_file() {
    let out = tempfile::tempdir().unwrap();
    assert!(factorpref(&fixture(), out.path(), &["ingest"]).status.success());
    let o = factorpref(&fixture(), out.path(), &["btl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("features/factors.jsonl"), "{}", stderr(&o));
}

#[test]
fn replay_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(factorpref(&fixture(), a.path(), &["run"]).status.success());
    assert!(factorpref(&fixture(), b.path(), &["run"]).status.success());
    let first = files(a.path());
    assert_eq!(first, files(b.path()));

    // stages are idempotent in place
    assert!(factorpref(&fixture(), a.path(), &["cluster"]).status.success());
    assert!(factorpref(&fixture(), a.path(), &["btl"]).status.success());
    assert_eq!(first, files(a.path()));
}

#[test]
fn edited_upstream_artifacts_are_stale() {
    let out = tempfile::tempdir().unwrap();
    for stage in ["ingest", "annotate", "features"] {
        assert!(factorpref(&fixture(), out.path(), &[stage]).status.success());
    }
    let labels = out.path().join("labels/labels.jsonl");
    let mut text = std::fs::read_to_string(&labels).unwrap();
    text.push('\n');
    std::fs::write(&labels, text).unwrap();
    let o = factorpref(&fixture(), out.path(), &["features"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("labels/labels.jsonl"), "{}", stderr(&o));
    let o = factorpref(&fixture(), out.path(), &["--allow-stale", "features"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn validation_errors_exit_with_1() {
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture()).unwrap().replace("seed = 20251018", "");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, text).unwrap();
    let o = factorpref(&config, out.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cluster.seed"), "{}", stderr(&o));

    let o = factorpref(&fixture(), out.path(), &["collect-llm", "--persona", "nobody"]);
    assert_eq!(o.status.code(), Some(1));
    let o = factorpref(&fixture(), out.path(), &["ingest", "--set", "paths.votes=\"missing.jsonl\""]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("paths.votes"), "{}", stderr(&o));
    let o = factorpref(&fixture(), out.path(), &["annotate", "--set", "annotate.trials=4"]);
    assert_eq!(o.status.code(), Some(1));
    let o = factorpref(&fixture(), out.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_cache_miss_is_a_runtime_failure() {
    let out = tempfile::tempdir().unwrap();
    assert!(factorpref(&fixture(), out.path(), &["ingest"]).status.success());
    let o = factorpref(&fixture(), out.path(), &["collect-llm", "--seed", "8"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("cassette"), "{}", stderr(&o));
}

#[test]
fn help_documents_defaults() {
    for (cmd, flag, default) in [
        ("ingest", "--min-user-votes", "paper default: 100"),
        ("ingest", "--min-response-votes", "paper default: 3"),
        ("annotate", "--batch-size", "paper default: 20"),
        ("cluster", "--dims", "paper default: 100"),
        ("collect-llm", "--trials", "paper default: 3"),
        ("btl", "--alpha", "paper default: 0.01"),
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_factorpref"))
            .args([cmd, "--help"])
            .output()
            .unwrap();
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        // clap puts the description on the next line when the flag is wide
        let lines: Vec<&str> = text.lines().collect();
        let i = lines.iter().position(|l| l.contains(flag)).unwrap_or_else(|| panic!("{cmd} {flag}"));
        let entry = lines[i..lines.len().min(i + 2)].join(" ");
        assert!(entry.contains(default), "{entry}");
    }
}
