//! One method per pipeline stage. Each reads its inputs from the output
//! directory, writes its artifacts and records them in the manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use factorpref_core::analysis::{
    alignment_report, cluster_condition, condition_order, correlation_matrix, ranking_table,
    ScoreMatrix, ALL_USERS,
};
use factorpref_core::annotator::{
    annotate_strategies, build_transport, builtin_label_specs, collect_preferences, condition_id,
    now_epoch, persona, selections_to_votes, AnnotatorError, LabelingParams, PreferenceParams,
    SelectionResult, Transport, TransportConfig, TransportError, TransportMode,
};
use factorpref_core::btl::{fit_condition, scores_from_tsv, scores_to_tsv, BtlScores, FactorComparisons};
use factorpref_core::cluster::{
    cluster_users, coordinates_to_tsv, project_2d, select_k, AssignmentRecord,
};
use factorpref_core::features::{
    build_factor_sets, default_scheme, BinningScheme, FactorId, FactorSet, FeatureExtractor,
    LabelRecord, Lexicon, MorphAnnotation,
};
use factorpref_core::io::{file_digest, read_jsonl, read_jsonl_allow_empty, write_jsonl, write_string};
use factorpref_core::model::{
    dataset_stats, eligible_prompts, filter_dataset, load_dataset, load_dataset_dir, Dataset,
    VoteRecord,
};

use crate::config::{LoadedConfig, RunConfig};
use crate::manifest::{RunManifest, StageRecord};
use crate::ValidationError;

pub const DATASET_DIR: &str = "dataset";
pub const LABELS: &str = "labels/labels.jsonl";
pub const LABEL_VOTES: &str = "labels/label_votes.jsonl";
pub const FACTORS: &str = "features/factors.jsonl";
pub const BINNING: &str = "features/binning.json";
pub const RAW_FEATURES: &str = "features/raw_features.jsonl";
pub const ASSIGNMENTS: &str = "cluster/assignments.jsonl";
pub const DIAGNOSTICS: &str = "cluster/diagnostics.tsv";
pub const COORDS: &str = "cluster/coords.tsv";
pub const CLUSTER_MODEL: &str = "cluster/model.json";
pub const LLM_CONDITIONS: &str = "llm/conditions.json";
pub const SCORES: &str = "btl/scores.tsv";

const DATASET_FILES: [&str; 3] = ["prompts.jsonl", "responses.jsonl", "votes.jsonl"];

/// One LLM condition collected by `collect-llm`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCondition {
    pub condition_id: String,
    pub model: String,
    pub persona: String,
    /// Relative to the output directory.
    pub selections: String,
}

/// File-name-safe form of a condition or model id.
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn transport_error(e: AnnotatorError) -> anyhow::Error {
    match e {
        AnnotatorError::Config(_)
        | AnnotatorError::Transport(TransportError::MissingCassette(_))
        | AnnotatorError::Transport(TransportError::MissingCredentials(_)) => {
            ValidationError(e.to_string()).into()
        }
        other => other.into(),
    }
}

pub struct Pipeline {
    pub config: LoadedConfig,
    pub out: PathBuf,
    pub allow_stale: bool,
    manifest: RunManifest,
}

impl Pipeline {
    pub fn open(config: LoadedConfig, allow_stale: bool) -> Result<Self> {
        let out = config.resolved.paths.out_dir.clone();
        let mut manifest = RunManifest::load_or_default(&out)?;
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        let mut snapshot = serde_json::to_value(&config.raw)?;
        if let Some(paths) = snapshot.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("out_dir");
        }
        manifest.config = snapshot;
        let cfg = &config.resolved;
        manifest.seeds = [
            ("cluster".to_string(), cfg.cluster_seed()),
            ("collect".to_string(), cfg.collect_seed()),
        ]
        .into();
        Ok(Pipeline {
            config,
            out,
            allow_stale,
            manifest,
        })
    }

    pub fn cfg(&self) -> &RunConfig {
        &self.config.resolved
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn artifact(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Manifest key for a path: relative to the output directory or the
    /// config directory when under one of them.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .or_else(|_| path.strip_prefix(&self.config.base_dir))
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// An upstream artifact: must exist and match the digest its producer
    /// recorded.
    fn upstream(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let path = self.artifact(rel);
        if !path.exists() {
            return Err(ValidationError(format!(
                "missing input `{}`: run `factorpref {producer}` first",
                path.display()
            ))
            .into());
        }
        if let Some(stale) = self.manifest.check(rel, &path)? {
            let msg = format!(
                "`{}` changed since `{}` recorded it; rerun that stage or pass --allow-stale",
                stale.artifact, stale.producer
            );
            if self.allow_stale {
                warn!("{msg}");
            } else {
                return Err(ValidationError(msg).into());
            }
        }
        Ok(path)
    }

    fn external(&self, path: &Path, field: &str) -> Result<PathBuf> {
        if !path.exists() {
            return Err(ValidationError(format!("missing input `{}` ({field})", path.display())).into());
        }
        Ok(path.to_path_buf())
    }

    fn finish(&mut self, stage: &str, config: serde_json::Value, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let digests = |files: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            files
                .iter()
                .map(|p| Ok((self.key(p), file_digest(p)?)))
                .collect()
        };
        let record = StageRecord {
            config,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            timestamp: now_epoch(),
        };
        self.manifest.stages.insert(stage.to_string(), record);
        self.manifest.save(&self.out)?;
        info!("{stage}: wrote {} artifact(s)", outputs.len());
        Ok(())
    }

    fn dataset(&self) -> Result<(Dataset, Vec<PathBuf>)> {
        let files = DATASET_FILES
            .iter()
            .map(|f| self.upstream(&format!("{DATASET_DIR}/{f}"), "ingest"))
            .collect::<Result<Vec<_>>>()?;
        let d = load_dataset_dir(&self.artifact(DATASET_DIR))?;
        Ok((d, files))
    }

    fn transport<'t>(
        &self,
        cfg: &TransportConfig,
        given: Option<&'t dyn Transport>,
    ) -> Result<(TransportHandle<'t>, Vec<PathBuf>)> {
        let cassette: Vec<PathBuf> = match (cfg.mode, &cfg.cassette_path) {
            (TransportMode::Replay, Some(p)) if p.exists() => vec![p.clone()],
            _ => vec![],
        };
        let handle = match given {
            Some(t) => TransportHandle::Borrowed(t),
            None => TransportHandle::Owned(build_transport(cfg).map_err(transport_error)?),
        };
        Ok((handle, cassette))
    }

    pub fn ingest(&mut self) -> Result<()> {
        let p = self.cfg().paths.clone();
        let inputs = vec![
            self.external(&p.prompts, "paths.prompts")?,
            self.external(&p.responses, "paths.responses")?,
            self.external(&p.votes, "paths.votes")?,
        ];
        let raw = load_dataset(&p.prompts, &p.responses, &p.votes)?;
        let filter = self.cfg().filter;
        let filtered = filter_dataset(&raw, &filter);
        let dir = self.artifact(DATASET_DIR);
        filtered.save(&dir)?;
        let stats = serde_json::json!({
            "raw": dataset_stats(&raw),
            "filtered": dataset_stats(&filtered),
            "eligible_prompts": eligible_prompts(&filtered, filter.min_responses_per_prompt).len(),
        });
        let stats_path = dir.join("stats.json");
        write_string(&stats_path, &json_pretty(&stats))?;
        info!(
            "ingest: kept {} of {} responses and {} of {} votes",
            filtered.responses().len(),
            raw.responses().len(),
            filtered.total_votes(),
            raw.total_votes()
        );
        let mut outputs: Vec<PathBuf> = DATASET_FILES.iter().map(|f| dir.join(f)).collect();
        outputs.push(stats_path);
        self.finish("ingest", serde_json::to_value(filter)?, &inputs, &outputs)
    }

    pub fn annotate(&mut self, transport: Option<&dyn Transport>) -> Result<()> {
        let (d, mut inputs) = self.dataset()?;
        let cfg = self.cfg().annotate.clone();
        let (t, cassette) = self.transport(&cfg.transport, transport)?;
        inputs.extend(cassette);
        let params = LabelingParams {
            trials: cfg.trials,
            batch_size: cfg.batch_size,
        };
        let outcome = annotate_strategies(&d, &cfg.transport, t.get(), &builtin_label_specs(), &params)
            .map_err(transport_error)?;
        if !outcome.failed_trials.is_empty() {
            warn!(
                "annotate: {} batch trial(s) had no parseable reply and count as empty",
                outcome.failed_trials.len()
            );
        }
        let labels = self.artifact(LABELS);
        let votes = self.artifact(LABEL_VOTES);
        write_jsonl(&labels, &outcome.records())?;
        write_jsonl(&votes, &outcome.votes)?;
        self.finish("annotate", serde_json::to_value(&cfg)?, &inputs, &[labels, votes])
    }

    pub fn features(&mut self) -> Result<()> {
        let (d, mut inputs) = self.dataset()?;
        let cfg = self.cfg().clone();
        let mut labels: HashMap<String, BTreeSet<FactorId>> = HashMap::new();
        if cfg.features.use_labels {
            let path = self.upstream(LABELS, "annotate")?;
            labels = read_jsonl_allow_empty::<LabelRecord>(&path)?
                .into_iter()
                .map(|r| (r.response_id, r.labels))
                .collect();
            inputs.push(path);
        }
        let mut morph = HashMap::new();
        if let Some(p) = &cfg.paths.morph {
            let path = self.external(p, "paths.morph")?;
            morph = read_jsonl::<MorphAnnotation>(&path)?
                .into_iter()
                .map(|m| (m.response_id.clone(), m))
                .collect();
            inputs.push(path);
        }
        let mut extractor = FeatureExtractor::default();
        if let Some(p) = &cfg.features.exaggeration_lexicon {
            extractor.exaggeration = Lexicon::load(&self.external(p, "features.exaggeration_lexicon")?)?;
            inputs.push(p.clone());
        }
        if let Some(p) = &cfg.features.negation_lexicon {
            extractor.negation = Lexicon::load(&self.external(p, "features.negation_lexicon")?)?;
            inputs.push(p.clone());
        }
        let scheme: BinningScheme = match &cfg.features.binning_scheme {
            Some(p) => {
                let text = std::fs::read_to_string(self.external(p, "features.binning_scheme")?)?;
                inputs.push(p.clone());
                serde_json::from_str(&text)
                    .map_err(|e| ValidationError(format!("features.binning_scheme: {e}")))?
            }
            None => default_scheme(),
        };
        let table = build_factor_sets(&d, &extractor, &morph, &labels, &scheme)?;

        let factors = self.artifact(FACTORS);
        let binning = self.artifact(BINNING);
        let raw = self.artifact(RAW_FEATURES);
        write_jsonl(&factors, &table.factor_sets)?;
        write_string(&binning, &json_pretty(&table.binning))?;
        let raw_rows: Vec<serde_json::Value> = table
            .raw
            .iter()
            .map(|(id, v)| serde_json::json!({ "response_id": id, "continuous": v.continuous, "boolean": v.boolean }))
            .collect();
        write_jsonl(&raw, &raw_rows)?;
        self.finish(
            "features",
            serde_json::to_value(&cfg.features)?,
            &inputs,
            &[factors, binning, raw],
        )
    }

    pub fn cluster(&mut self) -> Result<()> {
        let (d, inputs) = self.dataset()?;
        let c = self.cfg().cluster.clone();
        let seed = self.cfg().cluster_seed();
        let run = cluster_users(&d, c.dims, c.k, seed, c.restarts)?;
        if !run.embedding.flagged.is_empty() {
            warn!(
                "cluster: {} user(s) have a zero embedding and are left unassigned",
                run.embedding.flagged.len()
            );
        }
        let points = run.embedding.points();
        let mut outputs = Vec::new();

        let hi = c.k_max.min(points.len().saturating_sub(1));
        if hi >= c.k_min {
            let report = select_k(&points, c.k_min..=hi, seed, c.restarts)?;
            info!("cluster: highest silhouette at k = {} (suggestion only)", report.suggested_k);
            let path = self.artifact(DIAGNOSTICS);
            write_string(&path, &report.to_tsv())?;
            outputs.push(path);
        } else {
            warn!("cluster: too few users for k diagnostics in {}..={}", c.k_min, c.k_max);
        }

        let coords = project_2d(&points)?;
        let coords_path = self.artifact(COORDS);
        write_string(&coords_path, &coordinates_to_tsv(&coords, &run.model.assignments))?;
        let assignments = self.artifact(ASSIGNMENTS);
        write_jsonl(&assignments, &run.model.records())?;
        let model = serde_json::json!({
            "k": run.model.k,
            "seed": seed,
            "dims": run.embedding_model.rank(),
            "inertia": run.model.inertia,
            "silhouette": run.model.silhouette,
            "sizes": run.model.sizes(),
            "centroids": run.model.centroids,
            "singular_values": run.embedding_model.svd.singular_values,
            "unassigned": run.embedding.flagged,
        });
        let model_path = self.artifact(CLUSTER_MODEL);
        write_string(&model_path, &json_pretty(&model))?;
        outputs.extend([coords_path, assignments, model_path]);
        self.finish("cluster", serde_json::to_value(&c)?, &inputs, &outputs)
    }

    pub fn collect_llm(&mut self, transport: Option<&dyn Transport>) -> Result<()> {
        let (d, mut inputs) = self.dataset()?;
        let cfg = self.cfg().collect.clone();
        let (t, cassette) = self.transport(&cfg.transport, transport)?;
        inputs.extend(cassette);
        let params = PreferenceParams {
            trials: cfg.trials,
            min_candidates: self.cfg().filter.min_responses_per_prompt as usize,
            seed: self.cfg().collect_seed(),
        };
        let model = cfg.transport.model.clone();
        let mut conditions = self.llm_conditions()?;
        let mut outputs = Vec::new();
        for name in &cfg.personas {
            let persona = persona(name).expect("validated persona");
            let results = collect_preferences(&d, &persona, &cfg.transport, t.get(), &params)
                .map_err(transport_error)?;
            let abstained = results.iter().filter(|r| r.selected_response_id.is_none()).count();
            if abstained > 0 {
                warn!("collect-llm: {name}: {abstained} trial(s) without a selection");
            }
            let rel = format!("llm/{}/{}.jsonl", safe_name(&model), safe_name(name));
            let path = self.artifact(&rel);
            write_jsonl(&path, &results)?;
            outputs.push(path);
            let id = condition_id(&model, name);
            conditions.retain(|c| c.condition_id != id);
            conditions.push(LlmCondition {
                condition_id: id,
                model: model.clone(),
                persona: name.clone(),
                selections: rel,
            });
        }
        conditions.sort_by(|a, b| a.condition_id.cmp(&b.condition_id));
        let index = self.artifact(LLM_CONDITIONS);
        write_string(&index, &json_pretty(&conditions))?;
        outputs.push(index);
        let mut snapshot = serde_json::to_value(&cfg)?;
        snapshot["min_candidates"] = params.min_candidates.into();
        self.finish("collect-llm", snapshot, &inputs, &outputs)
    }

    fn llm_conditions(&self) -> Result<Vec<LlmCondition>> {
        let path = self.artifact(LLM_CONDITIONS);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn btl(&mut self) -> Result<()> {
        let (d, mut inputs) = self.dataset()?;
        let factors_path = self.upstream(FACTORS, "features")?;
        let factor_sets: HashMap<String, FactorSet> = read_jsonl::<FactorSet>(&factors_path)?
            .into_iter()
            .map(|f| (f.response_id.clone(), f))
            .collect();
        inputs.push(factors_path);
        let assignments_path = self.upstream(ASSIGNMENTS, "cluster")?;
        let assignments: BTreeMap<String, usize> = read_jsonl::<AssignmentRecord>(&assignments_path)?
            .into_iter()
            .map(|a| (a.user_id, a.cluster))
            .collect();
        inputs.push(assignments_path);

        let mut conditions: Vec<(String, Vec<VoteRecord>)> = vec![(ALL_USERS.to_string(), d.votes().to_vec())];
        let k = assignments.values().max().map_or(0, |m| m + 1);
        for i in 0..k {
            let votes = d
                .votes()
                .iter()
                .filter(|v| assignments.get(&v.user_id) == Some(&i))
                .cloned()
                .collect();
            conditions.push((cluster_condition(i), votes));
        }
        let llm = self.llm_conditions()?;
        if llm.is_empty() {
            info!("btl: no LLM conditions collected");
        } else {
            inputs.push(self.upstream(LLM_CONDITIONS, "collect-llm")?);
        }
        for c in &llm {
            let path = self.upstream(&c.selections, "collect-llm")?;
            let results: Vec<SelectionResult> = read_jsonl_allow_empty(&path)?;
            inputs.push(path);
            conditions.push((c.condition_id.clone(), selections_to_votes(&results, &c.model, &c.persona)));
        }

        let alpha = self.cfg().btl.alpha;
        let fits: Vec<(FactorComparisons, BtlScores)> = conditions
            .par_iter()
            .filter_map(|(id, votes)| match fit_condition(id, &d, votes, &factor_sets, alpha) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    warn!("btl: condition `{id}` skipped: {e}");
                    None
                }
            })
            .collect();
        let mut fits = fits;
        fits.sort_by(|a, b| condition_order(&a.1.condition_id, &b.1.condition_id));

        let mut outputs = Vec::new();
        let scores = self.artifact(SCORES);
        write_string(&scores, &scores_to_tsv(fits.iter().map(|f| &f.1)))?;
        outputs.push(scores);
        for (cmp, s) in &fits {
            let path = self.artifact(&format!("btl/comparisons/{}.tsv", safe_name(&s.condition_id)));
            write_string(&path, &cmp.to_tsv())?;
            outputs.push(path);
        }
        self.finish("btl", serde_json::to_value(&self.cfg().btl)?, &inputs, &outputs)
    }

    pub fn report(&mut self) -> Result<()> {
        let path = self.upstream(SCORES, "btl")?;
        let scores = scores_from_tsv(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let inputs = vec![path];
        let cfg = self.cfg().report.clone();
        let all = ScoreMatrix::from_scores(&scores);
        let mut outputs = Vec::new();
        let mut emit = |rel: &str, text: String| -> Result<()> {
            let p = self.out.join(rel);
            write_string(&p, &text)?;
            outputs.push(p);
            Ok(())
        };

        let mut ordered: Vec<&BtlScores> = scores.iter().collect();
        ordered.sort_by(|a, b| condition_order(&a.condition_id, &b.condition_id));
        emit("report/rankings.tsv", ranking_table(ordered, cfg.top_k))?;
        emit("report/score_matrix.tsv", all.to_tsv())?;

        if all.row(ALL_USERS).is_some() {
            let keep = all.heatmap_factors(ALL_USERS, cfg.heatmap_k)?;
            emit("report/heatmap.tsv", factor_subset(&all, &keep).to_tsv())?;
        } else {
            warn!("report: no {ALL_USERS} scores, heatmap skipped");
        }

        if all.conditions.len() >= 2 {
            let corr = correlation_matrix(&all)?;
            emit("report/correlation.tsv", corr.to_tsv())?;
            emit("report/correlation_overlap.tsv", corr.overlap_tsv())?;
        } else {
            warn!("report: fewer than 2 conditions, correlation skipped");
        }

        let human = all.select(|c| !c.contains(':'));
        let llm = all.select(|c| c.contains(':'));
        if !llm.conditions.is_empty() {
            let report = alignment_report(&human, &llm)?;
            emit("report/alignment.json", report.to_json())?;
            emit("report/alignment.tsv", report.to_tsv())?;
        }
        self.finish("report", serde_json::to_value(&cfg)?, &inputs, &outputs)
    }

    /// Every stage in order.
    pub fn run_all(&mut self) -> Result<()> {
        self.ingest()?;
        if self.cfg().features.use_labels {
            self.annotate(None)?;
        }
        self.features()?;
        self.cluster()?;
        self.collect_llm(None)?;
        self.btl()?;
        self.report()
    }
}

/// Rows of `m` restricted to `factors`, in that order.
fn factor_subset(m: &ScoreMatrix, factors: &[String]) -> ScoreMatrix {
    let idx: Vec<usize> = factors
        .iter()
        .filter_map(|f| m.factors.iter().position(|x| x == f))
        .collect();
    ScoreMatrix {
        conditions: m.conditions.clone(),
        factors: idx.iter().map(|&i| m.factors[i].clone()).collect(),
        values: m.values.iter().map(|row| idx.iter().map(|&i| row[i]).collect()).collect(),
    }
}

enum TransportHandle<'t> {
    Borrowed(&'t dyn Transport),
    Owned(Box<dyn Transport>),
}

impl TransportHandle<'_> {
    fn get(&self) -> &dyn Transport {
        match self {
            TransportHandle::Borrowed(t) => *t,
            TransportHandle::Owned(b) => b.as_ref(),
        }
    }
}
