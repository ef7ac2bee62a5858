//! TOML run configuration, `--set` overrides and field-level validation.

use std::path::{Path, PathBuf};

use factorpref_core::annotator::{TransportConfig, MAX_BATCH, PERSONA_NAMES};
use factorpref_core::btl::DEFAULT_ALPHA;
use factorpref_core::cluster::{DEFAULT_DIMS, DEFAULT_RESTARTS};
use factorpref_core::model::FilterParams;
use serde::{Deserialize, Serialize};

use crate::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub prompts: PathBuf,
    pub responses: PathBuf,
    pub votes: PathBuf,
    /// Tokenizer output, one `MorphAnnotation` per line. Without it the
    /// morphological feature families are left out.
    #[serde(default)]
    pub morph: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Merge strategy labels from the annotate stage into the factor sets.
    pub use_labels: bool,
    pub exaggeration_lexicon: Option<PathBuf>,
    pub negation_lexicon: Option<PathBuf>,
    /// JSON `BinningScheme`; the built-in level names otherwise.
    pub binning_scheme: Option<PathBuf>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            use_labels: true,
            exaggeration_lexicon: None,
            negation_lexicon: None,
            binning_scheme: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub dims: usize,
    pub k: usize,
    pub seed: Option<u64>,
    pub restarts: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            dims: DEFAULT_DIMS,
            k: 7,
            seed: None,
            restarts: DEFAULT_RESTARTS,
            k_min: 2,
            k_max: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BtlConfig {
    pub alpha: f64,
}

impl Default for BtlConfig {
    fn default() -> Self {
        BtlConfig {
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub trials: u32,
    pub batch_size: usize,
    pub transport: TransportConfig,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            trials: 3,
            batch_size: MAX_BATCH,
            transport: TransportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub personas: Vec<String>,
    pub trials: u32,
    pub seed: Option<u64>,
    pub transport: TransportConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            personas: PERSONA_NAMES.iter().map(|p| p.to_string()).collect(),
            trials: 3,
            seed: None,
            transport: TransportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub top_k: usize,
    pub heatmap_k: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            top_k: factorpref_core::analysis::DEFAULT_RANK_K,
            heatmap_k: factorpref_core::analysis::DEFAULT_HEATMAP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub btl: BtlConfig,
    #[serde(default)]
    pub annotate: AnnotateConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

/// A parsed config: `raw` exactly as written plus overrides, `resolved` with
/// relative paths anchored at the config file's directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: RunConfig,
    pub resolved: RunConfig,
    pub base_dir: PathBuf,
}

fn parse_override(s: &str) -> Result<(String, toml::Value), ValidationError> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| ValidationError(format!("override `{s}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ValidationError(format!("override `{s}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ValidationError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for (i, p) in parts.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            ValidationError(format!("override `{key}`: `{}` is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl LoadedConfig {
    /// Reads `path`, applies `KEY=VALUE` overrides in order, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| ValidationError(format!("{}: {e}", path.display())))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut table, &k, v)?;
        }
        let raw: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ValidationError(format!("{}: {}", path.display(), e.message())))?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        let resolved = raw.resolved(&base_dir);
        resolved.validate()?;
        Ok(LoadedConfig {
            raw,
            resolved,
            base_dir,
        })
    }
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    fn resolved(&self, base: &Path) -> RunConfig {
        let mut c = self.clone();
        let paths = &mut c.paths;
        for p in [&mut paths.prompts, &mut paths.responses, &mut paths.votes, &mut paths.out_dir] {
            anchor(base, p);
        }
        let optional = [
            &mut paths.morph,
            &mut c.features.exaggeration_lexicon,
            &mut c.features.negation_lexicon,
            &mut c.features.binning_scheme,
            &mut c.annotate.transport.cassette_path,
            &mut c.collect.transport.cassette_path,
        ];
        for p in optional.into_iter().flatten() {
            anchor(base, p);
        }
        c
    }

    pub fn cluster_seed(&self) -> u64 {
        self.cluster.seed.expect("validated")
    }

    pub fn collect_seed(&self) -> u64 {
        self.collect.seed.expect("validated")
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errors.push(format!("{field}: {msg}"));
            }
        };
        check(self.cluster.seed.is_some(), "cluster.seed", "required, seeds have no default");
        check(self.collect.seed.is_some(), "collect.seed", "required, seeds have no default");
        check(self.cluster.dims >= 1, "cluster.dims", "must be at least 1");
        check(self.cluster.k >= 1, "cluster.k", "must be at least 1");
        check(self.cluster.restarts >= 1, "cluster.restarts", "must be at least 1");
        check(self.cluster.k_min >= 2, "cluster.k_min", "must be at least 2");
        check(
            self.cluster.k_max >= self.cluster.k_min,
            "cluster.k_max",
            "must not be below cluster.k_min",
        );
        check(
            self.btl.alpha.is_finite() && self.btl.alpha >= 0.0,
            "btl.alpha",
            "must be finite and non-negative",
        );
        check(
            self.annotate.trials % 2 == 1,
            "annotate.trials",
            "must be odd for majority voting",
        );
        check(
            (1..=MAX_BATCH).contains(&self.annotate.batch_size),
            "annotate.batch_size",
            &format!("must be between 1 and {MAX_BATCH}"),
        );
        check(self.collect.trials >= 1, "collect.trials", "must be at least 1");
        check(!self.collect.personas.is_empty(), "collect.personas", "must not be empty");
        for p in &self.collect.personas {
            check(
                PERSONA_NAMES.contains(&p.as_str()),
                "collect.personas",
                &format!("unknown persona `{p}` (known: {})", PERSONA_NAMES.join(", ")),
            );
        }
        let mut seen = self.collect.personas.clone();
        seen.sort();
        seen.dedup();
        check(
            seen.len() == self.collect.personas.len(),
            "collect.personas",
            "lists a persona twice",
        );
        check(self.report.top_k >= 1, "report.top_k", "must be at least 1");
        check(self.report.heatmap_k >= 1, "report.heatmap_k", "must be at least 1");
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ValidationError(errors.join("; ")))
        }
    }
}
