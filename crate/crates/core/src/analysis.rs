//! Score tables, factor rankings, correlation matrices and the LLM-to-cluster
//! alignment report.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::btl::BtlScores;
use crate::io::tsv;
use crate::stats::pearson;

pub const ALL_USERS: &str = "all_users";
pub const NO_PERSONA: &str = "no_persona";
pub const DEFAULT_RANK_K: usize = 3;
pub const DEFAULT_HEATMAP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("factor vocabularies differ: {0}")]
    VocabularyMismatch(String),
    #[error("need at least {needed} conditions, got {got}")]
    TooFewConditions { needed: usize, got: usize },
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
}

/// Cluster id for cluster index `i`.
pub fn cluster_condition(i: usize) -> String {
    format!("C{i}")
}

fn cluster_index(id: &str) -> Option<usize> {
    id.strip_prefix('C')?.parse().ok()
}

/// Clusters by index, then all_users, then everything else by name.
pub fn condition_order(a: &str, b: &str) -> Ordering {
    let rank = |s: &str| match (cluster_index(s), s == ALL_USERS) {
        (Some(i), _) => (0, i),
        (None, true) => (1, 0),
        _ => (2, 0),
    };
    rank(a).cmp(&rank(b)).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub conditions: Vec<String>,
    pub factors: Vec<String>,
    /// `values[c][f]`, `None` where the factor was not observed.
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreMatrix {
    /// Rows in canonical condition order over the union of factors (observed
    /// or listed missing) across all inputs.
    pub fn from_scores<'a>(scores: impl IntoIterator<Item = &'a BtlScores>) -> Self {
        let mut rows: Vec<&BtlScores> = scores.into_iter().collect();
        rows.sort_by(|a, b| condition_order(&a.condition_id, &b.condition_id));
        let factors: BTreeSet<&str> = rows
            .iter()
            .flat_map(|s| s.theta.keys().chain(s.missing.iter()).map(String::as_str))
            .collect();
        let factors: Vec<String> = factors.into_iter().map(str::to_string).collect();
        let values = rows
            .iter()
            .map(|s| factors.iter().map(|f| s.theta.get(f).copied()).collect())
            .collect();
        ScoreMatrix {
            conditions: rows.iter().map(|s| s.condition_id.clone()).collect(),
            factors,
            values,
        }
    }

    pub fn row(&self, condition: &str) -> Option<&[Option<f64>]> {
        let i = self.conditions.iter().position(|c| c == condition)?;
        Some(&self.values[i])
    }

    /// Keeps only the named conditions, in canonical order.
    pub fn select(&self, keep: impl Fn(&str) -> bool) -> ScoreMatrix {
        let idx: Vec<usize> = (0..self.conditions.len())
            .filter(|&i| keep(&self.conditions[i]))
            .collect();
        ScoreMatrix {
            conditions: idx.iter().map(|&i| self.conditions[i].clone()).collect(),
            factors: self.factors.clone(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }

    /// Factors as rows, conditions as columns, `NA` for missing.
    pub fn to_tsv(&self) -> String {
        let mut header = vec!["factor"];
        header.extend(self.conditions.iter().map(String::as_str));
        tsv(
            &header,
            self.factors.iter().enumerate().map(|(f, name)| {
                let mut row = vec![name.clone()];
                row.extend(self.values.iter().map(|r| fmt_opt(r[f])));
                row
            }),
        )
    }

    /// Factors to show in a heatmap: the top-k and bottom-k of `reference`,
    /// top ones first.
    pub fn heatmap_factors(&self, reference: &str, k: usize) -> Result<Vec<String>, AnalysisError> {
        let row = self
            .row(reference)
            .ok_or_else(|| AnalysisError::UnknownCondition(reference.to_string()))?;
        let theta: BTreeMap<String, f64> = self
            .factors
            .iter()
            .zip(row)
            .filter_map(|(f, v)| v.map(|v| (f.clone(), v)))
            .collect();
        let (top, bottom) = rank_theta(&theta, k);
        let mut out: Vec<String> = top.into_iter().map(|(f, _)| f).collect();
        for (f, _) in bottom.into_iter().rev() {
            if !out.contains(&f) {
                out.push(f);
            }
        }
        Ok(out)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

type Ranked = Vec<(String, f64)>;

fn rank_theta(theta: &BTreeMap<String, f64>, k: usize) -> (Ranked, Ranked) {
    let mut entries: Vec<(String, f64)> = theta.iter().map(|(f, &t)| (f.clone(), t)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top = entries.iter().take(k).cloned().collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let bottom = entries.into_iter().take(k).collect();
    (top, bottom)
}

/// Top-k by descending θ and bottom-k by ascending θ, ties by factor name.
/// Lists are shorter than k when fewer factors were observed.
pub fn rank_factors(s: &BtlScores, k: usize) -> (Ranked, Ranked) {
    rank_theta(&s.theta, k.max(1))
}

/// `name (+0.60); other (-0.12)`.
pub fn format_ranked(list: &[(String, f64)]) -> String {
    list.iter()
        .map(|(f, t)| format!("{f} ({t:+.2})"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One line per condition: condition, preferred, dispreferred.
pub fn ranking_table<'a>(scores: impl IntoIterator<Item = &'a BtlScores>, k: usize) -> String {
    let mut rows: Vec<&BtlScores> = scores.into_iter().collect();
    rows.sort_by(|a, b| condition_order(&a.condition_id, &b.condition_id));
    tsv(
        &["condition_id", "preferred", "dispreferred"],
        rows.iter().map(|s| {
            let (top, bottom) = rank_factors(s, k);
            vec![s.condition_id.clone(), format_ranked(&top), format_ranked(&bottom)]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub ids: Vec<String>,
    /// `None` where fewer than 3 jointly observed factors exist or a side is
    /// constant on them.
    pub r: Vec<Vec<Option<f64>>>,
    pub n_overlap: Vec<Vec<usize>>,
}

fn paired(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip()
}

/// Pearson over jointly observed factors (pairwise deletion).
pub fn pair_correlation(a: &[Option<f64>], b: &[Option<f64>]) -> (Option<f64>, usize) {
    let (x, y) = paired(a, b);
    (pearson(&x, &y), x.len())
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.ids.iter().position(|c| c == a)?;
        let j = self.ids.iter().position(|c| c == b)?;
        self.r[i][j]
    }

    fn matrix_tsv<T>(&self, cells: &[Vec<T>], show: impl Fn(&T) -> String) -> String {
        let mut header = vec!["condition_id"];
        header.extend(self.ids.iter().map(String::as_str));
        tsv(
            &header,
            self.ids.iter().zip(cells).map(|(id, row)| {
                let mut out = vec![id.clone()];
                out.extend(row.iter().map(&show));
                out
            }),
        )
    }

    pub fn to_tsv(&self) -> String {
        self.matrix_tsv(&self.r, |v| fmt_opt(*v))
    }

    pub fn overlap_tsv(&self) -> String {
        self.matrix_tsv(&self.n_overlap, |n| n.to_string())
    }
}

pub fn correlation_matrix(m: &ScoreMatrix) -> Result<CorrelationMatrix, AnalysisError> {
    let n = m.conditions.len();
    if n < 2 {
        return Err(AnalysisError::TooFewConditions { needed: 2, got: n });
    }
    let mut r = vec![vec![None; n]; n];
    let mut n_overlap = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i..n {
            let (c, k) = pair_correlation(&m.values[i], &m.values[j]);
            let c = if i == j { c.map(|_| 1.0) } else { c };
            r[i][j] = c;
            r[j][i] = c;
            n_overlap[i][j] = k;
            n_overlap[j][i] = k;
        }
    }
    Ok(CorrelationMatrix {
        ids: m.conditions.clone(),
        r,
        n_overlap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCorrelation {
    pub cluster: String,
    pub r: Option<f64>,
    pub n_overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAlignment {
    pub condition_id: String,
    pub model: String,
    pub persona: String,
    pub best_cluster: Option<String>,
    pub best_r: Option<f64>,
    pub r_all_users: Option<f64>,
    pub clusters: Vec<ClusterCorrelation>,
    /// Per cluster, r(this persona) − r(same model without persona).
    pub delta_vs_no_persona: Option<Vec<(String, Option<f64>)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// How factors unobserved in a condition enter correlations.
    pub missing_factors: String,
    pub conditions: Vec<ConditionAlignment>,
}

fn split_condition(id: &str) -> (String, String) {
    match id.rsplit_once(':') {
        Some((m, p)) => (m.to_string(), p.to_string()),
        None => (id.to_string(), NO_PERSONA.to_string()),
    }
}

/// For each LLM condition: the best-aligned cluster, the correlation with
/// all_users, and correlation deltas against the same model's no_persona
/// condition.
pub fn alignment_report(human: &ScoreMatrix, llm: &ScoreMatrix) -> Result<AlignmentReport, AnalysisError> {
    if human.factors != llm.factors {
        let h: BTreeSet<&String> = human.factors.iter().collect();
        let l: BTreeSet<&String> = llm.factors.iter().collect();
        let only_h: Vec<&&String> = h.difference(&l).take(5).collect();
        let only_l: Vec<&&String> = l.difference(&h).take(5).collect();
        return Err(AnalysisError::VocabularyMismatch(format!(
            "only in human scores: {only_h:?}; only in LLM scores: {only_l:?}"
        )));
    }
    let clusters: Vec<usize> = (0..human.conditions.len())
        .filter(|&i| cluster_index(&human.conditions[i]).is_some())
        .collect();
    let all_users = human.row(ALL_USERS);

    let per_cluster = |row: &[Option<f64>]| -> Vec<ClusterCorrelation> {
        clusters
            .iter()
            .map(|&c| {
                let (r, n) = pair_correlation(row, &human.values[c]);
                ClusterCorrelation {
                    cluster: human.conditions[c].clone(),
                    r,
                    n_overlap: n,
                }
            })
            .collect()
    };

    let mut conditions = Vec::new();
    for (i, id) in llm.conditions.iter().enumerate() {
        let row = &llm.values[i];
        let (model, persona) = split_condition(id);
        let cl = per_cluster(row);
        let best = cl
            .iter()
            .filter_map(|c| c.r.map(|r| (c, r)))
            .fold(None::<(&ClusterCorrelation, f64)>, |acc, (c, r)| match acc {
                Some((_, b)) if b >= r => acc,
                _ => Some((c, r)),
            });
        let baseline = llm.row(&format!("{model}:{NO_PERSONA}"));
        let delta = baseline.map(|base| {
            cl.iter()
                .zip(per_cluster(base))
                .map(|(c, b)| (c.cluster.clone(), c.r.zip(b.r).map(|(x, y)| x - y)))
                .collect()
        });
        conditions.push(ConditionAlignment {
            condition_id: id.clone(),
            model,
            persona,
            best_cluster: best.map(|(c, _)| c.cluster.clone()),
            best_r: best.map(|(_, r)| r),
            r_all_users: all_users.and_then(|a| pair_correlation(row, a).0),
            clusters: cl,
            delta_vs_no_persona: delta,
        });
    }
    Ok(AlignmentReport {
        missing_factors: "pairwise deletion: factors unobserved in either condition are dropped from that pair".into(),
        conditions,
    })
}

impl AlignmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long-format table: one row per (LLM condition, cluster).
    pub fn to_tsv(&self) -> String {
        let mut rows = Vec::new();
        for c in &self.conditions {
            for (k, cc) in c.clusters.iter().enumerate() {
                let delta = c
                    .delta_vs_no_persona
                    .as_ref()
                    .and_then(|d| d.get(k))
                    .and_then(|(_, v)| *v);
                rows.push(vec![
                    c.condition_id.clone(),
                    c.model.clone(),
                    c.persona.clone(),
                    cc.cluster.clone(),
                    fmt_opt(cc.r),
                    cc.n_overlap.to_string(),
                    fmt_opt(delta),
                    (c.best_cluster.as_deref() == Some(cc.cluster.as_str())).to_string(),
                ]);
            }
        }
        tsv(
            &["condition_id", "model", "persona", "cluster", "r", "n_overlap", "delta_vs_no_persona", "best"],
            rows,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(id: &str, theta: &[(&str, f64)]) -> BtlScores {
        let mut s = BtlScores {
            condition_id: id.into(),
            theta: theta.iter().map(|(f, t)| (f.to_string(), *t)).collect(),
            coverage: BTreeMap::new(),
            alpha: 0.01,
            missing: vec![],
        };
        let mean = s.theta.values().sum::<f64>() / s.theta.len().max(1) as f64;
        s.theta.values_mut().for_each(|t| *t -= mean);
        s
    }

    #[test]
    fn ordering_of_conditions() {
        let mut ids = vec!["gpt:male_20", "C10", "all_users", "C2", "claude:no_persona", "C0"];
        ids.sort_by(|a, b| condition_order(a, b));
        assert_eq!(ids, vec!["C0", "C2", "C10", "all_users", "claude:no_persona", "gpt:male_20"]);
    }

    #[test]
    fn ranking_rules() {
        let s = scores("C0", &[("a", 1.0), ("b", -1.0)]);
        let (top, bottom) = rank_factors(&s, 1);
        assert_eq!(top[0].0, "a");
        assert_eq!(bottom[0].0, "b");

        let flat = scores("C0", &[("c", 0.0), ("a", 0.0), ("b", 0.0)]);
        let (top, bottom) = rank_factors(&flat, 3);
        let names = |l: &Ranked| l.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>();
        assert_eq!(names(&top), vec!["a", "b", "c"]);
        assert_eq!(names(&bottom), vec!["a", "b", "c"]);
        assert_eq!(rank_factors(&flat, 10).0.len(), 3);
    }

    #[test]
    fn table_two_format() {
        let s = scores("C0", &[("parentheses", 0.6), ("dialogue", 0.49), ("meta", -1.09)]);
        let (top, _) = rank_factors(&s, 2);
        let line = format_ranked(&top);
        assert!(line.starts_with("parentheses (+"));
        assert!(line.contains("; dialogue ("));
        assert_eq!(format_ranked(&[("x".into(), -0.125)]), "x (-0.12)");
    }

    #[test]
    fn correlation_matrix_basics() {
        let a = scores("C0", &[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let b = scores("C1", &[("a", 2.0), ("b", 1.0), ("c", 4.0), ("d", 3.0)]);
        let same = scores("all_users", &[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let neg = scores("m:p", &[("a", -1.0), ("b", -2.0), ("c", -3.0), ("d", -4.0)]);
        let m = ScoreMatrix::from_scores([&neg, &b, &same, &a]);
        assert_eq!(m.conditions, vec!["C0", "C1", "all_users", "m:p"]);
        let c = correlation_matrix(&m).unwrap();
        assert!((c.get("C0", "C1").unwrap() - 0.6).abs() < 1e-12);
        assert!((c.get("C0", "all_users").unwrap() - 1.0).abs() < 1e-12);
        assert!((c.get("C0", "m:p").unwrap() + 1.0).abs() < 1e-12);
        for i in 0..4 {
            assert_eq!(c.r[i][i], Some(1.0));
            for j in 0..4 {
                assert_eq!(c.r[i][j], c.r[j][i]);
                assert_eq!(c.n_overlap[i][j], 4);
            }
        }
        assert!(correlation_matrix(&m.select(|c| c == "C0")).is_err());
    }

    #[test]
    fn pairwise_deletion_and_undefined_cells() {
        let a = scores("C0", &[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        let mut b = scores("C1", &[("a", 1.0), ("b", 3.0)]);
        b.missing = vec!["c".into(), "d".into()];
        let m = ScoreMatrix::from_scores([&a, &b]);
        assert_eq!(m.values[1][2], None);
        let c = correlation_matrix(&m).unwrap();
        assert_eq!(c.n_overlap[0][1], 2);
        assert_eq!(c.r[0][1], None);
        assert!(c.to_tsv().contains("C0\t1\tNA"));
    }

    #[test]
    fn alignment_examples() {
        let c0 = scores("C0", &[("a", 1.0), ("b", -1.0), ("c", 0.5), ("d", -0.5)]);
        let c1 = scores("C1", &[("a", -1.0), ("b", 1.0), ("c", 0.2), ("d", -0.2)]);
        let c2 = scores("C2", &[("a", 0.3), ("b", 0.1), ("c", -1.0), ("d", 0.6)]);
        let all = scores("all_users", &[("a", 0.1), ("b", 0.2), ("c", -0.1), ("d", -0.2)]);
        let human = ScoreMatrix::from_scores([&c0, &c1, &c2, &all]);

        let mut base = c2.clone();
        base.condition_id = "gpt:no_persona".into();
        let mut p = c1.clone();
        p.condition_id = "gpt:female_45".into();
        let mut same = base.clone();
        same.condition_id = "gpt:male_65".into();
        let llm = ScoreMatrix::from_scores([&base, &p, &same]);

        let report = alignment_report(&human, &llm).unwrap();
        let get = |id: &str| report.conditions.iter().find(|c| c.condition_id == id).unwrap();
        let b = get("gpt:no_persona");
        assert_eq!(b.best_cluster.as_deref(), Some("C2"));
        assert!((b.best_r.unwrap() - 1.0).abs() < 1e-12);
        assert!(b.delta_vs_no_persona.as_ref().unwrap().iter().all(|(_, d)| *d == Some(0.0)));
        assert_eq!(get("gpt:female_45").best_cluster.as_deref(), Some("C1"));
        assert_eq!(get("gpt:female_45").persona, "female_45");
        assert!(get("gpt:male_65")
            .delta_vs_no_persona
            .as_ref()
            .unwrap()
            .iter()
            .all(|(_, d)| d.unwrap().abs() < 1e-12));
        assert!(report.to_tsv().lines().count() == 1 + 3 * 3);
        assert_eq!(report.to_json(), alignment_report(&human, &llm).unwrap().to_json());

        let other = ScoreMatrix::from_scores([&scores("m:no_persona", &[("a", 1.0), ("z", 0.0)])]);
        assert!(matches!(
            alignment_report(&human, &other),
            Err(AnalysisError::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn heatmap_rows() {
        let s = scores("all_users", &[("a", 3.0), ("b", 2.0), ("c", 1.0), ("d", 0.0), ("e", -1.0)]);
        let m = ScoreMatrix::from_scores([&s]);
        assert_eq!(m.heatmap_factors("all_users", 2).unwrap(), vec!["a", "b", "d", "e"]);
        assert_eq!(m.heatmap_factors("all_users", 10).unwrap().len(), 5);
        assert!(m.heatmap_factors("C0", 2).is_err());
    }

    fn arb_rows() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (4usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn correlation_is_affine_invariant((x, y) in arb_rows(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let names: Vec<String> = (0..x.len()).map(|i| format!("f{i}")).collect();
            let mk = |id: &str, v: &[f64]| {
                scores(id, &names.iter().map(String::as_str).zip(v.iter().copied()).collect::<Vec<_>>())
            };
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let m1 = ScoreMatrix::from_scores([&mk("C0", &x), &mk("C1", &y)]);
            let m2 = ScoreMatrix::from_scores([&mk("C0", &scaled), &mk("C1", &y)]);
            let r1 = correlation_matrix(&m1).unwrap().r[0][1];
            let r2 = correlation_matrix(&m2).unwrap().r[0][1];
            match (r1, r2) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() < 1e-9),
                (p, q) => prop_assert_eq!(p.is_none(), q.is_none()),
            }
        }

        #[test]
        fn ranking_ignores_shifts((x, _) in arb_rows(), c in -10.0f64..10.0) {
            let theta: BTreeMap<String, f64> = x.iter().enumerate().map(|(i, v)| (format!("f{i}"), *v)).collect();
            let shifted: BTreeMap<String, f64> = theta.iter().map(|(k, v)| (k.clone(), v + c)).collect();
            let names = |r: (Ranked, Ranked)| (
                r.0.into_iter().map(|p| p.0).collect::<Vec<_>>(),
                r.1.into_iter().map(|p| p.0).collect::<Vec<_>>(),
            );
            prop_assert_eq!(names(rank_theta(&theta, 3)), names(rank_theta(&shifted, 3)));
        }
    }
}
