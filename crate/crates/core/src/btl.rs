//! Factor-level Bradley–Terry–Luce preference modeling.
//!
//! Vote totals per prompt become response-level winner/loser pairs (ties are
//! discarded). Each pair then yields one factor-level outcome for every
//! combination of a factor unique to the winner with a factor unique to the
//! loser. Factor strengths `θ` are estimated with Luce spectral ranking: the
//! log of the stationary distribution of a Markov chain whose rate from a
//! loser to a winner is their win count. [`mle_oracle`] maximizes the BTL
//! likelihood directly and serves as an independent check.
//!
//! All estimates are normalized to mean zero over the estimated factors.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FactorSet;
use crate::model::{Dataset, VoteRecord};

pub const DEFAULT_ALPHA: f64 = 0.01;
const LSR_TOLERANCE: f64 = 1e-10;
const LSR_MAX_ITERATIONS: usize = 100_000;
const MLE_TOLERANCE: f64 = 1e-12;
const MLE_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum BtlError {
    #[error("condition `{0}` has no factor-level comparisons")]
    NoComparisons(String),
    #[error("comparison graph of `{0}` is not strongly connected (alpha = 0)")]
    Disconnected(String),
    #[error("{method} did not converge for `{condition}` within {iterations} iterations")]
    NonConvergence {
        method: &'static str,
        condition: String,
        iterations: usize,
    },
    #[error("response `{0}` has no factor set")]
    MissingFactorSet(String),
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
}

/// Vote totals per prompt for one analysis condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVotes {
    pub condition_id: String,
    /// prompt id -> (response id, total votes), responses in id order.
    pub prompts: BTreeMap<String, Vec<(String, u64)>>,
}

impl ConditionVotes {
    /// Totals over `votes` for every response of the selected prompts
    /// (`None` selects all); unvoted responses count 0.
    pub fn from_votes<'a>(
        condition_id: impl Into<String>,
        dataset: &Dataset,
        prompts: Option<&BTreeSet<String>>,
        votes: impl IntoIterator<Item = &'a VoteRecord>,
    ) -> Self {
        let mut totals: HashMap<&str, u64> = HashMap::new();
        for v in votes {
            *totals.entry(v.response_id.as_str()).or_insert(0) += v.count;
        }
        let prompts = dataset
            .responses_by_prompt()
            .into_iter()
            .filter(|(p, _)| prompts.is_none_or(|sel| sel.contains(*p)))
            .map(|(p, rs)| {
                let list = rs
                    .iter()
                    .map(|r| {
                        let id = r.response_id.as_str();
                        (id.to_string(), totals.get(id).copied().unwrap_or(0))
                    })
                    .collect();
                (p.to_string(), list)
            })
            .collect();
        ConditionVotes {
            condition_id: condition_id.into(),
            prompts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResponsePair {
    pub prompt_id: String,
    pub winner: String,
    pub loser: String,
}

/// Every within-prompt pair with strictly different totals, higher total
/// winning. Ties are dropped.
pub fn derive_response_pairs(cv: &ConditionVotes) -> Vec<ResponsePair> {
    let mut out = Vec::new();
    for (prompt, list) in &cv.prompts {
        for (i, (a, va)) in list.iter().enumerate() {
            for (b, vb) in &list[i + 1..] {
                let (winner, loser) = match va.cmp(vb) {
                    std::cmp::Ordering::Greater => (a, b),
                    std::cmp::Ordering::Less => (b, a),
                    std::cmp::Ordering::Equal => continue,
                };
                out.push(ResponsePair {
                    prompt_id: prompt.clone(),
                    winner: winner.clone(),
                    loser: loser.clone(),
                });
            }
        }
    }
    out
}

/// Aggregated factor-level outcomes for one condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorComparisons {
    pub condition_id: String,
    /// (winner, loser) -> number of outcomes; never contains self-pairs.
    pub wins: BTreeMap<(String, String), u64>,
}

impl FactorComparisons {
    pub fn new(condition_id: impl Into<String>) -> Self {
        FactorComparisons {
            condition_id: condition_id.into(),
            wins: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, winner: &str, loser: &str, count: u64) {
        if winner == loser || count == 0 {
            return;
        }
        *self
            .wins
            .entry((winner.to_string(), loser.to_string()))
            .or_insert(0) += count;
    }

    /// Factors that take part in at least one outcome, in name order.
    pub fn factor_index(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.wins.keys().flat_map(|(w, l)| [w, l]).collect();
        set.into_iter().cloned().collect()
    }

    pub fn total(&self) -> u64 {
        self.wins.values().sum()
    }

    /// Outcomes each factor took part in, as winner or loser.
    pub fn coverage(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for ((w, l), &n) in &self.wins {
            *out.entry(w.clone()).or_insert(0) += n;
            *out.entry(l.clone()).or_insert(0) += n;
        }
        out
    }

    /// Same outcomes with every winner and loser exchanged.
    pub fn reversed(&self) -> Self {
        FactorComparisons {
            condition_id: self.condition_id.clone(),
            wins: self
                .wins
                .iter()
                .map(|((w, l), &n)| ((l.clone(), w.clone()), n))
                .collect(),
        }
    }

    /// Rows `(winner, loser, count)` as a tab-separated table.
    pub fn to_tsv(&self) -> String {
        crate::io::tsv(
            &["winner", "loser", "count"],
            self.wins
                .iter()
                .map(|((w, l), n)| vec![w.clone(), l.clone(), n.to_string()]),
        )
    }
}

/// Expands each response pair into |F⁺|×|F⁻| factor outcomes, where F⁺ and
/// F⁻ are the factors only the winner and only the loser carry.
pub fn derive_factor_comparisons(
    condition_id: &str,
    pairs: &[ResponsePair],
    factor_sets: &HashMap<String, FactorSet>,
) -> Result<FactorComparisons, BtlError> {
    for p in pairs {
        for id in [&p.winner, &p.loser] {
            if !factor_sets.contains_key(id) {
                return Err(BtlError::MissingFactorSet(id.clone()));
            }
        }
    }
    let wins = pairs
        .par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<(String, String), u64>, p| {
            let fw = &factor_sets[&p.winner].factors;
            let fl = &factor_sets[&p.loser].factors;
            for plus in fw.difference(fl) {
                for minus in fl.difference(fw) {
                    *acc.entry((plus.name().to_string(), minus.name().to_string()))
                        .or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, n) in b {
                *a.entry(k).or_insert(0) += n;
            }
            a
        });
    Ok(FactorComparisons {
        condition_id: condition_id.to_string(),
        wins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtlScores {
    pub condition_id: String,
    pub theta: BTreeMap<String, f64>,
    pub coverage: BTreeMap<String, u64>,
    pub alpha: f64,
    /// Vocabulary factors that never appeared in a comparison.
    #[serde(default)]
    pub missing: Vec<String>,
}

impl BtlScores {
    /// Records every vocabulary factor without an estimate as missing.
    pub fn with_vocabulary<'a>(mut self, vocabulary: impl IntoIterator<Item = &'a str>) -> Self {
        self.missing = vocabulary
            .into_iter()
            .filter(|f| !self.theta.contains_key(*f))
            .map(str::to_string)
            .collect();
        self.missing.sort();
        self.missing.dedup();
        if !self.missing.is_empty() {
            warn!(
                "condition `{}`: {} factor(s) never compared, reported as missing",
                self.condition_id,
                self.missing.len()
            );
        }
        self
    }
}

/// P(k ≻ ℓ) under the BTL model.
pub fn btl_probability(theta_k: f64, theta_l: f64) -> f64 {
    1.0 / (1.0 + (theta_l - theta_k).exp())
}

/// Dense `(wins + alpha)` matrix: `w[k][l]` counts k beating l.
struct WinMatrix {
    items: Vec<String>,
    w: Vec<Vec<f64>>,
}

impl WinMatrix {
    fn build(c: &FactorComparisons, alpha: f64) -> Result<Self, BtlError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(BtlError::InvalidAlpha(alpha));
        }
        let items = c.factor_index();
        if items.len() < 2 {
            return Err(BtlError::NoComparisons(c.condition_id.clone()));
        }
        let index: HashMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let n = items.len();
        let mut w = vec![vec![alpha; n]; n];
        for (k, row) in w.iter_mut().enumerate() {
            row[k] = 0.0;
        }
        for ((winner, loser), &count) in &c.wins {
            w[index[winner.as_str()]][index[loser.as_str()]] += count as f64;
        }
        let m = WinMatrix { items, w };
        if alpha == 0.0 && !m.strongly_connected() {
            return Err(BtlError::Disconnected(c.condition_id.clone()));
        }
        Ok(m)
    }

    fn n(&self) -> usize {
        self.items.len()
    }

    /// Edges loser -> winner; checks every node reaches and is reached by 0.
    fn strongly_connected(&self) -> bool {
        let n = self.n();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    let edge = if forward { self.w[v][u] } else { self.w[u][v] };
                    if edge > 0.0 && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

fn centered_log(weights: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = weights.iter().map(|p| p.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.into_iter().map(|x| x - mean).collect()
}

fn scores(c: &FactorComparisons, m: &WinMatrix, theta: Vec<f64>, alpha: f64) -> BtlScores {
    BtlScores {
        condition_id: c.condition_id.clone(),
        theta: m.items.iter().cloned().zip(theta).collect(),
        coverage: c.coverage(),
        alpha,
        missing: Vec::new(),
    }
}

/// Luce spectral ranking.
///
/// The chain moves from loser ℓ to winner k at rate `wins(k,ℓ) + alpha`. Its
/// stationary distribution π is found by power iteration on the lazy jump
/// chain (each state leaves with probability ½, to a neighbour chosen in
/// proportion to its rates) and mapped back through the exit rates:
/// π_k ∝ μ_k / d_k. Returns θ = ln π, centered.
pub fn lsr_estimate(c: &FactorComparisons, alpha: f64) -> Result<BtlScores, BtlError> {
    let m = WinMatrix::build(c, alpha)?;
    let n = m.n();
    // rate[l][k] = w[k][l]
    let exit: Vec<f64> = (0..n).map(|l| (0..n).map(|k| m.w[k][l]).sum()).collect();
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..LSR_MAX_ITERATIONS {
        for (k, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = (0..n).map(|l| mu[l] * m.w[k][l] / exit[l]).sum();
            *slot = 0.5 * mu[k] + 0.5 * inflow;
        }
        let total: f64 = next.iter().sum();
        let mut delta = 0.0;
        for (a, b) in mu.iter_mut().zip(next.iter()) {
            let b = b / total;
            delta += (*a - b).abs();
            *a = b;
        }
        if delta < LSR_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(BtlError::NonConvergence {
            method: "LSR",
            condition: c.condition_id.clone(),
            iterations: LSR_MAX_ITERATIONS,
        });
    }
    let pi: Vec<f64> = mu.iter().zip(&exit).map(|(u, d)| u / d).collect();
    Ok(scores(c, &m, centered_log(&pi), alpha))
}

/// Maximum-likelihood BTL fit by minorization–maximization, with `alpha`
/// pseudo-wins in both directions for every pair. Stops when the gradient of
/// the per-outcome log-likelihood falls below 1e-9 in the sup norm.
pub fn mle_oracle(c: &FactorComparisons, alpha: f64) -> Result<BtlScores, BtlError> {
    let m = WinMatrix::build(c, alpha)?;
    let n = m.n();
    let wins: Vec<f64> = m.w.iter().map(|row| row.iter().sum()).collect();
    let pairs: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|l| m.w[k][l] + m.w[l][k]).collect())
        .collect();
    let total: f64 = wins.iter().sum();
    if wins.contains(&0.0) {
        // A factor that never wins has its MLE at -inf.
        return Err(BtlError::NonConvergence {
            method: "MLE",
            condition: c.condition_id.clone(),
            iterations: 0,
        });
    }

    let mut p = vec![1.0; n];
    for _ in 0..MLE_MAX_ITERATIONS {
        let mut grad_max: f64 = 0.0;
        for k in 0..n {
            let expected: f64 = (0..n)
                .filter(|&l| l != k)
                .map(|l| pairs[k][l] * p[k] / (p[k] + p[l]))
                .sum();
            grad_max = grad_max.max(((wins[k] - expected) / total).abs());
        }
        if grad_max < MLE_TOLERANCE {
            return Ok(scores(c, &m, centered_log(&p), alpha));
        }
        let mut next: Vec<f64> = (0..n)
            .map(|k| {
                let denom: f64 = (0..n)
                    .filter(|&l| l != k)
                    .map(|l| pairs[k][l] / (p[k] + p[l]))
                    .sum();
                wins[k] / denom
            })
            .collect();
        let log_mean = next.iter().map(|x| x.ln()).sum::<f64>() / n as f64;
        for x in &mut next {
            *x /= log_mean.exp();
        }
        p = next;
    }
    Err(BtlError::NonConvergence {
        method: "MLE",
        condition: c.condition_id.clone(),
        iterations: MLE_MAX_ITERATIONS,
    })
}

/// Every factor carried by at least one response, in name order.
pub fn factor_vocabulary(factor_sets: &HashMap<String, FactorSet>) -> Vec<String> {
    let names: BTreeSet<&str> = factor_sets
        .values()
        .flat_map(|fs| fs.factors.iter().map(|f| f.name()))
        .collect();
    names.into_iter().map(str::to_string).collect()
}

/// Totals, pairs, factor outcomes and the LSR fit for one condition. Factors
/// of `factor_sets` that never enter a comparison are listed as missing.
pub fn fit_condition<'a>(
    condition_id: &str,
    dataset: &Dataset,
    votes: impl IntoIterator<Item = &'a VoteRecord>,
    factor_sets: &HashMap<String, FactorSet>,
    alpha: f64,
) -> Result<(FactorComparisons, BtlScores), BtlError> {
    let cv = ConditionVotes::from_votes(condition_id, dataset, None, votes);
    let pairs = derive_response_pairs(&cv);
    let comparisons = derive_factor_comparisons(condition_id, &pairs, factor_sets)?;
    let vocab = factor_vocabulary(factor_sets);
    let scores = lsr_estimate(&comparisons, alpha)?.with_vocabulary(vocab.iter().map(String::as_str));
    Ok((comparisons, scores))
}

/// Scores table with columns condition_id, factor, theta, coverage, alpha.
/// Missing factors are listed with theta `NA`.
pub fn scores_to_tsv<'a>(all: impl IntoIterator<Item = &'a BtlScores>) -> String {
    let mut rows = Vec::new();
    for s in all {
        let mut factors: Vec<(&str, Option<f64>)> =
            s.theta.iter().map(|(f, &t)| (f.as_str(), Some(t))).collect();
        factors.extend(s.missing.iter().map(|f| (f.as_str(), None)));
        factors.sort_by(|a, b| a.0.cmp(b.0));
        for (f, t) in factors {
            rows.push(vec![
                s.condition_id.clone(),
                f.to_string(),
                t.map_or_else(|| "NA".to_string(), |t| t.to_string()),
                s.coverage.get(f).copied().unwrap_or(0).to_string(),
                s.alpha.to_string(),
            ]);
        }
    }
    crate::io::tsv(&["condition_id", "factor", "theta", "coverage", "alpha"], rows)
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScoresParseError {
    pub line: usize,
    pub message: String,
}

/// Parses [`scores_to_tsv`] output, preserving condition order of first
/// appearance.
pub fn scores_from_tsv(text: &str) -> Result<Vec<BtlScores>, ScoresParseError> {
    let mut out: Vec<BtlScores> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| ScoresParseError {
            line: i + 1,
            message: message.to_string(),
        };
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 5 {
            return Err(err("expected 5 tab-separated columns"));
        }
        let alpha: f64 = cells[4].parse().map_err(|_| err("bad alpha"))?;
        let coverage: u64 = cells[3].parse().map_err(|_| err("bad coverage"))?;
        if out.last().is_none_or(|s| s.condition_id != cells[0]) {
            out.push(BtlScores {
                condition_id: cells[0].to_string(),
                theta: BTreeMap::new(),
                coverage: BTreeMap::new(),
                alpha,
                missing: Vec::new(),
            });
        }
        let s = out.last_mut().expect("pushed above");
        if cells[2] == "NA" {
            s.missing.push(cells[1].to_string());
        } else {
            let theta: f64 = cells[2].parse().map_err(|_| err("bad theta"))?;
            s.theta.insert(cells[1].to_string(), theta);
            s.coverage.insert(cells[1].to_string(), coverage);
        }
    }
    Ok(out)
}
