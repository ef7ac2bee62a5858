//! Voter representation and clustering: sparse vote matrix, TF-IDF weighting,
//! truncated SVD, L2 normalization and k-means.

mod kmeans;
mod metrics;
mod sparse;
mod svd;

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::Dataset;

pub use kmeans::{
    kmeans, lloyd, select_k, ClusterModel, KDiagnostics, LloydRun, SelectKReport,
    DEFAULT_RESTARTS, MAX_ITERATIONS,
};
pub use metrics::{adjusted_rand_index, silhouette};
pub use sparse::CsrMatrix;
pub use svd::{fit_svd, TruncatedSvd, OVERSAMPLING, POWER_ITERATIONS};

pub const DEFAULT_DIMS: usize = 100;
/// Embedded norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("embedding dimension must be at least 1, got {0}")]
    InvalidDims(usize),
    #[error("vote matrix has {users} users and {responses} responses")]
    EmptyMatrix { users: usize, responses: usize },
    #[error("k = {k} is invalid for {points} points")]
    InvalidK { k: usize, points: usize },
    #[error("k range {lo}..={hi} must lie within [2, {points} - 1]")]
    InvalidKRange { lo: usize, hi: usize, points: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

/// Users × responses vote counts, rows and columns sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct UserVoteMatrix {
    pub users: Vec<String>,
    pub responses: Vec<String>,
    pub counts: CsrMatrix<u64>,
}

impl UserVoteMatrix {
    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts.row(row).map(|(_, v)| v).sum()
    }
}

pub fn build_vote_matrix(d: &Dataset) -> Result<UserVoteMatrix, ClusterError> {
    let responses: Vec<String> = d.responses().iter().map(|r| r.response_id.clone()).collect();
    let col: BTreeMap<&str, usize> = responses
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut rows: BTreeMap<&str, Vec<(usize, u64)>> = BTreeMap::new();
    for v in d.votes() {
        rows.entry(&v.user_id)
            .or_default()
            .push((col[v.response_id.as_str()], v.count));
    }
    rows.retain(|_, r| r.iter().any(|&(_, c)| c > 0));
    if rows.is_empty() || responses.is_empty() {
        return Err(ClusterError::EmptyMatrix {
            users: rows.len(),
            responses: responses.len(),
        });
    }
    let users = rows.keys().map(|u| u.to_string()).collect();
    let counts = CsrMatrix::from_rows(responses.len(), rows.into_values().collect());
    Ok(UserVoteMatrix {
        users,
        responses,
        counts,
    })
}

/// Smoothed inverse document frequency over users.
pub fn idf(users: usize, df: usize) -> f64 {
    ((1.0 + users as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Raw-count tf times smoothed idf. The sparsity pattern is unchanged.
pub fn tfidf_reweight(m: &UserVoteMatrix) -> (CsrMatrix<f64>, Vec<f64>) {
    let mut df = vec![0usize; m.responses.len()];
    for (_, c) in m.counts.pattern() {
        df[c] += 1;
    }
    let weights: Vec<f64> = df.iter().map(|&d| idf(m.users.len(), d)).collect();
    let w = m.counts.map(|_, c, v| v as f64 * weights[c]);
    (w, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub responses: Vec<String>,
    pub idf: Vec<f64>,
    pub svd: TruncatedSvd,
}

impl EmbeddingModel {
    pub fn rank(&self) -> usize {
        self.svd.rank()
    }
}

pub fn fit_embedding(
    m: &UserVoteMatrix,
    dims: usize,
    seed: u64,
) -> Result<EmbeddingModel, ClusterError> {
    let (w, idf) = tfidf_reweight(m);
    let svd = fit_svd(&w, dims, seed)?;
    Ok(EmbeddingModel {
        responses: m.responses.clone(),
        idf,
        svd,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserEmbedding {
    /// Unit vectors for every clusterable user.
    pub vectors: BTreeMap<String, Vec<f64>>,
    /// Users whose projection vanished; they are left out of clustering.
    pub flagged: Vec<String>,
}

impl UserEmbedding {
    pub fn points(&self) -> Vec<(String, Vec<f64>)> {
        self.vectors
            .iter()
            .map(|(u, v)| (u.clone(), v.clone()))
            .collect()
    }
}

pub fn embed_users(m: &UserVoteMatrix, e: &EmbeddingModel) -> UserEmbedding {
    let mut out = UserEmbedding::default();
    for (i, user) in m.users.iter().enumerate() {
        let z = e
            .svd
            .project_row(m.counts.row(i).map(|(c, v)| (c, v as f64 * e.idf[c])));
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < ZERO_NORM {
            warn!("user `{user}` has a zero embedding and is excluded from clustering");
            out.flagged.push(user.clone());
        } else {
            out.vectors
                .insert(user.clone(), z.iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// First two principal-component coordinates of each point.
pub fn project_2d(
    points: &[(String, Vec<f64>)],
) -> Result<BTreeMap<String, (f64, f64)>, ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len();
    let dim = points[0].1.len();
    let x = DMatrix::from_fn(n, dim, |i, j| points[i].1[j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0).max(1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let axis = |k: usize| -> Option<Vec<f64>> {
        let idx = *order.get(k)?;
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        Some(v)
    };
    let coord = |row: usize, v: &Option<Vec<f64>>| -> f64 {
        v.as_ref().map_or(0.0, |v| {
            (0..dim).map(|j| centered[(row, j)] * v[j]).sum()
        })
    };
    let (a1, a2) = (axis(0), axis(1));
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), (coord(i, &a1), coord(i, &a2))))
        .collect())
}

/// Everything produced by one vote-matrix-to-clusters run.
#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub matrix: UserVoteMatrix,
    pub embedding_model: EmbeddingModel,
    pub embedding: UserEmbedding,
    pub model: ClusterModel,
}

/// Vote matrix, TF-IDF, truncated SVD, normalization and k-means in one call.
pub fn cluster_users(
    d: &Dataset,
    dims: usize,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterRun, ClusterError> {
    let matrix = build_vote_matrix(d)?;
    let embedding_model = fit_embedding(&matrix, dims, seed)?;
    let embedding = embed_users(&matrix, &embedding_model);
    let model = kmeans(&embedding.points(), k, seed, restarts)?;
    Ok(ClusterRun {
        matrix,
        embedding_model,
        embedding,
        model,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub user_id: String,
    pub cluster: usize,
}

impl ClusterModel {
    pub fn records(&self) -> Vec<AssignmentRecord> {
        self.assignments
            .iter()
            .map(|(u, c)| AssignmentRecord {
                user_id: u.clone(),
                cluster: *c,
            })
            .collect()
    }
}

pub fn coordinates_to_tsv(
    coords: &BTreeMap<String, (f64, f64)>,
    assignments: &BTreeMap<String, usize>,
) -> String {
    crate::io::tsv(
        &["user_id", "x", "y", "cluster"],
        coords.iter().map(|(u, (x, y))| {
            vec![
                u.clone(),
                x.to_string(),
                y.to_string(),
                assignments.get(u).map_or("NA".into(), |c| c.to_string()),
            ]
        }),
    )
}
