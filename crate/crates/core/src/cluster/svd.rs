//! Seeded randomized truncated SVD (range finder with subspace iteration).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use super::ClusterError;

pub const OVERSAMPLING: usize = 10;
pub const POWER_ITERATIONS: usize = 4;
/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    /// Non-increasing, all strictly positive.
    pub singular_values: Vec<f64>,
    /// Right singular vectors, one per singular value, each of length `cols`.
    pub components: Vec<Vec<f64>>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Coordinates of a sparse row in the component basis.
    pub fn project_row(&self, row: impl Iterator<Item = (usize, f64)> + Clone) -> Vec<f64> {
        self.components
            .iter()
            .map(|v| row.clone().map(|(c, x)| x * v[c]).sum())
            .collect()
    }
}

fn orthonormal_basis(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Top-`dims` singular triplets of `a` (only the right vectors are kept).
/// The sketch width is `dims + OVERSAMPLING`, capped at the smaller matrix
/// dimension, so the result is exact whenever `dims` reaches the rank.
pub fn fit_svd(a: &CsrMatrix<f64>, dims: usize, seed: u64) -> Result<TruncatedSvd, ClusterError> {
    if dims < 1 {
        return Err(ClusterError::InvalidDims(dims));
    }
    let (rows, cols) = a.shape();
    let width = (dims + OVERSAMPLING).min(rows.min(cols));
    if width == 0 || a.nnz() == 0 {
        return Ok(TruncatedSvd {
            singular_values: Vec::new(),
            components: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(cols, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_basis(a.mul_dense(&omega));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormal_basis(a.tr_mul_dense(&q));
        q = orthonormal_basis(a.mul_dense(&z));
    }
    // Bᵀ = Aᵀ Q  (cols × width); the left singular vectors of Bᵀ are the
    // right singular vectors of A restricted to the sketched range.
    let bt = a.tr_mul_dense(&q);
    let svd = bt.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut singular_values = Vec::new();
    let mut components = Vec::new();
    for &i in order.iter().take(dims) {
        let s = svd.singular_values[i];
        if top == 0.0 || s <= top * RANK_TOLERANCE {
            break;
        }
        let mut v: Vec<f64> = u.column(i).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        singular_values.push(s);
        components.push(v);
    }
    Ok(TruncatedSvd {
        singular_values,
        components,
    })
}
