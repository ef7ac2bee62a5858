//! Seeded inputs shared by the benchmarks.

use factorpref_core::btl::FactorComparisons;
use factorpref_core::cluster::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `outcomes` BTL draws over `factors` items with strengths spread in [-1, 1].
pub fn comparisons(factors: usize, outcomes: usize, seed: u64) -> FactorComparisons {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..factors).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c = FactorComparisons::new("bench");
    for _ in 0..outcomes {
        let a = rng.random_range(0..factors);
        let mut b = rng.random_range(0..factors - 1);
        if b >= a {
            b += 1;
        }
        let p = 1.0 / (1.0 + (theta[b] - theta[a]).exp());
        let (w, l) = if rng.random::<f64>() < p { (a, b) } else { (b, a) };
        c.add(&format!("f{w}"), &format!("f{l}"), 1);
    }
    c
}

/// Sparse non-negative matrix with roughly `density` of its cells set.
pub fn sparse(rows: usize, cols: usize, density: f64, seed: u64) -> CsrMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows)
        .map(|_| {
            (0..cols)
                .filter_map(|j| {
                    let keep = rng.random::<f64>() < density;
                    let v = rng.random_range(0.5..3.0);
                    keep.then_some((j, v))
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(cols, data)
}

/// Points drawn around `k` well separated centres.
pub fn blobs(n: usize, dims: usize, k: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = (i % k) as f64 * 5.0;
            let v = (0..dims).map(|_| c + rng.random_range(-1.0..1.0)).collect();
            (format!("u{i:05}"), v)
        })
        .collect()
}
