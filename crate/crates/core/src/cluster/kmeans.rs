use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::silhouette;
use super::ClusterError;

pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One k-means++ seeded Lloyd run to an assignment fixed point.
pub fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> LloydRun {
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dist[i] = d;
            inertia += d;
        }
        history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&labels) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                let old = labels[i];
                counts[old] -= 1;
                for (s, x) in sums[old].iter_mut().zip(&points[i]) {
                    *s -= x;
                }
                labels[i] = j;
                counts[j] = 1;
                sums[j] = points[i].clone();
                dist[i] = 0.0;
                changed = true;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &j)| sq_dist(p, &centroids[j]))
        .sum();
    LloydRun {
        centroids,
        labels,
        inertia,
        history,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub inertia: f64,
    pub silhouette: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, c)| **c == cluster)
            .map(|(u, _)| u.as_str())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for c in self.assignments.values() {
            out[*c] += 1;
        }
        out
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Relabels clusters in order of first appearance along `labels`.
fn canonical_labels(run: &mut LloydRun) {
    let k = run.centroids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &run.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for slot in map.iter_mut().filter(|m| **m == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, c) in run.centroids.drain(..).enumerate() {
        centroids[map[old]] = c;
    }
    run.centroids = centroids;
    for l in &mut run.labels {
        *l = map[*l];
    }
}

/// Best-of-`restarts` k-means over points sorted by id.
pub fn kmeans(
    points: &[(String, Vec<f64>)],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterModel, ClusterError> {
    if k < 1 || k > points.len() {
        return Err(ClusterError::InvalidK {
            k,
            points: points.len(),
        });
    }
    let mut sorted: Vec<&(String, Vec<f64>)> = points.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let data: Vec<Vec<f64>> = sorted.iter().map(|(_, v)| v.clone()).collect();

    let runs: Vec<LloydRun> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(&data, k, &mut restart_rng(seed, r)))
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    canonical_labels(&mut best);

    let sil = silhouette(&data, &best.labels);
    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        assignments: sorted
            .iter()
            .map(|(id, _)| id.clone())
            .zip(best.labels)
            .collect(),
        inertia: best.inertia,
        silhouette: sil,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostics {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKReport {
    pub rows: Vec<KDiagnostics>,
    /// Highest-silhouette k; a suggestion only.
    pub suggested_k: usize,
}

impl SelectKReport {
    pub fn to_tsv(&self) -> String {
        crate::io::tsv(
            &["k", "inertia", "silhouette", "suggested"],
            self.rows.iter().map(|r| {
                vec![
                    r.k.to_string(),
                    r.inertia.to_string(),
                    r.silhouette.to_string(),
                    (r.k == self.suggested_k).to_string(),
                ]
            }),
        )
    }
}

/// Elbow and silhouette diagnostics for every k in `k_range`.
pub fn select_k(
    points: &[(String, Vec<f64>)],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
) -> Result<SelectKReport, ClusterError> {
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi < lo || hi + 1 > points.len() {
        return Err(ClusterError::InvalidKRange {
            lo,
            hi,
            points: points.len(),
        });
    }
    let rows: Vec<KDiagnostics> = k_range
        .into_par_iter()
        .map(|k| {
            kmeans(points, k, seed, restarts).map(|m| KDiagnostics {
                k,
                inertia: m.inertia,
                silhouette: m.silhouette,
            })
        })
        .collect::<Result<_, _>>()?;
    let suggested_k = rows
        .iter()
        .fold(None::<&KDiagnostics>, |best, r| match best {
            Some(b) if b.silhouette >= r.silhouette => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
        .expect("non-empty range");
    Ok(SelectKReport { rows, suggested_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::metrics::adjusted_rand_index;
    use rand_distr::{Distribution, Normal};

    fn named(points: Vec<Vec<f64>>) -> Vec<(String, Vec<f64>)> {
        points
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("u{i:03}"), p))
            .collect()
    }

    #[test]
    fn two_locations_give_zero_inertia() {
        let pts = named(vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![5.0, 5.0], vec![5.0, 5.0]]);
        let m = kmeans(&pts, 2, 1, 3).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut cs = m.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![0.0, 0.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = named(vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![5.0, 4.0]]);
        let m = kmeans(&pts, 1, 1, 1).unwrap();
        assert_eq!(m.centroids, vec![vec![3.0, 2.0]]);
    }

    #[test]
    fn invalid_k() {
        let pts = named(vec![vec![1.0], vec![2.0]]);
        assert!(kmeans(&pts, 0, 1, 1).is_err());
        assert!(kmeans(&pts, 3, 1, 1).is_err());
    }

    fn planted(seed: u64) -> (Vec<(String, Vec<f64>)>, Vec<usize>) {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let noise = Normal::new(0.0, 0.05 * 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..30 {
                pts.push(vec![
                    center[0] + noise.sample(&mut rng),
                    center[1] + noise.sample(&mut rng),
                ]);
                truth.push(c);
            }
        }
        (named(pts), truth)
    }

    #[test]
    fn recovers_planted_gaussian_clusters() {
        let (pts, truth) = planted(3);
        let m = kmeans(&pts, 3, 9, DEFAULT_RESTARTS).unwrap();
        let labels: Vec<usize> = m.assignments.values().copied().collect();
        assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
        assert_eq!(m.sizes(), vec![30, 30, 30]);
    }

    #[test]
    fn inertia_never_increases_and_ends_at_fixed_point() {
        let (pts, _) = planted(5);
        let data: Vec<Vec<f64>> = pts.into_iter().map(|(_, p)| p).collect();
        let run = lloyd(&data, 4, &mut restart_rng(1, 0));
        for w in run.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        for (p, &l) in data.iter().zip(&run.labels) {
            assert_eq!(nearest(p, &run.centroids).0, l);
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let (pts, _) = planted(8);
        let mut shuffled = pts.clone();
        shuffled.reverse();
        assert_eq!(kmeans(&pts, 3, 4, 5).unwrap(), kmeans(&shuffled, 3, 4, 5).unwrap());
    }

    #[test]
    fn select_k_on_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.0 + 0.01 * i as f64, 0.0]);
            pts.push(vec![10.0 + 0.01 * i as f64, 0.0]);
        }
        let report = select_k(&named(pts), 2..=5, 1, 4).unwrap();
        assert_eq!(report.suggested_k, 2);
        assert!(report.rows[0].silhouette > 0.8);
        for r in &report.rows {
            assert!((-1.0..=1.0).contains(&r.silhouette));
        }
        assert!(select_k(&named(vec![vec![0.0]; 4]), 2..=4, 1, 1).is_err());
        assert!(select_k(&named(vec![vec![0.0]; 4]), 1..=2, 1, 1).is_err());
    }
}
