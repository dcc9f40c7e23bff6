use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{nearest_row, sq_dist};

pub const DEFAULT_MAX_ITERS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            max_iters: DEFAULT_MAX_ITERS,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub dim: usize,
    /// `k` rows of `dim` values.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Objective after initialization and after every Lloyd iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

/// Sum of squared distances of every point to its assigned centroid.
pub fn objective(points: &[f64], dim: usize, centroids: &[f64], assignments: &[usize]) -> f64 {
    points
        .chunks_exact(dim)
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a * dim..(a + 1) * dim]))
        .sum()
}

fn assign_all(points: &[f64], dim: usize, centroids: &[f64]) -> Vec<usize> {
    points
        .chunks_exact(dim)
        .map(|p| nearest_row(p, centroids, dim).0)
        .collect()
}

/// k-means++ seeding.
fn init_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(points: &[f64], dim: usize, centroids: &mut [f64], assignments: &mut [usize]) {
    let k = centroids.len() / dim;
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a * dim..(a + 1) * dim]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { return };
        sizes[assignments[i]] -= 1;
        sizes[j] += 1;
        assignments[i] = j;
        centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}

fn update_centroids(points: &[f64], dim: usize, centroids: &mut [f64], assignments: &[usize]) {
    let k = centroids.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(dim).zip(assignments) {
        counts[a] += 1;
        sums[a * dim..(a + 1) * dim]
            .iter_mut()
            .zip(p)
            .for_each(|(s, x)| *s += x);
    }
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let inv = 1.0 / counts[j] as f64;
        for (c, s) in centroids[j * dim..(j + 1) * dim]
            .iter_mut()
            .zip(&sums[j * dim..(j + 1) * dim])
        {
            *c = s * inv;
        }
    }
}

/// Lloyd's algorithm from a seeded k-means++ start. Stops after `max_iters`
/// iterations or when no assignment changes.
pub fn kmeans(points: &[f64], dim: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    if !points.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: points.len() % dim,
        });
    }
    if params.k == 0 {
        return Err(Error::InvalidParameter("k-means needs k >= 1".into()));
    }
    let n = points.len() / dim;
    if n < params.k {
        return Err(Error::InsufficientRows {
            needed: params.k,
            available: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = init_plus_plus(points, dim, params.k, &mut rng);
    let mut assignments = assign_all(points, dim, &centroids);
    let mut history = vec![objective(points, dim, &centroids, &assignments)];
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        repair_empty(points, dim, &mut centroids, &mut assignments);
        update_centroids(points, dim, &mut centroids, &assignments);
        let next = assign_all(points, dim, &centroids);
        let changed = next != assignments;
        assignments = next;
        let obj = objective(points, dim, &centroids, &assignments);
        debug_assert!(
            obj <= history.last().unwrap() * (1.0 + 1e-9) + 1e-9,
            "k-means objective increased: {} -> {}",
            history.last().unwrap(),
            obj
        );
        history.push(obj);
        if !changed {
            break;
        }
    }
    // the final reassignment can strand a centroid; restore one member each
    repair_empty(points, dim, &mut centroids, &mut assignments);
    update_centroids(points, dim, &mut centroids, &assignments);

    Ok(KMeansResult {
        dim,
        centroids,
        assignments,
        objective_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random_range(-5.0..5.0)).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = lcg_points(37, 3, 1);
        let r = kmeans(&pts, 3, &KMeansParams::new(1, 9)).unwrap();
        for d in 0..3 {
            let mean: f64 = pts.iter().skip(d).step_by(3).sum::<f64>() / 37.0;
            assert!((r.centroids[d] - mean).abs() < 1e-12);
        }
    }

    /// Exhaustive search over all 2-partitions of a tiny 1-D set.
    fn best_two_partition(points: &[f64]) -> (f64, Vec<f64>) {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let (mut a, mut b) = (vec![], vec![]);
            for (i, &p) in points.iter().enumerate() {
                if (mask >> i) & 1 == 1 {
                    a.push(p)
                } else {
                    b.push(p)
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let sse = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            };
            let cost = sse(&a) + sse(&b);
            if cost < best.0 {
                let mut c = vec![mean(&a), mean(&b)];
                c.sort_by(f64::total_cmp);
                best = (cost, c);
            }
        }
        best
    }

    #[test]
    fn two_clusters_on_separated_pairs() {
        let pts = [0.0, 0.0, 10.0, 10.0];
        let (cost, expected) = best_two_partition(&pts);
        assert_eq!(cost, 0.0);
        for seed in 0..10 {
            let r = kmeans(&pts, 1, &KMeansParams::new(2, seed)).unwrap();
            let mut c = r.centroids.clone();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, expected);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let pts = lcg_points(200, 4, 3);
        let a = kmeans(&pts, 4, &KMeansParams::new(8, 42)).unwrap();
        let b = kmeans(&pts, 4, &KMeansParams::new(8, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_never_increases_and_clusters_nonempty() {
        let pts = lcg_points(300, 2, 5);
        let r = kmeans(&pts, 2, &KMeansParams { k: 12, max_iters: 50, seed: 1 }).unwrap();
        for w in r.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let mut sizes = [0; 12];
        r.assignments.iter().for_each(|&a| sizes[a] += 1);
        assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let pts = vec![1.0; 10];
        let r = kmeans(&pts, 2, &KMeansParams::new(3, 0)).unwrap();
        let mut sizes = [0; 3];
        r.assignments.iter().for_each(|&a| sizes[a] += 1);
        assert!(sizes.iter().all(|&s| s > 0));
        assert!(r.centroids.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn too_few_rows_is_an_error() {
        assert!(matches!(
            kmeans(&[1.0, 2.0], 1, &KMeansParams::new(3, 0)),
            Err(Error::InsufficientRows { needed: 3, available: 2 })
        ));
    }
}
