//! Spherical k-means on unit vectors.
//!
//! Points are L2-normalized on entry. Each iteration assigns every point to
//! the centroid of largest cosine and replaces each centroid by the
//! normalized mean of its members. Both steps
//! can only raise the mean cosine, so the objective trace is non-decreasing.
//! Ties go to the lower cluster index on the first assignment; afterwards a
//! point tied between its current centroid and another stays where it is.
//!
//! Seeding is k-means++ with distance `1 − max cosine` to the chosen seeds.
//! A cluster that ends up empty is re-seeded from the point with the lowest
//! cosine to its own centroid (taken from a cluster of size ≥ 2). Iteration
//! stops when assignments stop changing or after [`MAX_ITERATIONS`].

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use super::AnalysisError;
use crate::linalg::{dot64, norm64};
use crate::rng;
use crate::tensor_io::{EmbeddingMatrix, Matrix};

pub const MAX_ITERATIONS: usize = 300;
/// Slack allowed in the monotonicity check for floating-point rounding.
const MONOTONE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// k×M unit-norm centroids.
    pub centroids: EmbeddingMatrix,
    pub assignments: Vec<usize>,
    /// Mean cosine between each point and its centroid.
    pub objective: f64,
    /// Objective after each iteration of the winning restart.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn unit_points(weights: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>, AnalysisError> {
    (0..weights.rows())
        .map(|r| {
            let v: Vec<f64> = weights.row(r).iter().map(|&x| x as f64).collect();
            let n = norm64(&v);
            if n == 0.0 {
                return Err(AnalysisError::ZeroRow { row: r });
            }
            Ok(v.into_iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Index and value of the largest cosine; ties go to the lowest index.
fn best_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, cv) in centroids.iter().enumerate() {
        let s = dot64(p, cv);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| (1.0 - dot64(p, &points[chosen[0]])).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // every remaining point duplicates a seed; take any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((1.0 - dot64(p, &points[next])).max(0.0));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &a)| dot64(p, &centroids[a]))
        .sum::<f64>()
        / points.len() as f64
}

/// Moves points into empty clusters, farthest-from-centroid first.
fn fill_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[assign[i]] >= 2)
            .min_by(|&a, &b| {
                let ca = dot64(&points[a], &centroids[assign[a]]);
                let cb = dot64(&points[b], &centroids[assign[b]]);
                ca.total_cmp(&cb).then(a.cmp(&b))
            })
            .expect("k <= points leaves a cluster with >= 2 members");
        log::debug!("re-seeding empty cluster {empty} from point {donor}");
        assign[donor] = empty;
        centroids[empty] = points[donor].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assign: &[usize]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0f64; dim]; centroids.len()];
    for (p, &a) in points.iter().zip(assign) {
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, s) in centroids.iter_mut().zip(sums) {
        let n = norm64(&s);
        // a cancelling (e.g. antipodal) membership keeps its previous centroid
        if n > 0.0 {
            *c = s.into_iter().map(|v| v / n).collect();
        }
    }
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assign: Vec<usize>,
    trace: Vec<f64>,
    converged: bool,
}

fn run_once(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Run {
    let mut centroids = seed_centroids(points, k, rng);
    let mut assign: Vec<usize> = points.iter().map(|p| best_centroid(p, &centroids).0).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..MAX_ITERATIONS {
        fill_empty(points, &mut centroids, &mut assign, k);
        update_centroids(points, &mut centroids, &assign);
        let obj = objective(points, &centroids, &assign);
        if let Some(&prev) = trace.last() {
            debug_assert!(
                obj >= prev - MONOTONE_TOL,
                "objective decreased at iteration {it}: {prev} -> {obj}"
            );
        }
        trace.push(obj);
        let next: Vec<usize> = points
            .iter()
            .zip(&assign)
            .map(|(p, &cur)| {
                let (b, s) = best_centroid(p, &centroids);
                // a point already at a best centroid stays put
                if dot64(p, &centroids[cur]) >= s {
                    cur
                } else {
                    b
                }
            })
            .collect();
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }
    Run {
        centroids,
        assign,
        trace,
        converged,
    }
}

/// Best of `restarts` seeded spherical k-means runs, by final objective.
pub fn spherical_kmeans(
    weights: &EmbeddingMatrix,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterModel, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    if restarts == 0 {
        return Err(AnalysisError::ZeroRestarts);
    }
    if weights.rows() < k {
        return Err(AnalysisError::TooFewPoints {
            points: weights.rows(),
            k,
        });
    }
    let points = unit_points(weights)?;
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| run_once(&points, k, &mut rng::indexed_substream(seed, "kmeans/restart", r as u64)))
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| {
            if b.1.trace.last() > a.1.trace.last() {
                b
            } else {
                a
            }
        })
        .expect("restarts >= 1");
    if !best.converged {
        log::warn!("spherical k-means stopped after {MAX_ITERATIONS} iterations without converging");
    }
    let dim = weights.dim();
    let data: Vec<f32> = best.centroids.iter().flatten().map(|&v| v as f32).collect();
    let centroids = EmbeddingMatrix::raw(Matrix::new(k, dim, data)?).normalize_rows()?;
    Ok(ClusterModel {
        k,
        centroids,
        objective: *best.trace.last().expect("at least one iteration"),
        iterations: best.trace.len(),
        objective_trace: best.trace,
        assignments: best.assign,
        converged: best.converged,
        restart,
    })
}

/// Rand index between two labelings: the fraction of point pairs on which
/// they agree about being together or apart.
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut ra = vec![0u64; ka];
    let mut rb = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let c2 = |m: u64| m * m.saturating_sub(1) / 2;
    let pairs = c2(n as u64) as f64;
    let both: u64 = table.iter().map(|&m| c2(m)).sum();
    let same_a: u64 = ra.iter().map(|&m| c2(m)).sum();
    let same_b: u64 = rb.iter().map(|&m| c2(m)).sum();
    (pairs + 2.0 * both as f64 - same_a as f64 - same_b as f64) / pairs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityResult {
    pub k: usize,
    pub repeats: usize,
    /// Mean Rand index over all pairs of runs.
    pub mean_agreement: f64,
    /// Lowest Rand index over all pairs of runs.
    pub min_agreement: f64,
}

/// Agreement of single-restart clusterings across `repeats` seeds.
pub fn cluster_stability(
    weights: &EmbeddingMatrix,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<StabilityResult, AnalysisError> {
    if repeats == 0 {
        return Err(AnalysisError::ZeroRestarts);
    }
    let runs: Vec<Vec<usize>> = (0..repeats)
        .map(|r| {
            let s: u64 = rng::indexed_substream(seed, "kmeans/stability", r as u64).random();
            spherical_kmeans(weights, k, 1, s).map(|m| m.assignments)
        })
        .collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    let mut min = 1.0f64;
    let mut pairs = 0usize;
    for i in 0..repeats {
        for j in (i + 1)..repeats {
            let ri = rand_index(&runs[i], &runs[j]);
            sum += ri;
            min = min.min(ri);
            pairs += 1;
        }
    }
    let mean = if pairs == 0 { 1.0 } else { sum / pairs as f64 };
    Ok(StabilityResult {
        k,
        repeats,
        mean_agreement: mean,
        min_agreement: min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f32; 2]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn k_one_is_normalized_mean() {
        let m = spherical_kmeans(&pts(&[[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]]), 1, 1, 0).unwrap();
        // unit points (1,0),(0,1),(1,0): mean direction (2,1)/√5
        let c = m.centroids.row(0);
        assert!((c[0] as f64 - 2.0 / 5f64.sqrt()).abs() < 1e-6);
        assert!((c[1] as f64 - 1.0 / 5f64.sqrt()).abs() < 1e-6);
        assert!(m.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn k_equal_points_gives_singletons() {
        let m = spherical_kmeans(&pts(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2], [0.3, -1.0]]), 4, 3, 1).unwrap();
        assert!((m.objective - 1.0).abs() < 1e-9);
        let mut a = m.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let m = spherical_kmeans(&pts(&[[1.0, 0.0]; 5]), 3, 1, 4).unwrap();
        assert_eq!(m.cluster_sizes().iter().filter(|&&s| s > 0).count(), 3);
    }

    #[test]
    fn errors() {
        let p = pts(&[[1.0, 0.0]]);
        assert!(matches!(spherical_kmeans(&p, 2, 1, 0), Err(AnalysisError::TooFewPoints { .. })));
        assert!(matches!(spherical_kmeans(&p, 0, 1, 0), Err(AnalysisError::ZeroK)));
        assert!(matches!(spherical_kmeans(&p, 1, 0, 0), Err(AnalysisError::ZeroRestarts)));
        let z = pts(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(spherical_kmeans(&z, 1, 1, 0), Err(AnalysisError::ZeroRow { row: 1 })));
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // pairs: (01)(02)(03)(12)(13)(23); a: together 01,23; b: together 01,12,02
        // agree on 01 (together), 03 (apart), 13 (apart) → 3/6
        assert!((rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]) - 0.5).abs() < 1e-12);
    }
}
