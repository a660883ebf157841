//! Softmax-weighted projection of voxel weights onto an image-embedding bank.
//!
//! For a unit-norm weight `w` and bank rows `e_1..e_K` the scores are
//! `s_k = softmax_k(w·e_k / τ)`. The decoupled projection averages norms and
//! directions separately,
//!
//! ```text
//! proj = (Σ_k s_k ‖e_k‖) · (Σ_k s_k e_k / ‖e_k‖)
//! ```
//!
//! while the coupled projection is the plain weighted mean `Σ_k s_k e_k`.
//! This is dot-product attention with the voxel weight as the query and the
//! bank as keys and values.
//!
//! Banks are scanned in chunks with an online log-sum-exp, so memory does not
//! grow with K. At the default τ = 1/150 logits reach ±150 for unit-norm
//! rows, and larger for unnormalized ones; max subtraction is required.
//! All reductions are in `f64`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{cosine64, dot64, norm64};
use crate::rng;
use crate::tensor_io::{row_norm, EmbeddingMatrix, IoError, Matrix, RowSource, UNIT_NORM_TOL};

pub const DEFAULT_TEMPERATURE: f64 = 1.0 / 150.0;
pub const DEFAULT_BANK_CHUNK: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ProjectionError {
    #[error("temperature must be > 0, got {0}")]
    Temperature(f64),
    #[error("bank_chunk must be >= 1")]
    Chunk,
    #[error("empty bank")]
    EmptyBank,
    #[error("bank row {row} has zero norm")]
    ZeroBankRow { row: usize },
    #[error("weight row {row} has zero norm")]
    ZeroWeight { row: usize },
    #[error("query vector is not unit-norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("dimension mismatch: weights have {weights}, bank has {bank}")]
    Dim { weights: usize, bank: usize },
    #[error("subset size {size} not in 1..={bank}")]
    SubsetSize { size: usize, bank: usize },
    #[error("repeats must be >= 1")]
    Repeats,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Separate weighted means of bank norms and bank directions.
    #[default]
    Decoupled,
    /// Weighted mean of the raw bank vectors.
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub temperature: f64,
    pub mode: ProjectionMode,
    pub bank_chunk: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            mode: ProjectionMode::Decoupled,
            bank_chunk: DEFAULT_BANK_CHUNK,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ProjectionError::Temperature(self.temperature));
        }
        if self.bank_chunk == 0 {
            return Err(ProjectionError::Chunk);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    /// N×M projected weights (not normalized).
    pub projected: EmbeddingMatrix,
    /// Cosine between each original weight and its projection.
    pub pre_post_cosine: Vec<f64>,
    pub bank_size: usize,
}

impl ProjectionResult {
    pub fn mean_cosine(&self) -> f64 {
        if self.pre_post_cosine.is_empty() {
            return f64::NAN;
        }
        self.pre_post_cosine.iter().sum::<f64>() / self.pre_post_cosine.len() as f64
    }

    /// `voxel_id,pre_post_cosine` CSV. `voxel_ids[r]` labels row `r`.
    pub fn diagnostics_csv(&self, voxel_ids: &[usize]) -> String {
        let mut out = String::from("voxel_id,pre_post_cosine\n");
        for (id, c) in voxel_ids.iter().zip(&self.pre_post_cosine) {
            out.push_str(&format!("{id},{c:.6}\n"));
        }
        out
    }
}

/// Softmax scores of one unit-norm query against every bank row.
pub fn score(w: &[f32], bank: &EmbeddingMatrix, temperature: f64) -> Result<Vec<f64>, ProjectionError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ProjectionError::Temperature(temperature));
    }
    if bank.rows() == 0 {
        return Err(ProjectionError::EmptyBank);
    }
    if w.len() != bank.dim() {
        return Err(ProjectionError::Dim {
            weights: w.len(),
            bank: bank.dim(),
        });
    }
    let n = row_norm(w);
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(ProjectionError::NotUnitNorm(n));
    }
    let q: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let logits: Vec<f64> = bank
        .matrix()
        .iter_rows()
        .map(|e| {
            e.iter().zip(&q).map(|(&ev, qv)| ev as f64 * qv).sum::<f64>() / temperature
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter_mut().for_each(|e| *e /= total);
    Ok(exps)
}

/// Online softmax-weighted accumulator for one query.
#[derive(Clone, Debug)]
struct Accumulator {
    max: f64,
    /// Σ exp(l − max)
    weight_sum: f64,
    /// Σ exp(l − max) · ‖e‖ (decoupled only)
    norm_sum: f64,
    /// Σ exp(l − max) · e/‖e‖ (decoupled) or · e (coupled)
    vec_sum: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            weight_sum: 0.0,
            norm_sum: 0.0,
            vec_sum: vec![0.0; dim],
        }
    }

    fn rescale_to(&mut self, new_max: f64) {
        if new_max > self.max {
            let f = (self.max - new_max).exp();
            self.weight_sum *= f;
            self.norm_sum *= f;
            self.vec_sum.iter_mut().for_each(|v| *v *= f);
            self.max = new_max;
        }
    }

    fn finish(&self, mode: ProjectionMode) -> Vec<f64> {
        match mode {
            ProjectionMode::Decoupled => {
                let norm = self.norm_sum / self.weight_sum;
                self.vec_sum
                    .iter()
                    .map(|v| norm * v / self.weight_sum)
                    .collect()
            }
            ProjectionMode::Coupled => self.vec_sum.iter().map(|v| v / self.weight_sum).collect(),
        }
    }
}

/// A bank chunk converted to `f64` with per-row norms.
struct PreparedChunk {
    rows: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn prepare_chunk(start: usize, chunk: &[f32], dim: usize) -> Result<PreparedChunk, ProjectionError> {
    let mut rows = Vec::with_capacity(chunk.len() / dim);
    let mut norms = Vec::with_capacity(chunk.len() / dim);
    for (i, r) in chunk.chunks_exact(dim).enumerate() {
        let row: Vec<f64> = r.iter().map(|&v| v as f64).collect();
        let n = norm64(&row);
        if n == 0.0 {
            return Err(ProjectionError::ZeroBankRow { row: start + i });
        }
        rows.push(row);
        norms.push(n);
    }
    Ok(PreparedChunk { rows, norms })
}

fn unit_queries(weights: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>, ProjectionError> {
    if !weights.is_unit_norm() {
        log::warn!("projection weights not flagged unit-norm; normalizing rows");
    }
    weights
        .matrix()
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let q: Vec<f64> = r.iter().map(|&v| v as f64).collect();
            let n = norm64(&q);
            if n == 0.0 {
                return Err(ProjectionError::ZeroWeight { row: i });
            }
            Ok(if weights.is_unit_norm() {
                q
            } else {
                q.into_iter().map(|v| v / n).collect()
            })
        })
        .collect()
}

/// Projects every weight row onto the bank.
pub fn project<B: RowSource + ?Sized>(
    weights: &EmbeddingMatrix,
    bank: &B,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult, ProjectionError> {
    cfg.validate()?;
    let dim = weights.dim();
    if bank.dim() != dim {
        return Err(ProjectionError::Dim {
            weights: dim,
            bank: bank.dim(),
        });
    }
    if bank.rows() == 0 {
        return Err(ProjectionError::EmptyBank);
    }
    let queries = unit_queries(weights)?;
    let mut states: Vec<Accumulator> = (0..queries.len()).map(|_| Accumulator::new(dim)).collect();
    let inv_tau = 1.0 / cfg.temperature;
    let mode = cfg.mode;

    bank.visit_chunks::<ProjectionError>(cfg.bank_chunk, &mut |start, chunk| {
        let prepared = prepare_chunk(start, chunk, dim)?;
        states
            .par_iter_mut()
            .zip(queries.par_iter())
            .for_each(|(acc, q)| {
                let logits: Vec<f64> = prepared.rows.iter().map(|e| dot64(q, e) * inv_tau).collect();
                let chunk_max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                acc.rescale_to(chunk_max);
                for ((l, e), &n) in logits.iter().zip(&prepared.rows).zip(&prepared.norms) {
                    let p = (l - acc.max).exp();
                    acc.weight_sum += p;
                    match mode {
                        ProjectionMode::Decoupled => {
                            acc.norm_sum += p * n;
                            let s = p / n;
                            for (v, ev) in acc.vec_sum.iter_mut().zip(e) {
                                *v += s * ev;
                            }
                        }
                        ProjectionMode::Coupled => {
                            for (v, ev) in acc.vec_sum.iter_mut().zip(e) {
                                *v += p * ev;
                            }
                        }
                    }
                }
            });
        Ok(())
    })?;

    let finished: Vec<Vec<f64>> = states.par_iter().map(|a| a.finish(mode)).collect();
    let pre_post_cosine: Vec<f64> = finished
        .iter()
        .zip(&queries)
        .map(|(p, q)| cosine64(p, q))
        .collect();
    let data: Vec<f32> = finished.iter().flatten().map(|&v| v as f32).collect();
    Ok(ProjectionResult {
        projected: EmbeddingMatrix::raw(Matrix::new(queries.len(), dim, data)?),
        pre_post_cosine,
        bank_size: bank.rows(),
    })
}

/// Bank row with the largest dot product with `w`; ties go to the lowest index.
pub fn nearest_row<B: RowSource + ?Sized>(w: &[f32], bank: &B) -> Result<(usize, f64), ProjectionError> {
    if bank.rows() == 0 {
        return Err(ProjectionError::EmptyBank);
    }
    if w.len() != bank.dim() {
        return Err(ProjectionError::Dim {
            weights: w.len(),
            bank: bank.dim(),
        });
    }
    let q: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    bank.visit_chunks::<ProjectionError>(DEFAULT_BANK_CHUNK, &mut |start, chunk| {
        for (i, r) in chunk.chunks_exact(q.len()).enumerate() {
            let d: f64 = r.iter().zip(&q).map(|(&e, qv)| e as f64 * qv).sum();
            if d > best.1 {
                best = (start + i, d);
            }
        }
        Ok(())
    })?;
    Ok(best)
}

/// One row of a convergence curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub bank_size: usize,
    /// Mean over repeats of the mean pre/post cosine.
    pub mean_cosine: f64,
    /// Population standard deviation over repeats.
    pub std_cosine: f64,
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("bank_size,mean_cosine,std_cosine\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            p.bank_size, p.mean_cosine, p.std_cosine
        ));
    }
    out
}

/// `k` distinct indices from `0..n` by a seeded partial Fisher–Yates shuffle, sorted.
pub fn sample_subset(n: usize, k: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Mean pre/post cosine as a function of bank size, over random bank subsets.
pub fn convergence_curve(
    weights: &EmbeddingMatrix,
    bank: &EmbeddingMatrix,
    cfg: &ProjectionConfig,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, ProjectionError> {
    if repeats == 0 {
        return Err(ProjectionError::Repeats);
    }
    for &k in sizes {
        if k == 0 || k > bank.rows() {
            return Err(ProjectionError::SubsetSize {
                size: k,
                bank: bank.rows(),
            });
        }
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let mut means = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = rng::indexed_substream(seed, &format!("convergence/{k}"), r as u64);
            let subset = sample_subset(bank.rows(), k, &mut rng);
            let sub = bank.select_rows(&subset);
            means.push(project(weights, &sub, cfg)?.mean_cosine());
        }
        let mean = means.iter().sum::<f64>() / repeats as f64;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / repeats as f64;
        out.push(CurvePoint {
            bank_size: k,
            mean_cosine: mean,
            std_cosine: var.sqrt(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn unit(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap().normalize_rows().unwrap()
    }

    #[test]
    fn singleton_scores_one() {
        let s = score(&[1.0, 0.0], &bank(&[&[0.3, 0.7]]), 0.1).unwrap();
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn two_row_score_example() {
        let s = score(&[1.0, 0.0], &bank(&[&[2.0, 0.0], &[0.0, 1.0]]), 1.0).unwrap();
        let e2 = 2.0f64.exp();
        assert!((s[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((s[1] - 1.0 / (e2 + 1.0)).abs() < 1e-12);
        assert!((s[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn duplicate_rows_share_score() {
        let s = score(&[0.6, 0.8], &bank(&[&[1.0, 2.0], &[3.0, -1.0], &[1.0, 2.0]]), 0.05).unwrap();
        assert_eq!(s[0], s[2]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_errors() {
        let b = bank(&[&[1.0, 0.0]]);
        assert!(matches!(score(&[1.0, 0.0], &b, 0.0), Err(ProjectionError::Temperature(_))));
        assert!(matches!(score(&[2.0, 0.0], &b, 1.0), Err(ProjectionError::NotUnitNorm(_))));
        let empty = EmbeddingMatrix::raw(Matrix::new(0, 2, vec![]).unwrap());
        assert!(matches!(score(&[1.0, 0.0], &empty, 1.0), Err(ProjectionError::EmptyBank)));
    }

    #[test]
    fn no_overflow_at_default_temperature() {
        // logits of 1500 would overflow a naive exp
        let s = score(&[1.0, 0.0], &bank(&[&[10.0, 0.0], &[9.0, 0.0]]), DEFAULT_TEMPERATURE).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_bank_projects_to_itself() {
        let w = unit(&[&[1.0, 0.0], &[0.2, -0.9]]);
        let b = bank(&[&[0.5, 2.0]]);
        for mode in [ProjectionMode::Decoupled, ProjectionMode::Coupled] {
            let cfg = ProjectionConfig { mode, ..Default::default() };
            let r = project(&w, &b, &cfg).unwrap();
            for i in 0..2 {
                assert!((r.projected.row(i)[0] - 0.5).abs() < 1e-6);
                assert!((r.projected.row(i)[1] - 2.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_row_decoupled_example() {
        let w = unit(&[&[1.0, 0.0]]);
        let b = bank(&[&[2.0, 0.0], &[0.0, 1.0]]);
        let cfg = ProjectionConfig {
            temperature: 1.0,
            ..Default::default()
        };
        let r = project(&w, &b, &cfg).unwrap();
        let e2 = 2.0f64.exp();
        let (s1, s2) = (e2 / (e2 + 1.0), 1.0 / (e2 + 1.0));
        let norm = 2.0 * s1 + s2;
        assert!((r.projected.row(0)[0] as f64 - norm * s1).abs() < 1e-6);
        assert!((r.projected.row(0)[1] as f64 - norm * s2).abs() < 1e-6);
        assert!((r.projected.row(0)[0] - 1.6566).abs() < 1e-4);
        assert!((r.projected.row(0)[1] - 0.2242).abs() < 1e-4);
    }

    #[test]
    fn equal_norm_bank_modes_agree() {
        let w = unit(&[&[1.0, 0.3, -0.2], &[-0.1, 0.5, 0.9]]);
        let b = unit(&[&[1.0, 1.0, 0.0], &[0.0, 1.0, -1.0], &[0.3, 0.1, 0.9], &[-1.0, 0.2, 0.2]]);
        let b = EmbeddingMatrix::raw(Matrix::new(4, 3, b.matrix().data().iter().map(|v| v * 3.0).collect()).unwrap());
        let cfg = ProjectionConfig {
            temperature: 0.3,
            ..Default::default()
        };
        let d = project(&w, &b, &cfg).unwrap();
        let c = project(&w, &b, &ProjectionConfig { mode: ProjectionMode::Coupled, ..cfg }).unwrap();
        for (x, y) in d.projected.matrix().data().iter().zip(c.projected.matrix().data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_bank_row_named() {
        let w = unit(&[&[1.0, 0.0]]);
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let cfg = ProjectionConfig {
            bank_chunk: 2,
            ..Default::default()
        };
        assert!(matches!(project(&w, &b, &cfg), Err(ProjectionError::ZeroBankRow { row: 2 })));
    }

    #[test]
    fn dim_mismatch() {
        let w = unit(&[&[1.0, 0.0]]);
        let b = bank(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            project(&w, &b, &ProjectionConfig::default()),
            Err(ProjectionError::Dim { .. })
        ));
    }

    #[test]
    fn unflagged_weights_are_normalized() {
        let w = EmbeddingMatrix::from_rows(&[[3.0f32, 0.0]]).unwrap();
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let cfg = ProjectionConfig {
            temperature: 1.0,
            ..Default::default()
        };
        let a = project(&w, &b, &cfg).unwrap();
        let n = project(&w.normalize_rows().unwrap(), &b, &cfg).unwrap();
        assert_eq!(a, n);
    }

    #[test]
    fn nearest_row_basis_and_ties() {
        let b = bank(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(nearest_row(&[0.0, 1.0, 0.0], &b).unwrap(), (1, 1.0));
        let b = bank(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(nearest_row(&[1.0, 0.0], &b).unwrap().0, 1);
        let empty = EmbeddingMatrix::raw(Matrix::new(0, 2, vec![]).unwrap());
        assert!(matches!(nearest_row(&[1.0, 0.0], &empty), Err(ProjectionError::EmptyBank)));
    }

    #[test]
    fn curve_full_bank_single_repeat_has_no_spread() {
        let w = unit(&[&[1.0, 0.2], &[0.1, -1.0]]);
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let pts = convergence_curve(&w, &b, &ProjectionConfig::default(), &[3], 1, 9).unwrap();
        assert_eq!(pts[0].std_cosine, 0.0);
        assert!(matches!(
            convergence_curve(&w, &b, &ProjectionConfig::default(), &[0], 1, 9),
            Err(ProjectionError::SubsetSize { size: 0, .. })
        ));
        assert!(matches!(
            convergence_curve(&w, &b, &ProjectionConfig::default(), &[4], 1, 9),
            Err(ProjectionError::SubsetSize { size: 4, .. })
        ));
    }

    #[test]
    fn subset_sampling_is_seeded_and_distinct() {
        let a = sample_subset(100, 10, &mut rng::substream(1, "x"));
        let b = sample_subset(100, 10, &mut rng::substream(1, "x"));
        assert_eq!(a, b);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
    }
}
