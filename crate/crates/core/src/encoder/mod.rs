//! Voxel-wise linear encoder: unit-norm image embedding → voxel activations.
//!
//! The encoder computes `B = x·W + b` with `x` a unit-norm embedding row,
//! `W` an M×N weight matrix and `b` a length-N bias. Because `x` lives on
//! the unit sphere, the activation of voxel `i` is maximized by the
//! direction of column `W_i` and never exceeds `‖W_i‖₂ + b_i`.

mod eval;
mod fit;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor_io::{row_norm, ActivationMatrix, EmbeddingMatrix, IoError, Matrix};

pub use eval::{evaluate_r2, fit_stability, FitReport, StabilityReport};
pub use fit::fit;

/// Weight columns with a norm below this have no defined optimal embedding.
pub const MIN_WEIGHT_NORM: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("embedding rows must be unit-norm (flag unset)")]
    NotUnitNorm,
    #[error("need at least {needed} stimuli, got {found}")]
    TooFewStimuli { needed: usize, found: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("Gram matrix is singular with ridge lambda = {lambda}; use lambda > 0")]
    Singular { lambda: f64 },
    #[error("voxels {voxels:?} have (near-)zero weight columns; optimal embedding undefined")]
    ZeroWeightColumns { voxels: Vec<usize> },
    #[error("non-finite value produced during fitting")]
    NonFinite,
    #[error("invalid fit config: {0}")]
    Config(String),
    #[error("fit metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// AdamW minibatch regime used by the iterative fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr_start: 3e-4,
            lr_end: 1.5e-4,
            weight_decay: 2e-2,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitConfig {
    /// Ridge regression via the normal equations. `lambda: None` means `1e-6 · T`.
    ClosedForm {
        #[serde(default)]
        lambda: Option<f64>,
    },
    Iterative(AdamConfig),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig::ClosedForm { lambda: None }
    }
}

impl FitConfig {
    pub fn default_lambda(stimuli: usize) -> f64 {
        1e-6 * stimuli as f64
    }
}

/// Provenance of a fitted encoder; written as the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    /// The configuration with defaults resolved (e.g. the ridge lambda actually used).
    pub config: FitConfig,
    pub stimuli: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelEncoder {
    /// M×N, column `i` belongs to voxel `i`.
    weight: Matrix,
    bias: Vec<f32>,
    meta: FitMeta,
}

impl VoxelEncoder {
    pub fn new(weight: Matrix, bias: Vec<f32>, meta: FitMeta) -> Result<Self, EncoderError> {
        if weight.cols() != bias.len() {
            return Err(EncoderError::Shape(format!(
                "weight has {} columns but bias has {} entries",
                weight.cols(),
                bias.len()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self { weight, bias, meta })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn voxels(&self) -> usize {
        self.weight.cols()
    }

    /// Column `voxel` of W in `f64`.
    pub fn weight_column(&self, voxel: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|m| self.weight.get(m, voxel) as f64)
            .collect()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0f64; self.voxels()];
        for row in self.weight.iter_rows() {
            for (acc, &w) in sq.iter_mut().zip(row) {
                *acc += w as f64 * w as f64;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Predicted activations for unit-norm stimulus embeddings.
    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<ActivationMatrix, EncoderError> {
        if !x.is_unit_norm() {
            return Err(EncoderError::NotUnitNorm);
        }
        Ok(ActivationMatrix::raw(self.predict_raw(x.matrix())?))
    }

    /// The affine map `x·W + b` on arbitrary rows, without the unit-norm check.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Matrix, EncoderError> {
        if x.cols() != self.dim() {
            return Err(EncoderError::Shape(format!(
                "embedding dim {} != encoder dim {}",
                x.cols(),
                self.dim()
            )));
        }
        let n = self.voxels();
        let mut out = vec![0.0f32; x.rows() * n];
        out.par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(s, out_row)| {
                let acc = self.predict_row(x.row(s));
                for (o, a) in out_row.iter_mut().zip(acc) {
                    *o = a as f32;
                }
            });
        Ok(Matrix::new(x.rows(), n, out)?)
    }

    /// One stimulus, accumulated in `f64` in a fixed order.
    pub fn predict_row(&self, x: &[f32]) -> Vec<f64> {
        let mut acc: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for (&xm, wrow) in x.iter().zip(self.weight.iter_rows()) {
            let xm = xm as f64;
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += xm * w as f64;
            }
        }
        acc
    }

    /// File names written by [`save`](Self::save).
    pub const FILES: [&'static str; 3] = ["weight.bscb", "bias.bscb", "fit_meta.json"];

    /// Writes `weight.bscb` (M×N), `bias.bscb` (1×N) and `fit_meta.json` into
    /// `dir`, creating it if missing.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), EncoderError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        crate::tensor_io::save_matrix(dir.join("weight.bscb"), &self.weight, 0)?;
        let bias = Matrix::new(1, self.bias.len(), self.bias.clone())?;
        crate::tensor_io::save_matrix(dir.join("bias.bscb"), &bias, 0)?;
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| EncoderError::Meta(e.to_string()))?;
        let path = dir.join("fit_meta.json");
        std::fs::write(&path, json + "\n").map_err(|source| IoError::Io { path, source })?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let dir = dir.as_ref();
        let (weight, _) = crate::tensor_io::load_matrix(dir.join("weight.bscb"))?;
        let (bias, _) = crate::tensor_io::load_matrix(dir.join("bias.bscb"))?;
        if bias.rows() != 1 {
            return Err(IoError::NotAVector { rows: bias.rows() }.into());
        }
        let path = dir.join("fit_meta.json");
        let text = std::fs::read_to_string(&path).map_err(|source| IoError::Io { path, source })?;
        let meta: FitMeta =
            serde_json::from_str(&text).map_err(|e| EncoderError::Meta(e.to_string()))?;
        VoxelEncoder::new(weight, bias.into_data(), meta)
    }
}

/// Unit-norm maximizing embeddings for a set of voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalEmbeddings {
    /// Encoder voxel index of each row.
    pub voxel_ids: Vec<usize>,
    /// Row `r` is `W_i / ‖W_i‖₂` for `i = voxel_ids[r]`.
    pub embeddings: EmbeddingMatrix,
    /// `‖W_i‖₂ + b_i`, the largest activation any unit-norm input can produce.
    pub max_activation: Vec<f64>,
}

/// Optimal embedding of every voxel. Fails if any weight column is (near) zero.
pub fn optimal_embeddings(enc: &VoxelEncoder) -> Result<OptimalEmbeddings, EncoderError> {
    let (opt, excluded) = optimal_embeddings_filtered(enc)?;
    if !excluded.is_empty() {
        return Err(EncoderError::ZeroWeightColumns { voxels: excluded });
    }
    Ok(opt)
}

/// Like [`optimal_embeddings`] but skips degenerate voxels and returns their indices.
pub fn optimal_embeddings_filtered(
    enc: &VoxelEncoder,
) -> Result<(OptimalEmbeddings, Vec<usize>), EncoderError> {
    let norms = enc.column_norms();
    let (kept, excluded): (Vec<usize>, Vec<usize>) =
        (0..enc.voxels()).partition(|&i| norms[i] >= MIN_WEIGHT_NORM);
    if !excluded.is_empty() {
        log::warn!(
            "{} voxel(s) with weight norm < {MIN_WEIGHT_NORM:e} excluded",
            excluded.len()
        );
    }
    let m = enc.dim();
    let mut data = Vec::with_capacity(kept.len() * m);
    let mut max_activation = Vec::with_capacity(kept.len());
    for &i in &kept {
        let col = enc.weight_column(i);
        let n = norms[i];
        data.extend(col.iter().map(|&w| (w / n) as f32));
        max_activation.push(n + enc.bias[i] as f64);
    }
    let matrix = Matrix::new(kept.len(), m, data)?;
    // f32 rounding keeps rows within the unit-norm tolerance
    debug_assert!(matrix
        .iter_rows()
        .all(|r| (row_norm(r) - 1.0).abs() < 1e-6));
    Ok((
        OptimalEmbeddings {
            voxel_ids: kept,
            embeddings: EmbeddingMatrix::new(matrix, true)?,
            max_activation,
        },
        excluded,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder(weight: Matrix, bias: Vec<f32>) -> VoxelEncoder {
        VoxelEncoder::new(
            weight,
            bias,
            FitMeta {
                config: FitConfig::default(),
                stimuli: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn predict_dot_product() {
        let enc = encoder(Matrix::new(2, 1, vec![3.0, 4.0]).unwrap(), vec![0.0]);
        let x = EmbeddingMatrix::new(Matrix::new(1, 2, vec![0.6, 0.8]).unwrap(), true).unwrap();
        let y = enc.predict(&x).unwrap();
        // 0.6·3 + 0.8·4 = 1.8 + 3.2
        assert!((y.get(0, 0) - 5.0).abs() < 1e-5);
    }

    #[test]
    fn predict_requires_unit_norm_flag() {
        let enc = encoder(Matrix::new(2, 1, vec![3.0, 4.0]).unwrap(), vec![0.0]);
        let x = EmbeddingMatrix::from_rows(&[[0.6f32, 0.8]]).unwrap();
        assert!(matches!(enc.predict(&x), Err(EncoderError::NotUnitNorm)));
    }

    #[test]
    fn predict_dim_mismatch() {
        let enc = encoder(Matrix::new(2, 1, vec![3.0, 4.0]).unwrap(), vec![0.0]);
        let x = EmbeddingMatrix::new(Matrix::new(1, 1, vec![1.0]).unwrap(), true).unwrap();
        assert!(matches!(enc.predict(&x), Err(EncoderError::Shape(_))));
    }

    #[test]
    fn optimal_embedding_three_four_five() {
        let enc = encoder(Matrix::new(2, 1, vec![3.0, 4.0]).unwrap(), vec![0.1]);
        let opt = optimal_embeddings(&enc).unwrap();
        assert!((opt.embeddings.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((opt.embeddings.row(0)[1] - 0.8).abs() < 1e-7);
        assert!((opt.max_activation[0] - 5.1).abs() < 1e-6);
        let pred = enc.predict(&opt.embeddings).unwrap();
        assert!((pred.get(0, 0) as f64 - opt.max_activation[0]).abs() < 1e-5);
    }

    #[test]
    fn optimum_dominates_random_unit_probes() {
        let p = crate::synth::planted_linear(8, 16, 12, 1.0, None, 4).unwrap();
        let enc = encoder(p.weight, p.bias);
        let opt = optimal_embeddings(&enc).unwrap();
        let at_opt = enc.predict(&opt.embeddings).unwrap();
        let mut rng = crate::rng::substream(4, "test/probes");
        let probes: Vec<Vec<f32>> = (0..2000)
            .map(|_| {
                crate::synth::random_unit(&mut rng, 16)
                    .into_iter()
                    .map(|v| v as f32)
                    .collect()
            })
            .collect();
        let probes = EmbeddingMatrix::new(Matrix::from_rows(&probes).unwrap(), true).unwrap();
        let pred = enc.predict(&probes).unwrap();
        for (r, &v) in opt.voxel_ids.iter().enumerate() {
            assert!((at_opt.get(r, v) as f64 - opt.max_activation[r]).abs() < 1e-5);
            for s in 0..probes.rows() {
                assert!(pred.get(s, v) as f64 <= opt.max_activation[r] + 1e-5);
            }
        }
    }

    #[test]
    fn zero_columns_listed() {
        let w = Matrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let enc = encoder(w, vec![0.0; 3]);
        match optimal_embeddings(&enc) {
            Err(EncoderError::ZeroWeightColumns { voxels }) => assert_eq!(voxels, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
        let (opt, excluded) = optimal_embeddings_filtered(&enc).unwrap();
        assert_eq!(opt.voxel_ids, vec![0, 2]);
        assert_eq!(excluded, vec![1]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = encoder(
            Matrix::new(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap(),
            vec![0.25, -1.0],
        );
        enc.save(dir.path()).unwrap();
        assert_eq!(VoxelEncoder::load(dir.path()).unwrap(), enc);
    }

    #[test]
    fn fit_config_json_shape() {
        let cfg: FitConfig = serde_json::from_str(r#"{"method":"closed_form"}"#).unwrap();
        assert_eq!(cfg, FitConfig::ClosedForm { lambda: None });
        let cfg: FitConfig =
            serde_json::from_str(r#"{"method":"iterative","batch_size":16}"#).unwrap();
        match cfg {
            FitConfig::Iterative(a) => {
                assert_eq!(a.batch_size, 16);
                assert_eq!(a.epochs, 100);
            }
            _ => panic!(),
        }
    }
}
