use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{AdamConfig, EncoderError, FitConfig, FitMeta, VoxelEncoder};
use crate::rng;
use crate::tensor_io::{ActivationMatrix, EmbeddingMatrix, Matrix};

/// Relative pivot size below which the Cholesky factor is treated as singular.
const PIVOT_RTOL: f64 = 1e-12;

/// Fits a voxel encoder on T unit-norm embeddings and their T×N activations.
pub fn fit(
    x: &EmbeddingMatrix,
    y: &ActivationMatrix,
    cfg: &FitConfig,
) -> Result<VoxelEncoder, EncoderError> {
    if x.rows() != y.stimuli() {
        return Err(EncoderError::Shape(format!(
            "{} embedding rows vs {} activation stimuli",
            x.rows(),
            y.stimuli()
        )));
    }
    if !x.is_unit_norm() {
        return Err(EncoderError::NotUnitNorm);
    }
    if x.rows() < 2 {
        return Err(EncoderError::TooFewStimuli {
            needed: 2,
            found: x.rows(),
        });
    }
    let t = x.rows();
    match cfg {
        FitConfig::ClosedForm { lambda } => {
            let lambda = lambda.unwrap_or_else(|| FitConfig::default_lambda(t));
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(EncoderError::Config(format!("lambda must be >= 0, got {lambda}")));
            }
            let (weight, bias) = ridge(x.matrix(), y.matrix(), lambda)?;
            let meta = FitMeta {
                config: FitConfig::ClosedForm {
                    lambda: Some(lambda),
                },
                stimuli: t,
            };
            VoxelEncoder::new(weight, bias, meta)
        }
        FitConfig::Iterative(adam) => {
            validate_adam(adam)?;
            let (weight, bias) = adamw(x.matrix(), y.matrix(), adam)?;
            let meta = FitMeta {
                config: cfg.clone(),
                stimuli: t,
            };
            VoxelEncoder::new(weight, bias, meta)
        }
    }
}

fn validate_adam(a: &AdamConfig) -> Result<(), EncoderError> {
    let bad = |msg: &str| Err(EncoderError::Config(msg.to_string()));
    if a.epochs == 0 {
        return bad("epochs must be >= 1");
    }
    if a.batch_size == 0 {
        return bad("batch_size must be >= 1");
    }
    if !(a.lr_start > 0.0 && a.lr_end > 0.0) {
        return bad("learning rates must be > 0");
    }
    if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
        return bad("betas must lie in [0, 1)");
    }
    if a.weight_decay < 0.0 || a.eps <= 0.0 {
        return bad("weight_decay must be >= 0 and eps > 0");
    }
    Ok(())
}

/// Ridge regression with an unpenalized intercept, solved on centered data:
/// `(XcᵀXc + λI) W = XcᵀYc`, `b = ȳ − x̄ᵀW`.
fn ridge(x: &Matrix, y: &Matrix, lambda: f64) -> Result<(Matrix, Vec<f32>), EncoderError> {
    let m = x.cols();
    let n = y.cols();
    let x_mean = column_means(x);
    let y_mean = column_means(y);

    let centered: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&x_mean).map(|(&v, mu)| v as f64 - mu).collect())
        .collect();

    let mut gram = vec![0.0f64; m * m];
    for row in &centered {
        for i in 0..m {
            let ri = row[i];
            let g = &mut gram[i * m..(i + 1) * m];
            for (gij, &rj) in g.iter_mut().zip(row) {
                *gij += ri * rj;
            }
        }
    }
    for i in 0..m {
        gram[i * m + i] += lambda;
    }
    let max_diag = (0..m).map(|i| gram[i * m + i]).fold(0.0f64, f64::max);
    let chol = DMatrix::from_row_slice(m, m, &gram)
        .cholesky()
        .ok_or(EncoderError::Singular { lambda })?;
    let l = chol.l_dirty();
    let min_pivot = (0..m).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if max_diag == 0.0 || min_pivot < PIVOT_RTOL * max_diag {
        return Err(EncoderError::Singular { lambda });
    }

    // Per voxel: XcᵀYc column, solve, intercept. Voxels are independent.
    let solved: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut rhs = vec![0.0f64; m];
            for (s, row) in centered.iter().enumerate() {
                let yc = y.get(s, v) as f64 - y_mean[v];
                for (acc, &xv) in rhs.iter_mut().zip(row) {
                    *acc += xv * yc;
                }
            }
            let w = chol.solve(&DVector::from_vec(rhs));
            let b = y_mean[v] - w.iter().zip(&x_mean).map(|(wi, mi)| wi * mi).sum::<f64>();
            (w.as_slice().to_vec(), b)
        })
        .collect();
    assemble(m, n, solved)
}

fn assemble(m: usize, n: usize, cols: Vec<(Vec<f64>, f64)>) -> Result<(Matrix, Vec<f32>), EncoderError> {
    let mut weight = vec![0.0f32; m * n];
    let mut bias = vec![0.0f32; n];
    for (v, (w, b)) in cols.into_iter().enumerate() {
        if !b.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        for (i, wi) in w.into_iter().enumerate() {
            weight[i * n + v] = wi as f32;
        }
        bias[v] = b as f32;
    }
    Ok((Matrix::new(m, n, weight)?, bias))
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.cols()];
    for row in m.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = m.rows() as f64;
    acc.into_iter().map(|a| a / n).collect()
}

/// Learning rate for `epoch` (0-based): exponential decay from `lr_start`
/// at the first epoch to `lr_end` at the last.
pub(crate) fn epoch_lr(a: &AdamConfig, epoch: usize) -> f64 {
    if a.epochs <= 1 {
        return a.lr_start;
    }
    let frac = epoch as f64 / (a.epochs - 1) as f64;
    a.lr_start * (a.lr_end / a.lr_start).powf(frac)
}

/// Minibatch AdamW on the mean squared error over all (stimulus, voxel) pairs.
///
/// The loss separates across voxels and Adam's moments are per parameter, so
/// each voxel column is trained independently over a shared batch schedule.
fn adamw(x: &Matrix, y: &Matrix, a: &AdamConfig) -> Result<(Matrix, Vec<f32>), EncoderError> {
    let t = x.rows();
    let m = x.cols();
    let n = y.cols();

    // Linear-layer default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    let mut init_rng = rng::substream(a.seed, "fit/init");
    let bound = 1.0 / (m as f64).sqrt();
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| init_rng.random_range(-bound..bound)).collect())
        .collect();
    let biases: Vec<f64> = (0..n).map(|_| init_rng.random_range(-bound..bound)).collect();
    let init: Vec<(Vec<f64>, f64)> = weights.into_iter().zip(biases).collect();

    let mut order_rng = rng::substream(a.seed, "fit/shuffle");
    let mut schedule: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut idx: Vec<usize> = (0..t).collect();
    for epoch in 0..a.epochs {
        let lr = epoch_lr(a, epoch);
        idx.shuffle(&mut order_rng);
        for batch in idx.chunks(a.batch_size) {
            schedule.push((lr, batch.to_vec()));
        }
    }

    let xs: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();

    let solved: Vec<(Vec<f64>, f64)> = init
        .into_par_iter()
        .enumerate()
        .map(|(v, (mut w, mut b))| {
            let mut mw = vec![0.0f64; m];
            let mut vw = vec![0.0f64; m];
            let (mut mb, mut vb) = (0.0f64, 0.0f64);
            let mut grad = vec![0.0f64; m];
            for (step, (lr, batch)) in schedule.iter().enumerate() {
                let scale = 2.0 / (batch.len() * n) as f64;
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut gb = 0.0;
                for &s in batch {
                    let xr = &xs[s];
                    let pred: f64 = xr.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
                    let r = (pred - y.get(s, v) as f64) * scale;
                    for (g, xi) in grad.iter_mut().zip(xr) {
                        *g += r * xi;
                    }
                    gb += r;
                }
                let k = (step + 1) as i32;
                let c1 = 1.0 - a.beta1.powi(k);
                let c2 = 1.0 - a.beta2.powi(k);
                let decay = 1.0 - lr * a.weight_decay;
                for i in 0..m {
                    w[i] *= decay;
                    mw[i] = a.beta1 * mw[i] + (1.0 - a.beta1) * grad[i];
                    vw[i] = a.beta2 * vw[i] + (1.0 - a.beta2) * grad[i] * grad[i];
                    w[i] -= lr * (mw[i] / c1) / ((vw[i] / c2).sqrt() + a.eps);
                }
                b *= decay;
                mb = a.beta1 * mb + (1.0 - a.beta1) * gb;
                vb = a.beta2 * vb + (1.0 - a.beta2) * gb * gb;
                b -= lr * (mb / c1) / ((vb / c2).sqrt() + a.eps);
            }
            (w, b)
        })
        .collect();
    assemble(m, n, solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine64;
    use crate::tensor_io::Matrix;

    fn unit_rows(rows: &[[f64; 2]]) -> EmbeddingMatrix {
        let data: Vec<f32> = rows
            .iter()
            .flat_map(|r| {
                let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
                [(r[0] / n) as f32, (r[1] / n) as f32]
            })
            .collect();
        EmbeddingMatrix::new(Matrix::new(rows.len(), 2, data).unwrap(), true).unwrap()
    }

    /// Solves the 3×3 augmented normal equations [X 1]ᵀ[X 1] β = [X 1]ᵀ y by
    /// Gaussian elimination, independently of the centered Cholesky path.
    fn normal_equations_oracle(x: &EmbeddingMatrix, y: &[f64]) -> [f64; 3] {
        let mut a = [[0.0f64; 4]; 3];
        for (s, &ys) in y.iter().enumerate() {
            let r = [x.row(s)[0] as f64, x.row(s)[1] as f64, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] += r[i] * r[j];
                }
                a[i][3] += r[i] * ys;
            }
        }
        for c in 0..3 {
            let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in 0..3 {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..4 {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
    }

    #[test]
    fn planted_two_dim_model_recovered() {
        let x = unit_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]]);
        let y: Vec<f64> = (0..4)
            .map(|s| x.row(s)[0] as f64 + 2.0 * x.row(s)[1] as f64 + 0.5)
            .collect();
        let oracle = normal_equations_oracle(&x, &y);
        assert!((oracle[0] - 1.0).abs() < 1e-6 && (oracle[1] - 2.0).abs() < 1e-6);
        assert!((oracle[2] - 0.5).abs() < 1e-6);

        let ym = ActivationMatrix::raw(
            Matrix::new(4, 1, y.iter().map(|&v| v as f32).collect()).unwrap(),
        );
        let enc = fit(&x, &ym, &FitConfig::ClosedForm { lambda: Some(0.0) }).unwrap();
        assert!((enc.weight().get(0, 0) as f64 - oracle[0]).abs() < 1e-6);
        assert!((enc.weight().get(1, 0) as f64 - oracle[1]).abs() < 1e-6);
        assert!((enc.bias()[0] as f64 - oracle[2]).abs() < 1e-6);
    }

    #[test]
    fn zero_target_gives_zero_model() {
        let x = unit_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]]);
        let y = ActivationMatrix::raw(Matrix::zeros(4, 3));
        let enc = fit(&x, &y, &FitConfig::default()).unwrap();
        assert!(enc.weight().data().iter().all(|&w| w.abs() < 1e-9));
        assert!(enc.bias().iter().all(|&b| b.abs() < 1e-9));
    }

    #[test]
    fn shape_mismatch() {
        let x = unit_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let y = ActivationMatrix::raw(Matrix::zeros(2, 1));
        assert!(matches!(
            fit(&x, &y, &FitConfig::default()),
            Err(EncoderError::Shape(_))
        ));
    }

    #[test]
    fn singular_without_ridge() {
        // every stimulus identical: centered Gram is exactly zero
        let x = unit_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let y = ActivationMatrix::raw(Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            fit(&x, &y, &FitConfig::ClosedForm { lambda: Some(0.0) }),
            Err(EncoderError::Singular { .. })
        ));
        assert!(fit(&x, &y, &FitConfig::ClosedForm { lambda: Some(1e-3) }).is_ok());
    }

    #[test]
    fn requires_unit_norm_and_two_stimuli() {
        let x = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let y = ActivationMatrix::raw(Matrix::zeros(2, 1));
        assert!(matches!(
            fit(&x, &y, &FitConfig::default()),
            Err(EncoderError::NotUnitNorm)
        ));
        let x = unit_rows(&[[1.0, 0.0]]);
        let y = ActivationMatrix::raw(Matrix::zeros(1, 1));
        assert!(matches!(
            fit(&x, &y, &FitConfig::default()),
            Err(EncoderError::TooFewStimuli { .. })
        ));
    }

    #[test]
    fn lr_schedule_endpoints() {
        let a = AdamConfig::default();
        assert!((epoch_lr(&a, 0) - 3e-4).abs() < 1e-15);
        assert!((epoch_lr(&a, 99) - 1.5e-4).abs() < 1e-15);
        assert!(epoch_lr(&a, 50) < epoch_lr(&a, 49));
    }

    #[test]
    fn iterative_fit_is_seeded() {
        let x = unit_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0], [2.0, -1.0]]);
        let y = ActivationMatrix::raw(Matrix::new(5, 1, vec![1.0, 2.0, 2.1, 1.4, -0.3]).unwrap());
        let cfg = FitConfig::Iterative(AdamConfig {
            epochs: 5,
            seed: 3,
            ..Default::default()
        });
        let a = fit(&x, &y, &cfg).unwrap();
        let b = fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iterative_matches_closed_form_on_small_problem() {
        let x = unit_rows(&[
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [-1.0, 2.0],
            [2.0, -1.0],
            [-1.0, -1.0],
            [0.3, -2.0],
            [-2.0, 0.1],
        ]);
        let y: Vec<f32> = (0..8)
            .map(|s| (0.3 * x.row(s)[0] - 0.2 * x.row(s)[1] + 0.05) as f32)
            .collect();
        let y = ActivationMatrix::raw(Matrix::new(8, 1, y).unwrap());
        let cf = fit(&x, &y, &FitConfig::default()).unwrap();
        let it = fit(
            &x,
            &y,
            &FitConfig::Iterative(AdamConfig {
                epochs: 400,
                batch_size: 2,
                lr_start: 3e-3,
                lr_end: 1e-3,
                ..Default::default()
            }),
        )
        .unwrap();
        let c = cosine64(&cf.weight_column(0), &it.weight_column(0));
        assert!(c > 0.99, "cosine {c}");
    }
}
