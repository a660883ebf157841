use rand::seq::SliceRandom;

use super::{fit, EncoderError, FitConfig, VoxelEncoder};
use crate::linalg::cosine64;
use crate::rng;
use crate::tensor_io::{ActivationMatrix, EmbeddingMatrix};

/// Held-out fit quality.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Per-voxel R². `None` where the test activations have zero variance.
    pub r2: Vec<Option<f64>>,
    /// Mean squared error over all (stimulus, voxel) pairs.
    pub mse: f64,
}

impl FitReport {
    /// Voxels whose R² is undefined.
    pub fn undefined_voxels(&self) -> Vec<usize> {
        self.r2
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_none().then_some(i))
            .collect()
    }

    /// `voxel_id,r2` CSV; undefined values are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("voxel_id,r2\n");
        for (i, r) in self.r2.iter().enumerate() {
            match r {
                Some(v) => out.push_str(&format!("{i},{v:.6}\n")),
                None => out.push_str(&format!("{i},NaN\n")),
            }
        }
        out
    }
}

/// `R² = 1 − SS_res / SS_tot` per voxel, with `SS_tot` taken around the
/// test-set mean of each voxel.
pub fn evaluate_r2(
    enc: &VoxelEncoder,
    x: &EmbeddingMatrix,
    y: &ActivationMatrix,
) -> Result<FitReport, EncoderError> {
    if x.rows() != y.stimuli() || y.voxels() != enc.voxels() {
        return Err(EncoderError::Shape(format!(
            "{} embeddings / {}x{} activations vs encoder with {} voxels",
            x.rows(),
            y.stimuli(),
            y.voxels(),
            enc.voxels()
        )));
    }
    let pred = enc.predict(x)?;
    let n = enc.voxels();
    let t = y.stimuli();
    let mut mean = vec![0.0f64; n];
    for s in 0..t {
        for (v, m) in mean.iter_mut().enumerate() {
            *m += y.get(s, v) as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut ss_res = vec![0.0f64; n];
    let mut ss_tot = vec![0.0f64; n];
    for s in 0..t {
        for v in 0..n {
            let obs = y.get(s, v) as f64;
            let e = obs - pred.get(s, v) as f64;
            let d = obs - mean[v];
            ss_res[v] += e * e;
            ss_tot[v] += d * d;
        }
    }
    let r2 = ss_res
        .iter()
        .zip(&ss_tot)
        .map(|(&res, &tot)| (tot > 0.0).then(|| 1.0 - res / tot))
        .collect::<Vec<_>>();
    let undefined = r2.iter().filter(|r| r.is_none()).count();
    if undefined > 0 {
        log::warn!("{undefined} voxel(s) have zero test variance; R² undefined");
    }
    let mse = ss_res.iter().sum::<f64>() / (t * n).max(1) as f64;
    Ok(FitReport { r2, mse })
}

/// Agreement of weight vectors across k-fold refits.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub folds: usize,
    /// Per voxel: mean cosine over all non-self pairs of fold weights.
    pub mean_pairwise_cosine: Vec<f64>,
    /// Per voxel: largest cosine distance (1 − cos) over any pair of folds.
    pub max_pairwise_distance: Vec<f64>,
}

impl StabilityReport {
    pub fn average_cosine(&self) -> f64 {
        mean(&self.mean_pairwise_cosine)
    }

    pub fn average_max_distance(&self) -> f64 {
        mean(&self.max_pairwise_distance)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Refits the encoder on each fold's training portion and compares weights.
///
/// Stimuli are assigned to `folds` contiguous blocks of a seeded permutation;
/// fold `k` trains on everything outside block `k`. In iterative mode each
/// fold also draws its own initialization.
pub fn fit_stability(
    x: &EmbeddingMatrix,
    y: &ActivationMatrix,
    cfg: &FitConfig,
    folds: usize,
    seed: u64,
) -> Result<StabilityReport, EncoderError> {
    if folds < 2 {
        return Err(EncoderError::TooFewFolds(folds));
    }
    let t = x.rows();
    if t < folds {
        return Err(EncoderError::TooFewStimuli {
            needed: folds,
            found: t,
        });
    }
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut rng::substream(seed, "stability/folds"));

    let mut encoders: Vec<VoxelEncoder> = Vec::with_capacity(folds);
    for k in 0..folds {
        let lo = k * t / folds;
        let hi = (k + 1) * t / folds;
        let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
        train.sort_unstable();
        let xk = EmbeddingMatrix::new(x.matrix().select_rows(&train), x.is_unit_norm())?;
        let yk = y.select_stimuli(&train);
        let fold_cfg = match cfg {
            FitConfig::Iterative(a) => {
                let mut a = a.clone();
                a.seed = rand::Rng::random(&mut rng::indexed_substream(
                    seed,
                    "stability/init",
                    k as u64,
                ));
                FitConfig::Iterative(a)
            }
            other => other.clone(),
        };
        encoders.push(fit(&xk, &yk, &fold_cfg)?);
    }

    let n = y.voxels();
    let mut mean_cos = Vec::with_capacity(n);
    let mut max_dist = Vec::with_capacity(n);
    for v in 0..n {
        let cols: Vec<Vec<f64>> = encoders.iter().map(|e| e.weight_column(v)).collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        let mut worst = 0.0f64;
        for i in 0..folds {
            for j in (i + 1)..folds {
                let c = cosine64(&cols[i], &cols[j]);
                sum += c;
                pairs += 1;
                worst = worst.max(1.0 - c);
            }
        }
        mean_cos.push(sum / pairs as f64);
        max_dist.push(worst);
    }
    Ok(StabilityReport {
        folds,
        mean_pairwise_cosine: mean_cos,
        max_pairwise_distance: max_dist,
    })
}
