//! `scuba fit`: encoder fit, held-out R², optional fold stability.

use scuba_core::encoder::{evaluate_r2, fit, fit_stability, FitConfig, VoxelEncoder};
use scuba_core::tensor_io::{ActivationMatrix, EmbeddingMatrix};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::manifest::Outputs;

pub const ENCODER_DIR: &str = "encoder";
pub const MANIFEST: &str = "fit_manifest.json";

/// The fit config actually used: iterative fits draw from the run seed.
pub fn effective_fit_config(loaded: &Loaded) -> FitConfig {
    match &loaded.config.fit {
        FitConfig::Iterative(a) => {
            let mut a = a.clone();
            a.seed = loaded.config.seed;
            FitConfig::Iterative(a)
        }
        other => other.clone(),
    }
}

fn load_embeddings(path: &std::path::Path, what: &str) -> CliResult<EmbeddingMatrix> {
    let x = EmbeddingMatrix::load(path).map_err(|e| CliError::from(e).context(what))?;
    if !x.is_unit_norm() {
        return Err(CliError::data(format!(
            "{what}: embeddings must be unit-norm (BSCB flag bit 0); normalize them upstream"
        )));
    }
    Ok(x)
}

pub fn run(loaded: &mut Loaded) -> CliResult<()> {
    let fit_cfg = effective_fit_config(loaded);
    loaded.config.fit = fit_cfg.clone();
    let data = loaded.config.data.clone();
    let x_path = loaded.require("data.train_embeddings", &data.train_embeddings)?;
    let y_path = loaded.require("data.train_activations", &data.train_activations)?;
    let test = match (&data.test_embeddings, &data.test_activations) {
        (Some(_), Some(_)) => Some((
            loaded.require("data.test_embeddings", &data.test_embeddings)?,
            loaded.require("data.test_activations", &data.test_activations)?,
        )),
        (None, None) => None,
        _ => {
            return Err(CliError::config(
                "data.test_embeddings and data.test_activations must be given together",
            ))
        }
    };
    let mut out = Outputs::new(loaded.output_dir())?;
    out.input("train_embeddings", data.train_embeddings.as_ref().unwrap(), &x_path)?;
    out.input("train_activations", data.train_activations.as_ref().unwrap(), &y_path)?;

    let x = load_embeddings(&x_path, "train_embeddings")?;
    let y = ActivationMatrix::load(&y_path).map_err(|e| CliError::from(e).context("train_activations"))?;
    log::info!("fitting {} stimuli x {} dims -> {} voxels", x.rows(), x.dim(), y.voxels());
    let enc = fit(&x, &y, &fit_cfg)?;
    let enc_dir = out.path(ENCODER_DIR)?;
    enc.save(&enc_dir)?;
    for f in VoxelEncoder::FILES {
        out.record(&format!("{ENCODER_DIR}/{f}"))?;
    }

    let report = match test {
        Some((tx, ty)) => {
            out.input("test_embeddings", data.test_embeddings.as_ref().unwrap(), &tx)?;
            out.input("test_activations", data.test_activations.as_ref().unwrap(), &ty)?;
            let tx = load_embeddings(&tx, "test_embeddings")?;
            let ty = ActivationMatrix::load(&ty).map_err(|e| CliError::from(e).context("test_activations"))?;
            evaluate_r2(&enc, &tx, &ty)?
        }
        None => {
            log::warn!("no test split configured; R² is computed on the training data");
            evaluate_r2(&enc, &x, &y)?
        }
    };
    out.write_text("r2.csv", &report.to_csv())?;

    if let Some(folds) = loaded.config.evaluation.stability_folds {
        let st = fit_stability(&x, &y, &fit_cfg, folds, loaded.config.seed)?;
        let mut csv = String::from("voxel_id,mean_pairwise_cosine,max_pairwise_distance\n");
        for (v, (c, d)) in st.mean_pairwise_cosine.iter().zip(&st.max_pairwise_distance).enumerate() {
            csv.push_str(&format!("{v},{c:.6},{d:.6}\n"));
        }
        out.write_text("stability.csv", &csv)?;
        log::info!(
            "{folds}-fold stability: mean pairwise cosine {:.4}, mean max distance {:.4}",
            st.average_cosine(),
            st.average_max_distance()
        );
    }
    out.finish(MANIFEST, "fit", loaded)
}
