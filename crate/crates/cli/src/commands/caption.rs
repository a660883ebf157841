//! `scuba caption`: optimal embeddings → best-of-R projection → retrieval.

use scuba_core::caption_retrieval::{best_of_r_with_projections, CaptionBank};
use scuba_core::encoder::{optimal_embeddings_filtered, VoxelEncoder};
use scuba_core::tensor_io::{open_matrix, MatrixHandle};

use crate::commands::fit::ENCODER_DIR;
use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::manifest::Outputs;

pub const CAPTIONS_TSV: &str = "captions/voxel_captions.tsv";
pub const CANDIDATES_JSON: &str = "captions/candidates.json";
pub const PROJECTION_CSV: &str = "captions/projection.csv";
/// Chosen projected weight per captioned voxel, rows in TSV order.
pub const PROJECTED: &str = "captions/projected.bscb";
pub const MANIFEST: &str = "caption_manifest.json";

pub fn load_encoder(loaded: &Loaded) -> CliResult<VoxelEncoder> {
    let dir = loaded.output_dir().join(ENCODER_DIR);
    if !dir.join(VoxelEncoder::FILES[0]).is_file() {
        return Err(CliError::config(format!(
            "no encoder in {}; run `scuba fit` first",
            dir.display()
        )));
    }
    Ok(VoxelEncoder::load(&dir)?)
}

pub fn run(loaded: &mut Loaded) -> CliResult<()> {
    let data = loaded.config.data.clone();
    let caption_cfg = loaded.config.caption.clone();
    let proj_cfg = loaded.config.projection.clone();
    proj_cfg.validate()?;
    if caption_cfg.k == 0 {
        return Err(CliError::config("caption.k must be at least 1"));
    }
    let captions_path = loaded.require("data.captions", &data.captions)?;
    let cap_emb_path = loaded.require("data.caption_embeddings", &data.caption_embeddings)?;
    if data.banks.is_empty() {
        return Err(CliError::config("missing required config key `data.banks`"));
    }
    let repeats = caption_cfg.repeats.unwrap_or(data.banks.len());
    if repeats == 0 || repeats > data.banks.len() {
        return Err(CliError::config(format!(
            "caption.repeats = {repeats} but {} bank(s) are configured",
            data.banks.len()
        )));
    }
    let bank_paths = data.banks[..repeats]
        .iter()
        .enumerate()
        .map(|(r, p)| loaded.existing(&format!("data.banks[{r}]"), p).map(|q| (p.clone(), q)))
        .collect::<CliResult<Vec<_>>>()?;

    let enc = load_encoder(loaded)?;
    let mut out = Outputs::new(loaded.output_dir())?;
    out.input("captions", data.captions.as_ref().unwrap(), &captions_path)?;
    out.input("caption_embeddings", data.caption_embeddings.as_ref().unwrap(), &cap_emb_path)?;
    for (r, (configured, resolved)) in bank_paths.iter().enumerate() {
        out.input(&format!("bank_{r}"), configured, resolved)?;
    }

    let caption_bank = CaptionBank::load(&captions_path, &cap_emb_path)?;
    let threshold = loaded.stream_threshold();
    let banks = bank_paths
        .iter()
        .map(|(_, p)| {
            let h = open_matrix(p, threshold).map_err(|e| CliError::from(e).context(p.display()))?;
            if !h.header_unit_norm() {
                log::debug!("{}: bank rows are not flagged unit-norm", p.display());
            }
            Ok(h)
        })
        .collect::<CliResult<Vec<MatrixHandle>>>()?;

    let (opt, excluded) = optimal_embeddings_filtered(&enc)?;
    if opt.voxel_ids.is_empty() {
        return Err(CliError::numeric("every voxel has a zero weight vector"));
    }
    if !excluded.is_empty() {
        log::warn!("voxels without captions (zero weights): {excluded:?}");
    }
    let result = best_of_r_with_projections(&opt.embeddings, &banks, &caption_bank, &proj_cfg, caption_cfg.k)?;
    let (projected, cosines) = result.chosen_projection()?;
    let captions = result.captions.normalized().relabel(&opt.voxel_ids)?;

    out.write_text(CAPTIONS_TSV, &captions.to_tsv())?;
    out.write_text(CANDIDATES_JSON, &(captions.to_json() + "\n"))?;
    let mut csv = String::from("voxel_id,chosen_repeat,pre_post_cosine\n");
    for (v, c) in captions.voxels.iter().zip(&cosines) {
        csv.push_str(&format!("{},{},{c:.6}\n", v.voxel_id, v.chosen_repeat.unwrap_or(0)));
    }
    out.write_text(PROJECTION_CSV, &csv)?;
    out.write_with(PROJECTED, |p| projected.save(p))?;
    log::info!(
        "captioned {} voxels from {} caption(s) with best of {repeats}",
        captions.len(),
        caption_bank.len()
    );
    out.finish(MANIFEST, "caption", loaded)
}
