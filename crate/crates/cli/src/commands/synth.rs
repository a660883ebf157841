//! `scuba synth`: writes a synthetic fixture and a ready-to-run config.

use std::path::PathBuf;

use scuba_core::synth::{self, generate};

use crate::config::{Loaded, RoiSpec, RunConfig};
use crate::error::CliResult;
use crate::manifest::Outputs;

pub const MANIFEST: &str = "synth_manifest.json";
/// Config written next to the fixture; its paths are relative to the fixture.
pub const RUN_CONFIG: &str = "run.toml";

fn fixture_files(banks: usize, rois: &[String]) -> Vec<String> {
    let mut files: Vec<String> = [
        synth::TRAIN_EMBEDDINGS,
        synth::TRAIN_ACTIVATIONS,
        synth::TEST_EMBEDDINGS,
        synth::TEST_ACTIVATIONS,
        synth::PLANTED_WEIGHT,
        synth::PLANTED_BIAS,
        synth::PLANTED_CSV,
        synth::CAPTIONS,
        synth::CAPTION_EMBEDDINGS,
        synth::CATEGORIES,
        synth::CATEGORY_EMBEDDINGS,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    files.extend((0..banks).map(synth::bank_file));
    files.extend(rois.iter().map(|n| synth::roi_file(n)));
    files
}

/// The config that runs fit → caption → analyze over the fixture.
pub fn fixture_run_config(source: &RunConfig, rois: &[String]) -> RunConfig {
    let p = |s: &str| Some(PathBuf::from(s));
    let mut cfg = RunConfig {
        seed: source.seed,
        synth: source.synth.clone(),
        fit: source.fit.clone(),
        projection: source.projection.clone(),
        caption: source.caption.clone(),
        evaluation: source.evaluation.clone(),
        ..RunConfig::default()
    };
    cfg.data.train_embeddings = p(synth::TRAIN_EMBEDDINGS);
    cfg.data.train_activations = p(synth::TRAIN_ACTIVATIONS);
    cfg.data.test_embeddings = p(synth::TEST_EMBEDDINGS);
    cfg.data.test_activations = p(synth::TEST_ACTIVATIONS);
    cfg.data.banks = (0..source.synth.banks).map(|r| PathBuf::from(synth::bank_file(r))).collect();
    cfg.data.captions = p(synth::CAPTIONS);
    cfg.data.caption_embeddings = p(synth::CAPTION_EMBEDDINGS);
    cfg.data.category_names = p(synth::CATEGORIES);
    cfg.data.category_embeddings = p(synth::CATEGORY_EMBEDDINGS);
    cfg.analysis = source.analysis.clone();
    cfg.analysis.rois = rois
        .iter()
        .map(|name| RoiSpec {
            name: name.clone(),
            tstat: Some(PathBuf::from(synth::roi_file(name))),
            voxels: None,
            threshold: None,
        })
        .collect();
    cfg.analysis.convergence_sizes.retain(|&s| s <= source.synth.bank_size);
    cfg
}

pub fn run(loaded: &mut Loaded) -> CliResult<()> {
    let cfg = loaded.config.synth.clone();
    let seed = loaded.config.seed;
    let fixture = generate(&cfg, seed)?;
    let mut out = Outputs::new(loaded.output_dir())?;
    fixture.write(out.root())?;
    let rois: Vec<String> = fixture.rois.iter().map(|(n, _)| n.clone()).collect();
    for f in fixture_files(cfg.banks, &rois) {
        out.record(&f)?;
    }
    let run_cfg = fixture_run_config(&loaded.config, &rois);
    let text = toml::to_string(&run_cfg).expect("run config serializes to TOML");
    out.write_text(RUN_CONFIG, &text)?;
    log::info!(
        "fixture: {} train / {} test stimuli, {} voxels, dim {}, {} banks of {}",
        cfg.stimuli,
        cfg.test_stimuli,
        cfg.voxels,
        cfg.dim,
        cfg.banks,
        cfg.bank_size
    );
    out.finish(MANIFEST, "synth", loaded)
}
