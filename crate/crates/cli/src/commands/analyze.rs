//! `scuba analyze`: per-ROI term and person statistics, clustering,
//! zero-shot classification and the projection convergence curve.

use std::path::Path;

use serde::Serialize;

use scuba_core::analysis::{
    cluster_stability, person_mention, person_summary, spherical_kmeans, top_terms, zero_shot_classify,
    Lexicon, PersonMention, Pos, RoiMask, StabilityResult,
};
use scuba_core::caption_retrieval::VoxelCaptionSet;
use scuba_core::encoder::optimal_embeddings_filtered;
use scuba_core::projection::{convergence_curve, curve_csv};
use scuba_core::tensor_io::{EmbeddingMatrix, VoxelStats};

use crate::commands::caption::{load_encoder, CAPTIONS_TSV, PROJECTED};
use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::manifest::Outputs;

pub const ANALYSIS_DIR: &str = "analysis";
pub const PERSON_CSV: &str = "analysis/person_fractions.csv";
pub const CLUSTERS_JSON: &str = "analysis/clusters.json";
pub const CLASSIFICATION_CSV: &str = "analysis/classification.csv";
pub const CONVERGENCE_CSV: &str = "analysis/convergence.csv";
pub const MANIFEST: &str = "analyze_manifest.json";

pub fn top_terms_file(roi: &str) -> String {
    format!("{ANALYSIS_DIR}/top_terms_{roi}.csv")
}

#[derive(Debug, Serialize)]
struct ClusterReport {
    roi: String,
    k: usize,
    restarts: usize,
    seed: u64,
    objective: f64,
    iterations: usize,
    converged: bool,
    sizes: Vec<usize>,
    clusters: Vec<ClusterSummary>,
    stability: StabilityResult,
}

#[derive(Debug, Serialize)]
struct ClusterSummary {
    cluster: usize,
    voxel_ids: Vec<usize>,
    captioned: usize,
    single_person: usize,
    multiple_people: usize,
    no_person: usize,
}

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{what}: {}: {e}", path.display())))
}

fn load_lexicon(loaded: &Loaded, out: &mut Outputs) -> CliResult<Lexicon> {
    let data = &loaded.config.data;
    let lex_text = match &data.lexicon {
        Some(p) => {
            let r = loaded.existing("data.lexicon", p)?;
            out.input("lexicon", p, &r)?;
            read_text(&r, "data.lexicon")?
        }
        None => Lexicon::default_lexicon_text().to_string(),
    };
    let person_text = match &data.person_list {
        Some(p) => {
            let r = loaded.existing("data.person_list", p)?;
            out.input("person_list", p, &r)?;
            read_text(&r, "data.person_list")?
        }
        None => Lexicon::default_person_text().to_string(),
    };
    Lexicon::parse(&lex_text, &person_text).map_err(|e| {
        let which = match e {
            scuba_core::analysis::AnalysisError::PersonLine { .. } => "data.person_list",
            _ => "data.lexicon",
        };
        CliError::from(e).context(which)
    })
}

fn load_rois(loaded: &Loaded, voxels: usize, out: &mut Outputs) -> CliResult<Vec<RoiMask>> {
    let cfg = &loaded.config.analysis;
    if cfg.rois.is_empty() {
        log::warn!("no ROIs configured; analysing the whole brain as one ROI");
        return Ok(vec![RoiMask::whole_brain(voxels)]);
    }
    let mut rois: Vec<RoiMask> = Vec::with_capacity(cfg.rois.len());
    for spec in &cfg.rois {
        let valid_name = !spec.name.is_empty()
            && spec.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid_name {
            return Err(CliError::config(format!(
                "ROI name {:?} must be non-empty ASCII letters, digits, '_' or '-'",
                spec.name
            )));
        }
        if rois.iter().any(|r| r.name == spec.name) {
            return Err(CliError::config(format!("duplicate ROI name {:?}", spec.name)));
        }
        let roi = match (&spec.tstat, &spec.voxels) {
            (Some(p), None) => {
                let r = loaded.existing(&format!("analysis.rois[{}].tstat", spec.name), p)?;
                out.input(&format!("roi_{}", spec.name), p, &r)?;
                let stats = VoxelStats::load(&r).map_err(|e| CliError::from(e).context(r.display()))?;
                if stats.voxels() != voxels {
                    return Err(CliError::data(format!(
                        "{}: {} t-statistics for an encoder with {voxels} voxels",
                        r.display(),
                        stats.voxels()
                    )));
                }
                RoiMask::from_tstat(&spec.name, &stats, spec.threshold.unwrap_or(cfg.roi_threshold))
            }
            (None, Some(ids)) => RoiMask::explicit(&spec.name, ids.clone(), voxels)?,
            _ => {
                return Err(CliError::config(format!(
                    "ROI {:?} needs exactly one of `tstat` or `voxels`",
                    spec.name
                )))
            }
        };
        rois.push(roi);
    }
    Ok(rois)
}

pub fn run(loaded: &mut Loaded) -> CliResult<()> {
    let cfg = loaded.config.analysis.clone();
    let seed = loaded.config.seed;
    let root = loaded.output_dir();
    let tsv_path = root.join(CAPTIONS_TSV);
    if !tsv_path.is_file() {
        return Err(CliError::config(format!(
            "no captions at {}; run `scuba caption` first",
            tsv_path.display()
        )));
    }
    let enc = load_encoder(loaded)?;
    let mut out = Outputs::new(root.clone())?;
    let lex = load_lexicon(loaded, &mut out)?;
    let captions = VoxelCaptionSet::parse_tsv(&read_text(&tsv_path, "captions")?)
        .map_err(|e| CliError::from(e).context(tsv_path.display()))?;
    if let Some(v) = captions.voxels.last() {
        if v.voxel_id >= enc.voxels() {
            return Err(CliError::data(format!(
                "{}: voxel {} is outside the encoder's {} voxels",
                tsv_path.display(),
                v.voxel_id,
                enc.voxels()
            )));
        }
    }
    let rois = load_rois(loaded, enc.voxels(), &mut out)?;

    // top terms and person fractions
    let mut summaries = Vec::with_capacity(rois.len());
    for roi in &rois {
        if roi.is_empty() {
            log::warn!("ROI {} is empty; skipped", roi.name);
            continue;
        }
        let mut csv = String::from("pos,lemma,count,fraction\n");
        for (pos, label) in [(Pos::Noun, "noun"), (Pos::Adjective, "adj")] {
            for row in top_terms(&captions, roi, &lex, pos, cfg.top)? {
                csv.push_str(&format!("{label},{},{},{:.6}\n", row.lemma, row.count, row.fraction));
            }
        }
        out.write_text(&top_terms_file(&roi.name), &csv)?;
        summaries.push(person_summary(&captions, roi, &lex)?);
    }
    out.write_text(PERSON_CSV, &scuba_core::analysis::terms::person_csv(&summaries))?;

    // clustering of the (unit-normalized) weights of one ROI
    let (opt, _) = optimal_embeddings_filtered(&enc)?;
    let cluster_roi = match &cfg.cluster_roi {
        Some(name) => rois
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| CliError::config(format!("analysis.cluster_roi {name:?} is not a configured ROI")))?,
        None => &rois[0],
    };
    let rows: Vec<usize> = opt
        .voxel_ids
        .iter()
        .enumerate()
        .filter(|(_, v)| cluster_roi.contains(**v))
        .map(|(r, _)| r)
        .collect();
    if rows.len() >= cfg.k && cfg.k > 0 {
        let ids: Vec<usize> = rows.iter().map(|&r| opt.voxel_ids[r]).collect();
        let points = opt.embeddings.select_rows(&rows);
        let model = spherical_kmeans(&points, cfg.k, cfg.restarts, seed)?;
        let stability = cluster_stability(&points, cfg.k, cfg.stability_repeats, seed)?;
        let clusters = (0..cfg.k)
            .map(|c| {
                let members: Vec<usize> = ids
                    .iter()
                    .zip(&model.assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(&v, _)| v)
                    .collect();
                let mut s = ClusterSummary {
                    cluster: c,
                    voxel_ids: members.clone(),
                    captioned: 0,
                    single_person: 0,
                    multiple_people: 0,
                    no_person: 0,
                };
                for text in members.iter().filter_map(|&v| captions.text_of(v)) {
                    s.captioned += 1;
                    match person_mention(text, &lex) {
                        PersonMention::None => s.no_person += 1,
                        PersonMention::Single => s.single_person += 1,
                        PersonMention::Multiple => s.multiple_people += 1,
                    }
                }
                s
            })
            .collect();
        let report = ClusterReport {
            roi: cluster_roi.name.clone(),
            k: cfg.k,
            restarts: cfg.restarts,
            seed,
            objective: model.objective,
            iterations: model.iterations,
            converged: model.converged,
            sizes: model.cluster_sizes(),
            clusters,
            stability,
        };
        let json = serde_json::to_string_pretty(&report).expect("cluster report serializes") + "\n";
        out.write_text(CLUSTERS_JSON, &json)?;
    } else {
        log::warn!(
            "ROI {} has {} voxel(s) with weights, fewer than k = {}; clustering skipped",
            cluster_roi.name,
            rows.len(),
            cfg.k
        );
    }

    // zero-shot classification of the chosen projected weights per ROI
    let data = loaded.config.data.clone();
    match (&data.category_names, &data.category_embeddings) {
        (Some(n), Some(e)) => {
            let names_path = loaded.existing("data.category_names", n)?;
            let emb_path = loaded.existing("data.category_embeddings", e)?;
            out.input("category_names", n, &names_path)?;
            out.input("category_embeddings", e, &emb_path)?;
            let names: Vec<String> = read_text(&names_path, "data.category_names")?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            let categories =
                EmbeddingMatrix::load(&emb_path).map_err(|er| CliError::from(er).context(emb_path.display()))?;
            let projected_path = root.join(PROJECTED);
            let projected = EmbeddingMatrix::load(&projected_path)
                .map_err(|er| CliError::from(er).context(projected_path.display()))?;
            if projected.rows() != captions.len() {
                return Err(CliError::data(format!(
                    "{} has {} rows but {} voxels are captioned",
                    projected_path.display(),
                    projected.rows(),
                    captions.len()
                )));
            }
            let mut csv = String::from("roi,category,count,percent\n");
            for roi in rois.iter().filter(|r| !r.is_empty()) {
                let rows: Vec<usize> = captions
                    .voxels
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| roi.contains(v.voxel_id))
                    .map(|(r, _)| r)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let c = zero_shot_classify(&projected.select_rows(&rows), &categories, &names)?;
                for ((name, count), pct) in c.category_names.iter().zip(&c.counts).zip(&c.percentages) {
                    csv.push_str(&format!("{},{name},{count},{pct:.4}\n", roi.name));
                }
            }
            out.write_text(CLASSIFICATION_CSV, &csv)?;
        }
        (None, None) => log::info!("no categories configured; classification skipped"),
        _ => {
            return Err(CliError::config(
                "data.category_names and data.category_embeddings must be given together",
            ))
        }
    }

    // convergence of the projection against subsets of the first bank
    if let Some(b) = data.banks.first() {
        let bank_path = loaded.existing("data.banks[0]", b)?;
        out.input("bank_0", b, &bank_path)?;
        let bank = EmbeddingMatrix::load(&bank_path).map_err(|e| CliError::from(e).context(bank_path.display()))?;
        let sizes: Vec<usize> = cfg
            .convergence_sizes
            .iter()
            .copied()
            .filter(|&s| {
                let ok = s >= 1 && s <= bank.rows();
                if !ok {
                    log::warn!("convergence size {s} skipped (bank has {} rows)", bank.rows());
                }
                ok
            })
            .collect();
        if !sizes.is_empty() {
            let points = convergence_curve(
                &opt.embeddings,
                &bank,
                &loaded.config.projection,
                &sizes,
                cfg.convergence_repeats,
                seed,
            )?;
            out.write_text(CONVERGENCE_CSV, &curve_csv(&points))?;
        }
    }
    out.finish(MANIFEST, "analyze", loaded)
}
