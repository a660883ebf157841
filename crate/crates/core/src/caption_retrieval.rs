//! Caption assignment by cosine retrieval over a caption bank.
//!
//! Each voxel's projected weight is compared with every caption's text
//! embedding; the best match becomes the voxel's caption. [`best_of_r`]
//! repeats projection over several image banks and keeps the repeat whose
//! caption agrees best with the original, unprojected weight.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{cosine, cosine64, dot, to_f64};
use crate::projection::{project, ProjectionConfig, ProjectionError, ProjectionResult};
use crate::tensor_io::{row_norm, CaptionTable, EmbeddingMatrix, IoError, Matrix, RowSource};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("empty caption bank")]
    EmptyBank,
    #[error("caption bank has {captions} captions but {embeddings} embedding rows")]
    Length { captions: usize, embeddings: usize },
    #[error("caption embedding row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("dimension mismatch: queries have {queries}, caption bank has {bank}")]
    Dim { queries: usize, bank: usize },
    #[error("k must be >= 1")]
    K,
    #[error("best-of-R needs at least one image bank")]
    NoRepeats,
    #[error("{count} voxel ids for {rows} rows")]
    VoxelIds { count: usize, rows: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Caption strings with aligned text-embedding rows.
#[derive(Clone, Debug)]
pub struct CaptionBank {
    captions: CaptionTable,
    embeddings: EmbeddingMatrix,
    norms: Vec<f64>,
}

impl CaptionBank {
    pub fn new(captions: CaptionTable, embeddings: EmbeddingMatrix) -> Result<Self, RetrievalError> {
        if captions.len() != embeddings.rows() {
            return Err(RetrievalError::Length {
                captions: captions.len(),
                embeddings: embeddings.rows(),
            });
        }
        if captions.is_empty() {
            return Err(RetrievalError::EmptyBank);
        }
        let norms: Vec<f64> = (0..embeddings.rows()).map(|r| row_norm(embeddings.row(r))).collect();
        if let Some(row) = norms.iter().position(|&n| n == 0.0) {
            return Err(RetrievalError::ZeroRow { row });
        }
        Ok(Self {
            captions,
            embeddings,
            norms,
        })
    }

    /// Loads a caption TSV and its BSCB embedding file. An empty table is
    /// reported as [`RetrievalError::EmptyBank`] before the embeddings are read.
    pub fn load(captions: impl AsRef<Path>, embeddings: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let table = CaptionTable::load(captions)?;
        if table.is_empty() {
            return Err(RetrievalError::EmptyBank);
        }
        Self::new(table, EmbeddingMatrix::load(embeddings)?)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn captions(&self) -> &CaptionTable {
        &self.captions
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    /// Cosine between `q` and caption row `i`.
    pub fn similarity(&self, q: &[f32], i: usize) -> f64 {
        cosine(q, self.embeddings.row(i))
    }

    /// All caption indices ranked by cosine to `q`, best first, truncated to `k`.
    /// Equal similarities are ordered by caption id.
    fn top_k(&self, q: &[f32], k: usize) -> Vec<(usize, f64)> {
        let qn = row_norm(q);
        let sims: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let s = if qn == 0.0 {
                    0.0
                } else {
                    (dot(q, self.embeddings.row(i)) / (qn * self.norms[i])).clamp(-1.0, 1.0)
                };
                (i, s)
            })
            .collect();
        // ids are strictly increasing with position, so index order is id order
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        let mut sims = sims;
        let k = k.min(sims.len());
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, order);
            sims.truncate(k);
        }
        sims.sort_unstable_by(order);
        sims
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub caption_id: u64,
    pub similarity: f64,
}

/// Rank-1 outcome of one best-of-R repeat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatCandidate {
    pub repeat: usize,
    pub caption_id: u64,
    /// Cosine between the repeat's projected weight and the caption.
    pub retrieval_similarity: f64,
    /// Cosine between the original weight and the caption; the selection score.
    pub weight_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelCaption {
    pub voxel_id: usize,
    pub caption_id: u64,
    pub text: String,
    /// Cosine between the (chosen) projected weight and the caption embedding.
    pub similarity: f64,
    /// Top-k captions, best first; the first is the chosen caption.
    pub candidates: Vec<Candidate>,
    /// Populated by [`best_of_r`]; empty for plain retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_repeat: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repeats: Vec<RepeatCandidate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoxelCaptionSet {
    pub voxels: Vec<VoxelCaption>,
}

pub const TSV_HEADER: &str = "voxel_id\tcaption_id\tsimilarity\tcaption_text";

impl VoxelCaptionSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Caption text of `voxel_id`, if it has one.
    pub fn text_of(&self, voxel_id: usize) -> Option<&str> {
        self.voxels
            .binary_search_by_key(&voxel_id, |v| v.voxel_id)
            .ok()
            .map(|i| self.voxels[i].text.as_str())
    }

    /// Replaces row positions with real voxel ids; `ids[r]` labels row `r`.
    pub fn relabel(mut self, ids: &[usize]) -> Result<Self, RetrievalError> {
        if ids.len() != self.voxels.len() {
            return Err(RetrievalError::VoxelIds {
                count: ids.len(),
                rows: self.voxels.len(),
            });
        }
        for (v, &id) in self.voxels.iter_mut().zip(ids) {
            v.voxel_id = id;
        }
        self.voxels.sort_by_key(|v| v.voxel_id);
        Ok(self)
    }

    /// Applies [`normalize_caption`] to every chosen caption.
    pub fn normalized(mut self) -> Self {
        for v in &mut self.voxels {
            v.text = normalize_caption(&v.text);
        }
        self
    }

    /// `voxel_id<TAB>caption_id<TAB>similarity<TAB>caption_text`, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{TSV_HEADER}\n");
        for v in &self.voxels {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                v.voxel_id, v.caption_id, v.similarity, v.text
            ));
        }
        out
    }

    /// Reads the TSV written by [`to_tsv`](Self::to_tsv). Candidate lists are
    /// not stored in the TSV and come back holding only the chosen caption.
    pub fn parse_tsv(src: &str) -> Result<Self, RetrievalError> {
        let mut voxels: Vec<VoxelCaption> = Vec::new();
        for (i, line) in src.lines().enumerate() {
            let line_no = i + 1;
            if i == 0 && line == TSV_HEADER {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| RetrievalError::Malformed {
                line: line_no,
                reason: reason.to_string(),
            };
            let mut parts = line.splitn(4, '\t');
            let (Some(v), Some(c), Some(s), Some(t)) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let voxel_id: usize = v.parse().map_err(|_| bad("voxel_id is not an integer"))?;
            let caption_id: u64 = c.parse().map_err(|_| bad("caption_id is not an integer"))?;
            let similarity: f64 = s.parse().map_err(|_| bad("similarity is not a number"))?;
            if !(-1.0..=1.0).contains(&similarity) {
                return Err(bad("similarity outside [-1, 1]"));
            }
            if voxels.last().is_some_and(|p| p.voxel_id >= voxel_id) {
                return Err(bad("voxel ids must be strictly increasing"));
            }
            voxels.push(VoxelCaption {
                voxel_id,
                caption_id,
                text: t.to_string(),
                similarity,
                candidates: vec![Candidate {
                    caption_id,
                    similarity,
                }],
                chosen_repeat: None,
                repeats: Vec::new(),
            });
        }
        Ok(Self { voxels })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("caption set serializes")
    }
}

fn check_queries(queries: &EmbeddingMatrix, bank: &CaptionBank, k: usize) -> Result<(), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::K);
    }
    if bank.is_empty() {
        return Err(RetrievalError::EmptyBank);
    }
    if queries.dim() != bank.dim() {
        return Err(RetrievalError::Dim {
            queries: queries.dim(),
            bank: bank.dim(),
        });
    }
    Ok(())
}

fn caption_for(voxel_id: usize, ranked: &[(usize, f64)], bank: &CaptionBank) -> VoxelCaption {
    let entries = bank.captions.entries();
    let (best, sim) = ranked[0];
    VoxelCaption {
        voxel_id,
        caption_id: entries[best].id,
        text: entries[best].text.clone(),
        similarity: sim,
        candidates: ranked
            .iter()
            .map(|&(i, s)| Candidate {
                caption_id: entries[i].id,
                similarity: s,
            })
            .collect(),
        chosen_repeat: None,
        repeats: Vec::new(),
    }
}

/// Top-`k` captions per row of `projected` by cosine similarity.
///
/// `k` larger than the bank returns the whole bank, sorted. Row `r` is
/// labelled voxel `r`; see [`VoxelCaptionSet::relabel`].
pub fn retrieve(projected: &EmbeddingMatrix, bank: &CaptionBank, k: usize) -> Result<VoxelCaptionSet, RetrievalError> {
    check_queries(projected, bank, k)?;
    let voxels = (0..projected.rows())
        .into_par_iter()
        .map(|r| caption_for(r, &bank.top_k(projected.row(r), k), bank))
        .collect();
    Ok(VoxelCaptionSet { voxels })
}

/// Captions chosen by [`best_of_r`] together with every repeat's projection.
#[derive(Clone, Debug)]
pub struct BestOfR {
    pub captions: VoxelCaptionSet,
    /// One projection of all weight rows per image bank.
    pub projections: Vec<ProjectionResult>,
}

impl BestOfR {
    /// Per row: the projected weight and pre/post cosine of the chosen repeat.
    pub fn chosen_projection(&self) -> Result<(EmbeddingMatrix, Vec<f64>), RetrievalError> {
        let dim = self.projections[0].projected.dim();
        let mut data = Vec::with_capacity(self.captions.len() * dim);
        let mut cosines = Vec::with_capacity(self.captions.len());
        for (row, v) in self.captions.voxels.iter().enumerate() {
            let p = &self.projections[v.chosen_repeat.unwrap_or(0)];
            data.extend_from_slice(p.projected.row(row));
            cosines.push(p.pre_post_cosine[row]);
        }
        let m = Matrix::new(self.captions.len(), dim, data)?;
        Ok((EmbeddingMatrix::raw(m), cosines))
    }
}

/// Projects the weights through each image bank, retrieves a caption per
/// repeat and keeps, per voxel, the repeat whose caption has the highest
/// cosine with the original weight. Ties go to the earliest repeat.
pub fn best_of_r<B: RowSource>(
    weights: &EmbeddingMatrix,
    banks: &[B],
    caption_bank: &CaptionBank,
    cfg: &ProjectionConfig,
    k: usize,
) -> Result<VoxelCaptionSet, RetrievalError> {
    Ok(best_of_r_with_projections(weights, banks, caption_bank, cfg, k)?.captions)
}

/// [`best_of_r`], also returning each repeat's projection.
pub fn best_of_r_with_projections<B: RowSource>(
    weights: &EmbeddingMatrix,
    banks: &[B],
    caption_bank: &CaptionBank,
    cfg: &ProjectionConfig,
    k: usize,
) -> Result<BestOfR, RetrievalError> {
    if banks.is_empty() {
        return Err(RetrievalError::NoRepeats);
    }
    check_queries(weights, caption_bank, k)?;
    let mut projections = Vec::with_capacity(banks.len());
    let mut per_repeat: Vec<VoxelCaptionSet> = Vec::with_capacity(banks.len());
    for (r, b) in banks.iter().enumerate() {
        let projected = project(weights, b, cfg)?;
        log::info!(
            "repeat {r}: mean pre/post cosine {:.4} over {} bank rows",
            projected.mean_cosine(),
            projected.bank_size
        );
        per_repeat.push(retrieve(&projected.projected, caption_bank, k)?);
        projections.push(projected);
    }
    let index_of = |id: u64| {
        caption_bank
            .captions
            .entries()
            .binary_search_by_key(&id, |e| e.id)
            .expect("retrieved id is in the bank")
    };
    let voxels = (0..weights.rows())
        .into_par_iter()
        .map(|v| {
            let w = to_f64(weights.row(v));
            let repeats: Vec<RepeatCandidate> = per_repeat
                .iter()
                .enumerate()
                .map(|(r, set)| {
                    let c = &set.voxels[v];
                    let e = to_f64(caption_bank.embeddings.row(index_of(c.caption_id)));
                    RepeatCandidate {
                        repeat: r,
                        caption_id: c.caption_id,
                        retrieval_similarity: c.similarity,
                        weight_similarity: cosine64(&w, &e),
                    }
                })
                .collect();
            let chosen = repeats.iter().fold(0usize, |best, rc| {
                match rc.weight_similarity.total_cmp(&repeats[best].weight_similarity) {
                    Ordering::Greater => rc.repeat,
                    _ => best,
                }
            });
            let mut out = per_repeat[chosen].voxels[v].clone();
            out.chosen_repeat = Some(chosen);
            out.repeats = repeats;
            out
        })
        .collect();
    Ok(BestOfR {
        captions: VoxelCaptionSet { voxels },
        projections,
    })
}

/// Lowercases, trims and collapses internal whitespace to single spaces.
pub fn normalize_caption(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
