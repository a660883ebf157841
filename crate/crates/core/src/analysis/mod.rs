//! Downstream selectivity analyses over voxel captions and weights.
//!
//! - [`roi`]: region masks from localizer t-statistics or explicit lists.
//! - [`lexicon`]: surface → (lemma, part of speech) table and person nouns.
//! - [`terms`]: per-ROI term frequencies and person-mention fractions.
//! - [`kmeans`]: spherical k-means and cross-seed cluster stability.
//! - [`classify`]: zero-shot classification against category prompts.

pub mod classify;
pub mod kmeans;
pub mod lexicon;
pub mod roi;
pub mod terms;

pub use classify::{zero_shot_classify, Classification};
pub use kmeans::{cluster_stability, spherical_kmeans, ClusterModel, StabilityResult};
pub use lexicon::{tokenize, Lexicon, Pos};
pub use roi::{roi_from_tstat, RoiMask, RoiSource};
pub use terms::{
    person_fraction, person_mention, person_summary, top_terms, PersonMention, PersonSummary,
    TermRow,
};

use crate::tensor_io::IoError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("lexicon line {line}: {reason}")]
    LexiconLine { line: usize, reason: String },
    #[error("person list line {line}: {reason}")]
    PersonLine { line: usize, reason: String },
    #[error("empty lexicon")]
    EmptyLexicon,
    #[error("empty person-noun list")]
    EmptyPersonList,
    #[error("ROI {0:?} is empty")]
    EmptyRoi(String),
    #[error("ROI {name:?}: voxel id {id} out of range for {voxels} voxels")]
    RoiRange { name: String, id: usize, voxels: usize },
    #[error("ROI {name:?}: duplicate voxel id {id}")]
    RoiDuplicate { name: String, id: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("restarts/repeats must be >= 1")]
    ZeroRestarts,
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("{names} category names for {rows} category embeddings")]
    CategoryNames { names: usize, rows: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    Dim { left: usize, right: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}
