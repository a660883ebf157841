//! Interchange data model: BSCB matrices, caption tables and voxel statistics.

mod bscb;
mod matrix;
mod text;

use std::path::PathBuf;

pub use bscb::{
    load_matrix, open_matrix, read_matrix_header, save_matrix, Header, MatrixHandle, RowSource,
    StreamedMatrix, DEFAULT_STREAM_THRESHOLD, DTYPE_F32LE, FLAG_UNIT_NORM, FLAG_Z_SCORED,
    HEADER_LEN, MAGIC, VERSION,
};
pub use matrix::{
    column_moments, row_norm, ActivationMatrix, EmbeddingMatrix, Matrix, VoxelStats,
    UNIT_NORM_TOL, ZSCORE_TOL,
};
pub use text::{CaptionEntry, CaptionTable};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"BSCB\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported BSCB version {found}")]
    VersionMismatch { found: u16 },
    #[error("unsupported dtype code {code}")]
    UnsupportedDtype { code: u8 },
    #[error("unsupported ndim {ndim}, expected 2")]
    UnsupportedNdim { ndim: u8 },
    #[error("file of {len} bytes is shorter than the header")]
    TruncatedHeader { len: u64 },
    #[error("truncated payload: header declares {expected} values, file holds {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{extra} bytes after the declared payload")]
    TrailingBytes { extra: u64 },
    #[error("dimensions {dim0}x{dim1} overflow the addressable payload size")]
    DimensionOverflow { dim0: u64, dim1: u64 },
    #[error("empty matrix ({rows}x{cols})")]
    Empty { rows: u64, cols: u64 },
    #[error("data length {len} does not match {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },
    #[error("row {row} has norm {norm} but the matrix is flagged unit-norm")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("voxel {voxel} has mean {mean:.3} and variance {variance:.3} but the matrix is flagged z-scored")]
    NotZScored {
        voxel: usize,
        mean: f64,
        variance: f64,
    },
    #[error("expected a single-row vector, found {rows} rows")]
    NotAVector { rows: usize },
    #[error("{} changed while open", path.display())]
    Changed { path: PathBuf },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: empty caption")]
    EmptyCaption { line: usize },
    #[error("line {line}: caption contains a tab or line break")]
    CaptionControlChar { line: usize },
    #[error("line {line}: id {id} is not greater than the previous id")]
    CaptionOrder { line: usize, id: u64 },
}
