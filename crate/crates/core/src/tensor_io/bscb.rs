//! BSCB binary matrix files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"BSCB"`                         |
//! | 4      | 2    | format version, `1`                     |
//! | 6      | 1    | dtype code, `1` = f32le                 |
//! | 7      | 1    | ndim, `2`                               |
//! | 8      | 8    | dim0 (rows)                             |
//! | 16     | 8    | dim1 (cols)                             |
//! | 24     | 4    | flags: bit0 unit_norm, bit1 z-scored    |
//! | 28     | ...  | dim0 × dim1 f32le values, row-major     |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::matrix::{ActivationMatrix, EmbeddingMatrix, Matrix, VoxelStats};
use super::IoError;

pub const MAGIC: [u8; 4] = *b"BSCB";
pub const VERSION: u16 = 1;
pub const DTYPE_F32LE: u8 = 1;
pub const HEADER_LEN: usize = 28;

pub const FLAG_UNIT_NORM: u32 = 1;
pub const FLAG_Z_SCORED: u32 = 1 << 1;

/// Payload size above which [`open_matrix`] streams instead of loading.
pub const DEFAULT_STREAM_THRESHOLD: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub rows: u64,
    pub cols: u64,
    pub flags: u32,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6] = DTYPE_F32LE;
        out[7] = 2;
        out[8..16].copy_from_slice(&self.rows.to_le_bytes());
        out[16..24].copy_from_slice(&self.cols.to_le_bytes());
        out[24..28].copy_from_slice(&self.flags.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self, IoError> {
        if buf[0..4] != MAGIC {
            return Err(IoError::BadMagic {
                found: [buf[0], buf[1], buf[2], buf[3]],
            });
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(IoError::VersionMismatch { found: version });
        }
        if buf[6] != DTYPE_F32LE {
            return Err(IoError::UnsupportedDtype { code: buf[6] });
        }
        if buf[7] != 2 {
            return Err(IoError::UnsupportedNdim { ndim: buf[7] });
        }
        let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        let flags = u32::from_le_bytes(buf[24..28].try_into().unwrap());
        Ok(Self { rows, cols, flags })
    }

    /// Payload length in bytes, checked against overflow of both `u64` and `usize`.
    pub fn payload_bytes(&self) -> Result<u64, IoError> {
        let overflow = || IoError::DimensionOverflow {
            dim0: self.rows,
            dim1: self.cols,
        };
        let n = self
            .rows
            .checked_mul(self.cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(overflow)?;
        usize::try_from(n).map_err(|_| overflow())?;
        Ok(n)
    }

    pub fn unit_norm(&self) -> bool {
        self.flags & FLAG_UNIT_NORM != 0
    }

    pub fn z_scored(&self) -> bool {
        self.flags & FLAG_Z_SCORED != 0
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `m` with the given header flags.
pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix, flags: u32) -> Result<(), IoError> {
    let path = path.as_ref();
    if m.rows() == 0 || m.cols() == 0 {
        return Err(IoError::Empty {
            rows: m.rows() as u64,
            cols: m.cols() as u64,
        });
    }
    if let Some(idx) = m.data().iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFinite {
            row: idx / m.cols(),
            col: idx % m.cols(),
        });
    }
    let header = Header {
        rows: m.rows() as u64,
        cols: m.cols() as u64,
        flags,
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode()).map_err(io_err(path))?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_header(path: &Path, file: &mut File) -> Result<Header, IoError> {
    let file_len = file.metadata().map_err(io_err(path))?.len();
    if file_len < HEADER_LEN as u64 {
        return Err(IoError::TruncatedHeader { len: file_len });
    }
    let mut buf = [0u8; HEADER_LEN];
    file.read_exact(&mut buf).map_err(io_err(path))?;
    let header = Header::decode(&buf)?;
    let payload = header.payload_bytes()?;
    if header.rows == 0 || header.cols == 0 {
        return Err(IoError::Empty {
            rows: header.rows,
            cols: header.cols,
        });
    }
    let available = file_len - HEADER_LEN as u64;
    if available < payload {
        return Err(IoError::TruncatedPayload {
            expected: payload / 4,
            found: available / 4,
        });
    }
    if available > payload {
        return Err(IoError::TrailingBytes {
            extra: available - payload,
        });
    }
    Ok(header)
}

fn decode_f32s(bytes: &[u8], out: &mut Vec<f32>) {
    out.clear();
    out.extend(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
    );
}

/// Reads a whole BSCB file. The header is validated against the file length
/// before the payload buffer is allocated.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<(Matrix, Header), IoError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    let header = read_header(path, &mut file)?;
    let mut bytes = vec![0u8; header.payload_bytes()? as usize];
    file.read_exact(&mut bytes).map_err(io_err(path))?;
    let mut data = Vec::with_capacity(bytes.len() / 4);
    decode_f32s(&bytes, &mut data);
    let m = Matrix::new(header.rows as usize, header.cols as usize, data)?;
    Ok((m, header))
}

/// Reads only the header of a BSCB file (after validating the file length).
pub fn read_matrix_header(path: impl AsRef<Path>) -> Result<Header, IoError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    read_header(path, &mut file)
}

impl EmbeddingMatrix {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let flags = if self.is_unit_norm() { FLAG_UNIT_NORM } else { 0 };
        save_matrix(path, self.matrix(), flags)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let (m, h) = load_matrix(path)?;
        EmbeddingMatrix::new(m, h.unit_norm())
    }
}

impl ActivationMatrix {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let flags = if self.is_z_scored() { FLAG_Z_SCORED } else { 0 };
        save_matrix(path, self.matrix(), flags)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let (m, h) = load_matrix(path)?;
        ActivationMatrix::new(m, h.z_scored())
    }
}

impl VoxelStats {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let m = Matrix::new(1, self.voxels(), self.values().to_vec())?;
        save_matrix(path, &m, 0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let (m, _) = load_matrix(path)?;
        if m.rows() != 1 {
            return Err(IoError::NotAVector { rows: m.rows() });
        }
        VoxelStats::new(m.into_data())
    }
}

/// A sequence of equally sized rows that can be visited in chunks.
///
/// Implemented by in-memory matrices and by [`StreamedMatrix`], so bank
/// scans never need the whole bank resident.
pub trait RowSource: Sync {
    fn rows(&self) -> usize;
    fn dim(&self) -> usize;
    /// Calls `f(first_row, chunk)` for consecutive chunks of at most
    /// `chunk_rows` rows, in order. `chunk` is row-major.
    fn visit_chunks<E: From<IoError>>(
        &self,
        chunk_rows: usize,
        f: &mut dyn FnMut(usize, &[f32]) -> Result<(), E>,
    ) -> Result<(), E>;
}

impl RowSource for Matrix {
    fn rows(&self) -> usize {
        Matrix::rows(self)
    }

    fn dim(&self) -> usize {
        self.cols()
    }

    fn visit_chunks<E: From<IoError>>(
        &self,
        chunk_rows: usize,
        f: &mut dyn FnMut(usize, &[f32]) -> Result<(), E>,
    ) -> Result<(), E> {
        let step = chunk_rows.max(1) * self.cols().max(1);
        for (i, chunk) in self.data().chunks(step).enumerate() {
            f(i * chunk_rows.max(1), chunk)?;
        }
        Ok(())
    }
}

impl RowSource for EmbeddingMatrix {
    fn rows(&self) -> usize {
        EmbeddingMatrix::rows(self)
    }

    fn dim(&self) -> usize {
        EmbeddingMatrix::dim(self)
    }

    fn visit_chunks<E: From<IoError>>(
        &self,
        chunk_rows: usize,
        f: &mut dyn FnMut(usize, &[f32]) -> Result<(), E>,
    ) -> Result<(), E> {
        self.matrix().visit_chunks(chunk_rows, f)
    }
}

/// A BSCB file read chunk by chunk from disk.
#[derive(Clone, Debug)]
pub struct StreamedMatrix {
    path: PathBuf,
    header: Header,
}

impl StreamedMatrix {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref().to_path_buf();
        let header = read_matrix_header(&path)?;
        Ok(Self { path, header })
    }

    pub fn header(&self) -> Header {
        self.header
    }
}

impl RowSource for StreamedMatrix {
    fn rows(&self) -> usize {
        self.header.rows as usize
    }

    fn dim(&self) -> usize {
        self.header.cols as usize
    }

    fn visit_chunks<E: From<IoError>>(
        &self,
        chunk_rows: usize,
        f: &mut dyn FnMut(usize, &[f32]) -> Result<(), E>,
    ) -> Result<(), E> {
        let path = self.path.as_path();
        let mut file = File::open(path).map_err(io_err(path))?;
        // the file may have changed since open()
        let header = read_header(path, &mut file)?;
        if header != self.header {
            return Err(IoError::Changed {
                path: self.path.clone(),
            }
            .into());
        }
        file.seek(SeekFrom::Start(HEADER_LEN as u64))
            .map_err(io_err(path))?;
        let mut reader = BufReader::new(file);
        let cols = self.dim();
        let rows = self.rows();
        let chunk_rows = chunk_rows.max(1);
        let mut bytes = Vec::new();
        let mut values = Vec::new();
        let mut start = 0;
        while start < rows {
            let n = chunk_rows.min(rows - start);
            bytes.resize(n * cols * 4, 0);
            reader.read_exact(&mut bytes).map_err(io_err(path))?;
            decode_f32s(&bytes, &mut values);
            if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
                return Err(IoError::NonFinite {
                    row: start + idx / cols,
                    col: idx % cols,
                }
                .into());
            }
            f(start, &values)?;
            start += n;
        }
        Ok(())
    }
}

/// A bank either fully loaded or streamed from disk.
#[derive(Clone, Debug)]
pub enum MatrixHandle {
    Loaded(EmbeddingMatrix),
    Streamed(StreamedMatrix),
}

impl MatrixHandle {
    pub fn header_unit_norm(&self) -> bool {
        match self {
            MatrixHandle::Loaded(m) => m.is_unit_norm(),
            MatrixHandle::Streamed(s) => s.header.unit_norm(),
        }
    }
}

impl RowSource for MatrixHandle {
    fn rows(&self) -> usize {
        match self {
            MatrixHandle::Loaded(m) => RowSource::rows(m),
            MatrixHandle::Streamed(s) => s.rows(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            MatrixHandle::Loaded(m) => RowSource::dim(m),
            MatrixHandle::Streamed(s) => s.dim(),
        }
    }

    fn visit_chunks<E: From<IoError>>(
        &self,
        chunk_rows: usize,
        f: &mut dyn FnMut(usize, &[f32]) -> Result<(), E>,
    ) -> Result<(), E> {
        match self {
            MatrixHandle::Loaded(m) => m.visit_chunks(chunk_rows, f),
            MatrixHandle::Streamed(s) => s.visit_chunks(chunk_rows, f),
        }
    }
}

/// Loads the file eagerly when its payload is at most `threshold` bytes,
/// otherwise returns a streaming handle.
pub fn open_matrix(path: impl AsRef<Path>, threshold: u64) -> Result<MatrixHandle, IoError> {
    let path = path.as_ref();
    let header = read_matrix_header(path)?;
    if header.payload_bytes()? > threshold {
        Ok(MatrixHandle::Streamed(StreamedMatrix::open(path)?))
    } else {
        Ok(MatrixHandle::Loaded(EmbeddingMatrix::load(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn one_by_two_layout() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.bscb");
        let m = Matrix::new(1, 2, vec![0.6, 0.8]).unwrap();
        save_matrix(&p, &m, FLAG_UNIT_NORM).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[0..4], b"BSCB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 1);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &1u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &0.6f32.to_le_bytes());
        let (back, h) = load_matrix(&p).unwrap();
        assert_eq!(back, m);
        assert!(h.unit_norm());
        assert!(!h.z_scored());
    }

    #[test]
    fn empty_matrix_rejected() {
        let dir = tempdir().unwrap();
        let m = Matrix::new(0, 4, vec![]).unwrap();
        assert!(matches!(
            save_matrix(dir.path().join("e.bscb"), &m, 0),
            Err(IoError::Empty { .. })
        ));
    }

    #[test]
    fn non_finite_rejected_on_save() {
        // Matrix::new refuses NaN, so go through a valid matrix and a bad file.
        let dir = tempdir().unwrap();
        let p = dir.path().join("nan.bscb");
        let mut bytes = Header {
            rows: 1,
            cols: 2,
            flags: 0,
        }
        .encode()
        .to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_matrix(&p),
            Err(IoError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn bad_magic() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.bscb");
        let mut bytes = Header {
            rows: 1,
            cols: 1,
            flags: 0,
        }
        .encode()
        .to_vec();
        bytes[0..4].copy_from_slice(b"XXXX");
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_matrix(&p), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v2.bscb");
        let mut bytes = Header {
            rows: 1,
            cols: 1,
            flags: 0,
        }
        .encode()
        .to_vec();
        bytes[4] = 2;
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_matrix(&p),
            Err(IoError::VersionMismatch { found: 2 })
        ));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("short.bscb");
        let mut bytes = Header {
            rows: 10,
            cols: 10,
            flags: 0,
        }
        .encode()
        .to_vec();
        for i in 0..50 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_matrix(&p),
            Err(IoError::TruncatedPayload {
                expected: 100,
                found: 50
            })
        ));
    }

    #[test]
    fn dimension_overflow() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("huge.bscb");
        let bytes = Header {
            rows: u64::MAX / 2,
            cols: 3,
            flags: 0,
        }
        .encode();
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_matrix(&p),
            Err(IoError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempdir().unwrap();
        let m = Matrix::new(2, 2, vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        save_matrix(dir.path().join("a"), &m, 0).unwrap();
        save_matrix(dir.path().join("b"), &m, 0).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a")).unwrap(),
            std::fs::read(dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn streamed_chunks_match_loaded_rows() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.bscb");
        let data: Vec<f32> = (0..21).map(|i| i as f32 * 0.5).collect();
        let m = Matrix::new(7, 3, data).unwrap();
        save_matrix(&p, &m, 0).unwrap();
        let handle = open_matrix(&p, 0).unwrap();
        assert!(matches!(handle, MatrixHandle::Streamed(_)));
        let mut seen = Vec::new();
        let mut starts = Vec::new();
        handle
            .visit_chunks::<IoError>(3, &mut |start, chunk| {
                starts.push(start);
                seen.extend_from_slice(chunk);
                Ok(())
            })
            .unwrap();
        assert_eq!(starts, vec![0, 3, 6]);
        assert_eq!(seen, m.data());
        assert!(matches!(
            open_matrix(&p, DEFAULT_STREAM_THRESHOLD).unwrap(),
            MatrixHandle::Loaded(_)
        ));
    }

    #[test]
    fn voxel_stats_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.bscb");
        let s = VoxelStats::new(vec![1.9, 2.0, 2.1]).unwrap();
        s.save(&p).unwrap();
        assert_eq!(VoxelStats::load(&p).unwrap(), s);
        let (m, _) = load_matrix(&p).unwrap();
        assert_eq!(m.rows(), 1);
    }
}
