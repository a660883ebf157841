//! In-memory matrix types shared by every stage of the pipeline.

use super::IoError;

/// Tolerance on row norms when a matrix claims to be unit-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-5;
/// Tolerance on per-voxel mean and variance when activations claim to be z-scored.
pub const ZSCORE_TOL: f64 = 0.1;

/// Dense row-major `f32` matrix. All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, IoError> {
        let expected = rows.checked_mul(cols).ok_or(IoError::DimensionOverflow {
            dim0: rows as u64,
            dim1: cols as u64,
        })?;
        if data.len() != expected {
            return Err(IoError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, IoError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(IoError::RaggedRow {
                    row: i,
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0f32; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// L2 norm of a row, accumulated in `f64`.
pub fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// K×M matrix of embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Matrix,
    unit_norm: bool,
}

impl EmbeddingMatrix {
    /// Wraps `matrix`, verifying every row norm when `unit_norm` is claimed.
    pub fn new(matrix: Matrix, unit_norm: bool) -> Result<Self, IoError> {
        if unit_norm {
            for (i, row) in matrix.iter_rows().enumerate() {
                let n = row_norm(row);
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(IoError::NotUnitNorm { row: i, norm: n });
                }
            }
        }
        Ok(Self { matrix, unit_norm })
    }

    /// Wraps `matrix` without asserting unit norm.
    pub fn raw(matrix: Matrix) -> Self {
        Self {
            matrix,
            unit_norm: false,
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, IoError> {
        Ok(Self::raw(Matrix::from_rows(rows)?))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i)
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn select_rows(&self, idx: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            matrix: self.matrix.select_rows(idx),
            unit_norm: self.unit_norm,
        }
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<EmbeddingMatrix, IoError> {
        let mut data = Vec::with_capacity(self.matrix.data.len());
        for (i, row) in self.matrix.iter_rows().enumerate() {
            let n = row_norm(row);
            if n == 0.0 {
                return Err(IoError::ZeroRow { row: i });
            }
            data.extend(row.iter().map(|&v| (v as f64 / n) as f32));
        }
        Ok(EmbeddingMatrix {
            matrix: Matrix {
                rows: self.matrix.rows,
                cols: self.matrix.cols,
                data,
            },
            unit_norm: true,
        })
    }
}

/// T×N matrix of per-stimulus, per-voxel activations.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    matrix: Matrix,
    z_scored: bool,
}

impl ActivationMatrix {
    /// Wraps `matrix`, verifying per-voxel moments when `z_scored` is claimed.
    pub fn new(matrix: Matrix, z_scored: bool) -> Result<Self, IoError> {
        if z_scored {
            let (means, vars) = column_moments(&matrix);
            for (v, (m, s2)) in means.iter().zip(&vars).enumerate() {
                if m.abs() > ZSCORE_TOL || (s2 - 1.0).abs() > ZSCORE_TOL {
                    return Err(IoError::NotZScored {
                        voxel: v,
                        mean: *m,
                        variance: *s2,
                    });
                }
            }
        }
        Ok(Self { matrix, z_scored })
    }

    pub fn raw(matrix: Matrix) -> Self {
        Self {
            matrix,
            z_scored: false,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn stimuli(&self) -> usize {
        self.matrix.rows
    }

    pub fn voxels(&self) -> usize {
        self.matrix.cols
    }

    pub fn is_z_scored(&self) -> bool {
        self.z_scored
    }

    pub fn get(&self, stimulus: usize, voxel: usize) -> f32 {
        self.matrix.get(stimulus, voxel)
    }

    pub fn select_stimuli(&self, idx: &[usize]) -> ActivationMatrix {
        ActivationMatrix {
            matrix: self.matrix.select_rows(idx),
            z_scored: false,
        }
    }
}

/// Per-column mean and population variance.
pub fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows as f64;
    let mut means = vec![0.0f64; m.cols];
    for row in m.iter_rows() {
        for (acc, &v) in means.iter_mut().zip(row) {
            *acc += v as f64;
        }
    }
    means.iter_mut().for_each(|v| *v /= n);
    let mut vars = vec![0.0f64; m.cols];
    for row in m.iter_rows() {
        for ((acc, &v), mu) in vars.iter_mut().zip(row).zip(&means) {
            let d = v as f64 - mu;
            *acc += d * d;
        }
    }
    vars.iter_mut().for_each(|v| *v /= n);
    (means, vars)
}

/// Per-voxel scalar statistics (localizer t-values, R², ...).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelStats {
    values: Vec<f32>,
}

impl VoxelStats {
    pub fn new(values: Vec<f32>) -> Result<Self, IoError> {
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFinite { row: 0, col: idx });
        }
        Ok(Self { values })
    }

    pub fn voxels(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}
