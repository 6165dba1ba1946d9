//! Small dense linear algebra helpers over row-major `f64` storage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the shape and the little-endian bit patterns of every entry.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.rows as u64).to_le_bytes());
        hasher.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the rows of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    // v holds eigenvectors as columns while iterating
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.row_mut(i)[i] = 1.0;
    }

    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let x = m.row(p)[q];
                off += x * x;
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.row(p)[q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.row(p)[p];
                let aqq = m.row(q)[q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.row(k)[p];
                    let mkq = m.row(k)[q];
                    m.row_mut(k)[p] = c * mkp - s * mkq;
                    m.row_mut(k)[q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.row(p)[k];
                    let mqk = m.row(q)[k];
                    m.row_mut(p)[k] = c * mpk - s * mqk;
                    m.row_mut(q)[k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.row(k)[p];
                    let vkq = v.row(k)[q];
                    v.row_mut(k)[p] = c * vkp - s * vkq;
                    v.row_mut(k)[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.row(i)[i]).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));

    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (out, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors.row_mut(out)[k] = v.row(k)[col];
        }
    }
    (values, vectors)
}


/// Row-sparse gradient over a `rows x dim` parameter matrix.
///
/// Rows are stored in first-touch order; repeated contributions to the
/// same row are summed in insertion order.
#[derive(Clone, Debug)]
pub struct SparseRows {
    dim: usize,
    slot_of: Vec<u32>,
    touched: Vec<usize>,
    data: Vec<f64>,
}

const EMPTY_SLOT: u32 = u32::MAX;

impl SparseRows {
    pub fn new(n_rows: usize, dim: usize) -> Self {
        SparseRows {
            dim,
            slot_of: vec![EMPTY_SLOT; n_rows],
            touched: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct rows touched.
    pub fn len(&self) -> usize {
        self.touched.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    /// Mutable access to a row's accumulator, zero-initialized on first touch.
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let slot = match self.slot_of[row] {
            EMPTY_SLOT => {
                let slot = self.touched.len();
                self.slot_of[row] = slot as u32;
                self.touched.push(row);
                self.data.resize(self.data.len() + self.dim, 0.0);
                slot
            }
            s => s as usize,
        };
        &mut self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn add(&mut self, row: usize, alpha: f64, x: &[f64]) {
        axpy(alpha, x, self.row_mut(row));
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        match self.slot_of.get(row).copied() {
            None | Some(EMPTY_SLOT) => None,
            Some(s) => {
                let s = s as usize;
                Some(&self.data[s * self.dim..(s + 1) * self.dim])
            }
        }
    }

    /// `(row, gradient)` pairs in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.touched
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r, &self.data[s * self.dim..(s + 1) * self.dim]))
    }

    /// Adds every row of `other` into `self`.
    pub fn merge(&mut self, other: &SparseRows) {
        for (r, g) in other.iter() {
            self.add(r, 1.0, g);
        }
    }

    /// Empties the accumulator while keeping its allocations.
    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.slot_of[r] = EMPTY_SLOT;
        }
        self.touched.clear();
        self.data.clear();
    }

    /// `target -= lr * self`, row by row.
    pub fn descend(&self, lr: f64, target: &mut Matrix) {
        for (r, g) in self.iter() {
            axpy(-lr, g, target.row_mut(r));
        }
    }
}
