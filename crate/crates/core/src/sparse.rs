//! Coordinate-list sparse matrices used for adjacency structures.

use crate::error::{Error, Result};

/// Sparse matrix in coordinate form. Entries are kept sorted by `(row, col)`
/// and duplicate-free; construction enforces both.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Dimension(format!(
                    "sparse entry ({r},{c}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::Contract(format!(
                    "duplicate sparse entry at ({},{})",
                    w[0].0, w[0].1
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Dense row-major materialization, mostly for oracles and small checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            out[r * self.cols + c] = v;
        }
        out
    }

    /// y = self * x, with x dense row-major [cols x k].
    pub fn mul_dense(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if x.len() != self.cols * k {
            return Err(Error::Dimension(format!(
                "spmm rhs has {} values, expected {}x{}",
                x.len(),
                self.cols,
                k
            )));
        }
        let mut out = vec![0.0; self.rows * k];
        for &(r, c, v) in &self.entries {
            let src = &x[c * k..(c + 1) * k];
            let dst = &mut out[r * k..(r + 1) * k];
            for j in 0..k {
                dst[j] += v * src[j];
            }
        }
        Ok(out)
    }

    /// y = self^T * x, with x dense row-major [rows x k].
    pub fn mul_dense_transposed(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if x.len() != self.rows * k {
            return Err(Error::Dimension(format!(
                "spmm^T rhs has {} values, expected {}x{}",
                x.len(),
                self.rows,
                k
            )));
        }
        let mut out = vec![0.0; self.cols * k];
        for &(r, c, v) in &self.entries {
            let src = &x[r * k..(r + 1) * k];
            let dst = &mut out[c * k..(c + 1) * k];
            for j in 0..k {
                dst[j] += v * src[j];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_bounds_and_duplicates() {
        assert!(SparseMatrix::new(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::new(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    }

    #[test]
    fn sorts_entries() {
        let m = SparseMatrix::new(2, 2, vec![(1, 1, 4.0), (0, 1, 2.0)]).unwrap();
        assert_eq!(m.entries(), &[(0, 1, 2.0), (1, 1, 4.0)]);
    }

    #[test]
    fn mul_dense_matches_hand_case() {
        let m = SparseMatrix::new(1, 1, vec![(0, 0, 2.0)]).unwrap();
        assert_eq!(m.mul_dense(&[3.0], 1).unwrap(), vec![6.0]);
    }
}
