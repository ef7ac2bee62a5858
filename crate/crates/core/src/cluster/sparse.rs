use nalgebra::DMatrix;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T = f64> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy + PartialEq + Default> CsrMatrix<T> {
    /// Builds from per-row `(column, value)` lists; zeros are not stored.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                assert!(c < cols, "column {c} out of bounds");
                if v != T::default() {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: n_rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + Clone + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Same sparsity pattern with each stored value mapped through `f`.
    pub fn map<U, F: Fn(usize, usize, T) -> U>(&self, f: F) -> CsrMatrix<U> {
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                values.push(f(i, self.indices[k], self.values[k]));
            }
        }
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        }
    }

    /// Stored (row, column) positions.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, k)))
            .map(|(i, k)| (i, self.indices[k]))
            .collect()
    }
}

impl CsrMatrix<f64> {
    /// `A · X` for a dense `X` with `cols` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.cols);
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for i in 0..self.rows {
            for (c, v) in self.row(i) {
                for j in 0..x.ncols() {
                    out[(i, j)] += v * x[(c, j)];
                }
            }
        }
        out
    }

    /// `Aᵀ · X` for a dense `X` with `rows` rows.
    pub fn tr_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.rows);
        let mut out = DMatrix::zeros(self.cols, x.ncols());
        for i in 0..self.rows {
            for (c, v) in self.row(i) {
                for j in 0..x.ncols() {
                    out[(c, j)] += v * x[(i, j)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (c, v) in self.row(i) {
                out[(i, c)] = v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let a = CsrMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -1.0)]]);
        assert_eq!(a.nnz(), 3);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.mul_dense(&x), a.to_dense() * &x);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(a.tr_mul_dense(&y), a.to_dense().transpose() * &y);
    }
}
