use nalgebra::DMatrix;

/// Compressed sparse row matrix. Column indices are sorted and unique within
/// each row; explicitly stored zeros are kept so matrices assembled on the
/// same mesh share a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Sums duplicate entries. Entries sharing a position are accumulated in
    /// input order, so two symmetric triplet streams give bit-identical
    /// transposed entries.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) outside {n_rows}x{n_cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    t.push((r, c, a[(r, c)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `Y = A X` for a row-major block `X` with `k` columns.
    pub fn mul_block_row_major(&self, x: &[f64], k: usize, y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols * k);
        assert_eq!(y.len(), self.n_rows * k);
        for i in 0..self.n_rows {
            let yi = &mut y[i * k..(i + 1) * k];
            yi.iter_mut().for_each(|v| *v = 0.0);
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                let xj = &x[j * k..(j + 1) * k];
                for (o, &xv) in yi.iter_mut().zip(xj) {
                    *o += a * xv;
                }
            }
        }
    }

    /// `A X` for a dense column-major matrix.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n_cols);
        let mut out = DMatrix::zeros(self.n_rows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let xs = col.as_slice();
            let mut oc = out.column_mut(c);
            let os = oc.as_mut_slice();
            self.mul_vec_into(xs, os);
        }
        out
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                x[i] * cols.iter().zip(vals).map(|(&j, &v)| v * y[j]).sum::<f64>()
            })
            .sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push((j, i, v));
            }
        }
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, t)
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }

    /// `self + alpha * other`, union of the two patterns.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        row_offsets.push(0);
        for i in 0..self.n_rows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                if q == cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    col_indices.push(ca[p]);
                    values.push(va[p]);
                    p += 1;
                } else if p == ca.len() || cb[q] < ca[p] {
                    col_indices.push(cb[q]);
                    values.push(alpha * vb[q]);
                    q += 1;
                } else {
                    col_indices.push(ca[p]);
                    values.push(va[p] + alpha * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_offsets, col_indices, values }
    }

    /// Principal submatrix on `keep` (`keep[new] = old`), given the inverse
    /// map `old -> Some(new)`.
    pub fn principal_submatrix(&self, keep: &[usize], new_index: &[Option<usize>]) -> SparseMatrix {
        let mut row_offsets = Vec::with_capacity(keep.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &old in keep {
            let (cols, vals) = self.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                if let Some(nj) = new_index[j] {
                    col_indices.push(nj);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        // Monotone renumbering keeps columns sorted.
        SparseMatrix { n_rows: keep.len(), n_cols: keep.len(), row_offsets, col_indices, values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_accumulate_and_sort() {
        let a = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 3.0), (1, 0, -1.0)]);
        assert_eq!(a.row_offsets(), &[0, 1, 3]);
        assert_eq!(a.col_indices(), &[1, 0, 2]);
        assert_eq!(a.values(), &[2.0, -1.0, 4.0]);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn add_scaled_merges_patterns() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let b = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let c = a.add_scaled(0.5, &b);
        assert_eq!(c.to_dense(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]));
    }

    #[test]
    fn block_product_matches_columns() {
        let a = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (2, 0, 1.0), (2, 2, 4.0)]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2 row-major
        let mut y = [0.0; 6];
        a.mul_block_row_major(&x, 2, &mut y);
        assert_eq!(a.mul_vec(&[1.0, 3.0, 5.0]), vec![y[0], y[2], y[4]]);
        assert_eq!(a.mul_vec(&[2.0, 4.0, 6.0]), vec![y[1], y[3], y[5]]);
    }
}
