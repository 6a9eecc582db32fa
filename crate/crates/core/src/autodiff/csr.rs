use ndarray::{Array2, ArrayView2};

use super::Scalar;

/// Constant compressed-sparse-row matrix used as the left operand of a
/// sparse-dense product (neighborhood averaging, name-embedding means).
#[derive(Debug, Clone)]
pub struct Csr<F> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<F>,
}

impl<F: Scalar> Csr<F> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are kept as separate entries and summed on use.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, F)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            rows,
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn mul_dense(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        assert_eq!(self.cols, x.nrows(), "csr/dense inner dimension mismatch");
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &x.row(c));
            }
        }
        out
    }

    /// `out += selfᵀ · g`
    pub fn t_mul_dense_acc(&self, g: ArrayView2<'_, F>, out: &mut Array2<F>) {
        assert_eq!(self.rows, g.nrows());
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &g_row);
            }
        }
    }

    pub fn to_dense(&self) -> Array2<F> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[(r, c)] += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matches_dense_product() {
        let a = Csr::from_triplets(2, 3, vec![(1, 2, 2.0), (0, 0, 1.0), (1, 0, -1.0), (1, 2, 1.0)]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(a.mul_dense(x.view()), a.to_dense().dot(&x));
        let g = array![[1.0, 0.5], [2.0, -1.0]];
        let mut acc = Array2::zeros((3, 2));
        a.t_mul_dense_acc(g.view(), &mut acc);
        assert_eq!(acc, a.to_dense().t().dot(&g));
        assert_eq!(a.nnz(), 4);
    }
}
