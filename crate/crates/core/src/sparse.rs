//! Compressed sparse complex matrices.
//!
//! Rows are stored in CSR layout, but only rows holding at least one nonzero
//! are kept. Measurement matrices touch a handful of buses, so iterating the
//! stored rows is proportional to the nonzero count rather than to `N`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ids: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ids: Vec::new(),
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that cancel to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Self {
        let mut acc: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
        for (i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of bounds");
            *acc.entry((i, j)).or_default() += v;
        }
        let mut m = Self::zeros(n_rows, n_cols);
        let mut current = None;
        for ((i, j), v) in acc {
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            if current != Some(i) {
                if current.is_some() {
                    m.row_ptr.push(m.col_idx.len());
                }
                m.row_ids.push(i);
                current = Some(i);
            }
            m.col_idx.push(j);
            m.values.push(v);
        }
        if current.is_some() {
            m.row_ptr.push(m.col_idx.len());
        }
        m
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

    /// Iterates `(row, [(col, value)])` over the stored rows in ascending order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, RowView<'_>)> + '_ {
        self.row_ids.iter().enumerate().map(move |(k, &i)| {
            let span = self.row_ptr[k]..self.row_ptr[k + 1];
            (
                i,
                RowView {
                    cols: &self.col_idx[span.clone()],
                    vals: &self.values[span],
                },
            )
        })
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.rows()
            .flat_map(|(i, row)| row.iter().map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.row_ids.binary_search(&i) {
            Ok(k) => {
                let span = self.row_ptr[k]..self.row_ptr[k + 1];
                match self.col_idx[span.clone()].binary_search(&j) {
                    Ok(p) => self.values[span.start + p],
                    Err(_) => Complex64::new(0.0, 0.0),
                }
            }
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![Complex64::new(0.0, 0.0); self.n_rows];
        for (i, row) in self.rows() {
            y[i] = row.dot(x);
        }
        y
    }

    /// `xᴴ A x`.
    pub fn quad_form(&self, x: &[Complex64]) -> Complex64 {
        assert_eq!(x.len(), self.n_cols);
        self.rows().map(|(i, row)| x[i].conj() * row.dot(x)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= factor;
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.n_cols,
            self.n_rows,
            self.triplets().map(|(i, j, v)| (j, i, v.conj())),
        )
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.n_cols,
            self.n_rows,
            self.triplets().map(|(i, j, v)| (j, i, v)),
        )
    }

    /// Largest entrywise deviation `max |A − Aᴴ|`.
    pub fn hermitian_defect(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Rows and columns that carry at least one nonzero.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.row_ids.clone();
        idx.extend(self.col_idx.iter().copied());
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RowView<'a> {
    cols: &'a [usize],
    vals: &'a [Complex64],
}

impl<'a> RowView<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, Complex64)> + 'a {
        self.cols.iter().copied().zip(self.vals.iter().copied())
    }

    pub fn dot(&self, x: &[Complex64]) -> Complex64 {
        self.cols
            .iter()
            .zip(self.vals)
            .map(|(&j, &v)| v * x[j])
            .sum()
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }
}

/// Accumulates a sum of sparse matrices with real weights.
#[derive(Clone, Debug, Default)]
pub struct SparseAccumulator {
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl SparseAccumulator {
    pub fn add_scaled(&mut self, m: &SparseMatrix, weight: f64) {
        for (i, j, v) in m.triplets() {
            *self.entries.entry((i, j)).or_default() += v * weight;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn finish(self, n: usize) -> SparseMatrix {
        SparseMatrix::from_triplets(n, n, self.entries.into_iter().map(|((i, j), v)| (i, j, v)))
    }
}
