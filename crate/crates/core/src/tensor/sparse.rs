use crate::error::{GkdError, Result};

use super::Tensor;

/// Compressed sparse row matrix. Used as a constant operator: gradients flow
/// only through the dense operand it multiplies.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(GkdError::invalid(
                    "sparse index",
                    format!("({r}, {c}) outside {rows}x{cols}"),
                ));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).expect("in range")
    }

    /// A matrix with no stored entries.
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(col, value)` pairs of one row, columns ascending.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    /// Largest |S_ij − S_ji| over stored entries.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Checks the CSR structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.rows + 1 {
            return Err(GkdError::invalid("row_offsets", "length must be rows + 1"));
        }
        for r in 0..self.rows {
            let cols = &self.col_indices[self.row_offsets[r]..self.row_offsets[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GkdError::invalid(
                    "col_indices",
                    format!("row {r} not strictly increasing"),
                ));
            }
            if cols.iter().any(|&c| c >= self.cols) {
                return Err(GkdError::invalid(
                    "col_indices",
                    format!("row {r} out of range"),
                ));
            }
        }
        Ok(())
    }

    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(GkdError::dim(
                "spmm",
                format!("dense operand with {} rows", self.cols),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        let xs = x.data();
        let os = out.data_mut();
        for r in 0..self.rows {
            let orow = &mut os[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                for (o, xv) in orow.iter_mut().zip(&xs[c * d..(c + 1) * d]) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `out += Sᵀ · g` where `g` has `self.rows` rows.
    pub(crate) fn mul_transpose_into(&self, g: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let grow = &g[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                for (o, gv) in out[c * d..(c + 1) * d].iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }
}
