use rayon::prelude::*;

/// Compressed sparse rows with `u32` column indices. Rows are kept sorted by
/// column.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub(crate) fn from_parts(n: usize, row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(cols.len(), vals.len());
        debug_assert_eq!(*row_ptr.last().unwrap(), cols.len());
        Self { n, row_ptr, cols, vals }
    }

    /// Build from a dense square matrix, keeping nonzero entries.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let mut cols = vec![];
        let mut vals = vec![];
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            for (j, v) in r.iter().enumerate() {
                if *v != 0.0 {
                    cols.push(j as u32);
                    vals.push(*v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self::from_parts(n, row_ptr, cols, vals)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&(j as u32)) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub(crate) fn vals_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub(crate) fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub(crate) fn cols(&self) -> &[u32] {
        &self.cols
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(j, a)| a * x[*j as usize]).sum();
        });
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).into_par_iter().all(|i| {
            let (c, v) = self.row(i);
            c.iter()
                .zip(v)
                .all(|(j, a)| (self.get(*j as usize, i) - a).abs() <= tol)
        })
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                m[(i, *j as usize)] = *a;
            }
        }
        m
    }
}
