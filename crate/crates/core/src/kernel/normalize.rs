use rayon::prelude::*;

use super::sparse::CsrMatrix;
use crate::{Error, Result};

/// Symmetric, nonnegative, row-stochastic kernel matrix `P = diag(s) K diag(s)`.
#[derive(Clone, Debug)]
pub struct MarkovKernelMatrix {
    p: CsrMatrix,
    scaling: Vec<f64>,
}

impl MarkovKernelMatrix {
    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(p: CsrMatrix, scaling: Vec<f64>) -> Self {
        Self { p, scaling }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        self.p.row_sums().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.p
    }
}

/// Connectivity over strictly positive entries.
fn positive_pattern_connected(k: &CsrMatrix) -> bool {
    let n = k.n();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        let (c, v) = k.row(i);
        for (j, a) in c.iter().zip(v) {
            let j = *j as usize;
            if *a > 0.0 && !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Symmetric Sinkhorn scaling: iterate `s <- sqrt(s / (K s))` until every row
/// sum of `diag(s) K diag(s)` is within `tol` of one.
pub fn bistochastic_normalize(k: &CsrMatrix, tol: f64, max_iter: usize) -> Result<MarkovKernelMatrix> {
    if !(tol > 0.0) {
        return Err(Error::param("normalization tolerance must be positive"));
    }
    let n = k.n();
    if n == 0 {
        return Err(Error::param("empty kernel matrix"));
    }
    if (0..n).flat_map(|i| k.row(i).1).any(|a| *a < 0.0 || !a.is_finite()) {
        return Err(Error::param("kernel matrix must be finite and nonnegative"));
    }
    if !positive_pattern_connected(k) {
        return Err(Error::Ergodicity(
            "kernel graph is disconnected; increase the neighbor count or bandwidth".into(),
        ));
    }

    let mut s: Vec<f64> = k.row_sums().iter().map(|r| 1.0 / r.sqrt()).collect();
    let mut ks = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        k.mul_vec(&s, &mut ks);
        residual = s
            .par_iter()
            .zip(&ks)
            .map(|(a, b)| (a * b - 1.0).abs())
            .reduce(|| 0.0, f64::max);
        if residual <= tol {
            let mut p = k.clone();
            let row_ptr = p.row_ptr().to_vec();
            let cols = p.cols().to_vec();
            let vals = p.vals_mut();
            for i in 0..n {
                for e in row_ptr[i]..row_ptr[i + 1] {
                    vals[e] *= s[i] * s[cols[e] as usize];
                }
            }
            return Ok(MarkovKernelMatrix { p, scaling: s });
        }
        s.par_iter_mut().zip(&ks).for_each(|(a, b)| *a = (*a / b).sqrt());
    }
    Err(Error::NormalizationFailed {
        iterations: max_iter,
        residual,
    })
}
