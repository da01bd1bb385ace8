use rayon::prelude::*;

use crate::{Error, Result};

/// Symmetrized r-nearest-neighbor graph with squared distances.
///
/// A pair is retained when either endpoint lists the other among its `r`
/// nearest neighbors (self excluded). Every point is also paired with itself
/// at distance zero.
#[derive(Clone, Debug)]
pub struct SparseSymmetricGraph {
    n: usize,
    r: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    dist2: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Brute-force kNN over row-major points of dimension `dim`, symmetrized.
/// Ties in distance are broken by lower index.
pub fn knn_graph(points: &[f64], dim: usize, r: usize) -> Result<SparseSymmetricGraph> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::param("point buffer does not match the dimension"));
    }
    let n = points.len() / dim;
    if r == 0 || r >= n {
        return Err(Error::param(format!(
            "neighbor count r = {r} must satisfy 1 <= r < n = {n}"
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::param("too many points"));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];

    // Each row: r nearest (excluding self), sorted by column.
    let knn: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf: &mut Vec<(f64, u32)>, i| {
                buf.clear();
                let pi = pt(i);
                buf.extend((0..n).filter(|j| *j != i).map(|j| (sq_dist(pi, pt(j)), j as u32)));
                if r < buf.len() {
                    buf.select_nth_unstable_by(r - 1, by_distance);
                    buf.truncate(r);
                }
                let mut row: Vec<(u32, f64)> = buf.iter().map(|(d, j)| (*j, *d)).collect();
                row.sort_unstable_by_key(|e| e.0);
                row
            },
        )
        .collect();

    let listed = |a: usize, b: u32| knn[a].binary_search_by_key(&b, |e| e.0).is_ok();

    // Reverse edges that `j` does not already list.
    let mut extra: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, row) in knn.iter().enumerate() {
        for (j, d) in row {
            if !listed(*j as usize, i as u32) {
                extra[*j as usize].push((i as u32, *d));
            }
        }
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let total: usize = (0..n).map(|i| knn[i].len() + extra[i].len() + 1).sum();
    let mut cols = Vec::with_capacity(total);
    let mut dist2 = Vec::with_capacity(total);
    let mut merged: Vec<(u32, f64)> = Vec::new();
    for (i, row) in knn.into_iter().enumerate() {
        merged.clear();
        merged.extend(row);
        merged.extend_from_slice(&extra[i]);
        merged.push((i as u32, 0.0));
        merged.sort_unstable_by_key(|e| e.0);
        for (j, d) in &merged {
            cols.push(*j);
            dist2.push(*d);
        }
        row_ptr.push(cols.len());
        // Release per-row buffers as we go to keep peak memory down.
        extra[i] = Vec::new();
    }

    Ok(SparseSymmetricGraph {
        n,
        r,
        row_ptr,
        cols,
        dist2,
    })
}

impl SparseSymmetricGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of stored (ordered) pairs, self-pairs included.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n as f64 * self.n as f64)
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.dist2[a..b])
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).0.binary_search(&(j as u32)).is_ok()
    }

    pub(crate) fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub(crate) fn cols(&self) -> &[u32] {
        &self.cols
    }

    pub(crate) fn dist2(&self) -> &[f64] {
        &self.dist2
    }

    /// Whether every point can reach every other along retained pairs.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in self.row(i).0 {
                let j = *j as usize;
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }
}

/// Default sparsity: about 8% of the sample count, and never below
/// `k_b + 1`.
pub fn default_neighbor_count(n: usize, k_b: usize) -> usize {
    let r = ((0.08 * n as f64).ceil() as usize).max(k_b + 1);
    r.min(n.saturating_sub(1)).max(1)
}
