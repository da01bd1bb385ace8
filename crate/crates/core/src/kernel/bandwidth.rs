use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::SparseSymmetricGraph;
use super::sparse::CsrMatrix;
use crate::{Error, Result};

/// Per-point kernel bandwidths `σ(y) > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthField {
    sigma: Vec<f64>,
}

impl BandwidthField {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(i) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::DegenerateBandwidth { point: i });
        }
        Ok(Self { sigma })
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }
}

/// `σ(y) = sqrt(mean of squared distances from y to its k_b nearest
/// neighbors)`, self excluded.
pub fn bandwidth_field(graph: &SparseSymmetricGraph, k_b: usize) -> Result<BandwidthField> {
    if k_b == 0 || k_b > graph.r() {
        return Err(Error::param(format!(
            "bandwidth neighbor count k_b = {k_b} must satisfy 1 <= k_b <= r = {}",
            graph.r()
        )));
    }
    let sigma: Vec<f64> = (0..graph.n())
        .into_par_iter()
        .map_init(Vec::new, |buf: &mut Vec<(f64, u32)>, i| {
            let (cols, d2) = graph.row(i);
            buf.clear();
            buf.extend(
                cols.iter()
                    .zip(d2)
                    .filter(|(j, _)| **j as usize != i)
                    .map(|(j, d)| (*d, *j)),
            );
            if buf.is_empty() {
                return f64::NAN;
            }
            let k = k_b.min(buf.len());
            buf.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mean = buf[..k].iter().map(|e| e.0).sum::<f64>() / k as f64;
            mean.sqrt()
        })
        .collect();
    BandwidthField::new(sigma)
}

/// Log-spaced candidate bandwidth scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for EpsilonGrid {
    fn default() -> Self {
        Self {
            min: 1e-4,
            max: 1e4,
            count: 64,
        }
    }
}

impl EpsilonGrid {
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.min.log10(), self.max.log10());
        (0..self.count)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / (self.count - 1) as f64))
            .collect()
    }
}

/// Kernel sums `T(ε)` over a grid and the selected `ε*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonScan {
    pub grid: Vec<f64>,
    pub kernel_sums: Vec<f64>,
    /// `d log T / d log ε`, centered in the interior and one-sided at the
    /// ends.
    pub slopes: Vec<f64>,
    pub selected: f64,
    pub selected_index: usize,
    pub max_slope: f64,
    /// Set when the steepest slope sits on the grid boundary.
    pub boundary_warning: bool,
}

impl EpsilonScan {
    /// Dimension estimate `2 · max slope`.
    pub fn dimension_estimate(&self) -> f64 {
        2.0 * self.max_slope
    }
}

/// Scan `T(ε) = N⁻² Σ exp(-d²/(ε σ σ'))` over retained pairs and select the
/// `ε` of steepest log-log slope.
pub fn tune_epsilon(graph: &SparseSymmetricGraph, sigma: &BandwidthField, grid: &[f64]) -> Result<EpsilonScan> {
    if grid.len() < 3 {
        return Err(Error::param("epsilon grid needs at least 3 points"));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("epsilon grid must be positive and strictly increasing"));
    }
    if grid[grid.len() - 1] / grid[0] < 1e4 * (1.0 - 1e-12) {
        return Err(Error::param("epsilon grid must span at least 4 decades"));
    }
    let s = sigma.values();
    if s.len() != graph.n() {
        return Err(Error::param("bandwidth field does not match the graph"));
    }
    let inv_eps: Vec<f64> = grid.iter().map(|e| 1.0 / e).collect();
    let g = grid.len();
    // Fixed row blocks keep the summation order independent of scheduling.
    const BLOCK: usize = 1024;
    let n = graph.n();
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; g];
            for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                let (cols, d2) = graph.row(i);
                for (j, d) in cols.iter().zip(d2) {
                    let a = d / (s[i] * s[*j as usize]);
                    if a == 0.0 {
                        acc.iter_mut().for_each(|t| *t += 1.0);
                        continue;
                    }
                    for (t, ie) in acc.iter_mut().zip(&inv_eps) {
                        let x = a * ie;
                        // exp(-746) underflows to zero.
                        if x < 745.0 {
                            *t += (-x).exp();
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; g];
    for p in &partials {
        sums.iter_mut().zip(p).for_each(|(x, y)| *x += y);
    }
    let n2 = (graph.n() as f64).powi(2);
    let kernel_sums: Vec<f64> = sums.iter().map(|t| t / n2).collect();
    let lt: Vec<f64> = kernel_sums.iter().map(|t| t.ln()).collect();
    let le: Vec<f64> = grid.iter().map(|e| e.ln()).collect();
    let slopes: Vec<f64> = (0..g)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == g - 1 {
                (g - 2, g - 1)
            } else {
                (k - 1, k + 1)
            };
            (lt[b] - lt[a]) / (le[b] - le[a])
        })
        .collect();
    let (selected_index, max_slope) =
        (1..g - 1).map(|k| (k, slopes[k])).fold(
            (1, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    let boundary_warning = slopes[0] >= max_slope || slopes[g - 1] >= max_slope;
    Ok(EpsilonScan {
        grid: grid.to_vec(),
        kernel_sums,
        slopes,
        selected: grid[selected_index],
        selected_index,
        max_slope,
        boundary_warning,
    })
}

/// `K(y, y') = exp(-d²(y, y')/(ε σ(y) σ(y')))` on retained pairs.
pub fn assemble_kernel(graph: &SparseSymmetricGraph, sigma: &BandwidthField, epsilon: f64) -> Result<CsrMatrix> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon must be positive"));
    }
    let s = sigma.values();
    if s.len() != graph.n() {
        return Err(Error::param("bandwidth field does not match the graph"));
    }
    let row_ptr = graph.row_ptr().to_vec();
    let mut vals = vec![0.0; graph.nnz()];
    vals.par_chunks_mut(1 << 14).enumerate().for_each(|(chunk, out)| {
        let start = chunk << 14;
        // First row containing `start`.
        let mut i = row_ptr.partition_point(|p| *p <= start) - 1;
        for (off, v) in out.iter_mut().enumerate() {
            let e = start + off;
            while row_ptr[i + 1] <= e {
                i += 1;
            }
            let j = graph.cols()[e] as usize;
            *v = (-graph.dist2()[e] / (epsilon * (s[i] * s[j]))).exp();
        }
    });
    Ok(CsrMatrix::from_parts(graph.n(), row_ptr, graph.cols().to_vec(), vals))
}

#[cfg(test)]
mod tests {
    use super::super::graph::knn_graph;
    use super::*;

    #[test]
    fn k_b_one_is_nearest_distance() {
        let g = knn_graph(&[0.0, 1.0, 3.0, 7.0], 1, 2).unwrap();
        let s = bandwidth_field(&g, 1).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn uniform_grid_interior_is_spacing() {
        let h = 0.25;
        let pts: Vec<f64> = (0..40).map(|i| i as f64 * h).collect();
        let g = knn_graph(&pts, 1, 4).unwrap();
        let s = bandwidth_field(&g, 2).unwrap();
        for i in 2..38 {
            assert!((s.values()[i] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn bandwidth_is_homogeneous() {
        let pts: Vec<f64> = (0..30).map(|i| ((i * i) as f64).sin()).collect();
        let scaled: Vec<f64> = pts.iter().map(|x| 3.5 * x).collect();
        let a = bandwidth_field(&knn_graph(&pts, 1, 5).unwrap(), 3).unwrap();
        let b = bandwidth_field(&knn_graph(&scaled, 1, 5).unwrap(), 3).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((3.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_are_degenerate() {
        let g = knn_graph(&[0.0, 0.0, 5.0], 1, 1).unwrap();
        assert!(matches!(
            bandwidth_field(&g, 1),
            Err(Error::DegenerateBandwidth { point: 0 })
        ));
        assert!(bandwidth_field(&g, 2).is_err());
    }

    #[test]
    fn kernel_sum_limits() {
        let pts: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let g = knn_graph(&pts, 1, 6).unwrap();
        let s = bandwidth_field(&g, 3).unwrap();
        let scan = tune_epsilon(&g, &s, &[1e-12, 1e-3, 1.0, 1e3, 1e12]).unwrap();
        let n2 = 2500.0;
        assert!((scan.kernel_sums[0] - 50.0 / n2).abs() < 1e-15);
        assert!((scan.kernel_sums[4] - g.nnz() as f64 / n2).abs() < 1e-9);
        assert!(scan.kernel_sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn circle_slope_is_half() {
        let n = 800;
        let pts: Vec<f64> = (0..n)
            .flat_map(|k| {
                let th = k as f64 * std::f64::consts::TAU / (50.0 * 2f64.sqrt());
                [th.cos(), th.sin()]
            })
            .collect();
        let g = knn_graph(&pts, 2, 64).unwrap();
        let s = bandwidth_field(&g, 32).unwrap();
        let scan = tune_epsilon(&g, &s, &EpsilonGrid::default().values()).unwrap();
        assert!((scan.max_slope - 0.5).abs() <= 0.2, "{}", scan.max_slope);
        assert!(!scan.boundary_warning);
    }

    #[test]
    fn grid_validation() {
        let pts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g = knn_graph(&pts, 1, 2).unwrap();
        let s = bandwidth_field(&g, 1).unwrap();
        assert!(tune_epsilon(&g, &s, &[1.0, 10.0]).is_err());
        assert!(tune_epsilon(&g, &s, &[1.0, 10.0, 100.0]).is_err());
        assert!(tune_epsilon(&g, &s, &[1.0, 0.5, 1e6]).is_err());
    }

    #[test]
    fn kernel_entries() {
        let g = knn_graph(&[0.0, 1.0], 1, 1).unwrap();
        let s = BandwidthField::new(vec![1.0, 1.0]).unwrap();
        let k = assemble_kernel(&g, &s, 1.0).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 1.0);
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.get(0, 1), k.get(1, 0));
    }

    #[test]
    fn kernel_is_symmetric() {
        let pts: Vec<f64> = (0..200).map(|i| ((i * 7) as f64).sin()).collect();
        let g = knn_graph(&pts, 2, 9).unwrap();
        let s = bandwidth_field(&g, 4).unwrap();
        let k = assemble_kernel(&g, &s, 0.8).unwrap();
        assert!(k.is_symmetric(0.0));
        for i in 0..k.n() {
            assert_eq!(k.get(i, i), 1.0);
        }
    }
}
