//! Data-driven orthonormal basis from a kNN-sparsified, variable-bandwidth
//! Gaussian kernel with symmetric Markov normalization.

mod bandwidth;
mod basis;
mod graph;
mod lanczos;
mod normalize;
mod sparse;

pub use bandwidth::{assemble_kernel, bandwidth_field, tune_epsilon, BandwidthField, EpsilonGrid, EpsilonScan};
pub use basis::{eigenbasis, eigenbasis_with, EigenBasis, EigenSolveInfo};
pub use graph::{default_neighbor_count, knn_graph, SparseSymmetricGraph};
pub use lanczos::{dense_largest, lanczos_largest, LanczosOptions, LanczosResult};
pub use normalize::{bistochastic_normalize, MarkovKernelMatrix};
pub use sparse::CsrMatrix;

use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Neighbor count; `None` uses [`default_neighbor_count`].
    pub r: Option<usize>,
    pub k_b: usize,
    pub epsilon_grid: EpsilonGrid,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub eigen_tol: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            r: None,
            k_b: 32,
            epsilon_grid: EpsilonGrid::default(),
            sinkhorn_tol: 1e-11,
            sinkhorn_max_iter: 20_000,
            eigen_tol: 1e-10,
        }
    }
}

/// What the training pipeline chose and measured along the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub n: usize,
    pub r: usize,
    pub k_b: usize,
    pub graph_density: f64,
    pub epsilon: f64,
    pub epsilon_boundary_warning: bool,
    pub dimension_estimate: f64,
    pub max_row_sum_deviation: f64,
    pub eigen_matvecs: usize,
    pub eigen_restarts: usize,
    pub eigen_max_residual: f64,
    pub eigen_near_ties: Vec<usize>,
}

/// Points (row-major, dimension `dim`) to an `l`-function eigenbasis.
pub fn build_basis(
    points: &[f64],
    dim: usize,
    l: usize,
    params: &KernelParams,
) -> Result<(EigenBasis, KernelDiagnostics)> {
    let n = points.len().checked_div(dim).unwrap_or(0);
    let k_b = params.k_b.min(n.saturating_sub(1)).max(1);
    let r = params.r.unwrap_or_else(|| default_neighbor_count(n, k_b));
    let graph = knn_graph(points, dim, r)?;
    let sigma = bandwidth_field(&graph, k_b)?;
    let scan = tune_epsilon(&graph, &sigma, &params.epsilon_grid.values())?;
    let kernel = assemble_kernel(&graph, &sigma, scan.selected)?;
    let graph_density = graph.density();
    drop(graph);
    let p = bistochastic_normalize(&kernel, params.sinkhorn_tol, params.sinkhorn_max_iter)?;
    drop(kernel);
    let opts = LanczosOptions {
        tol: params.eigen_tol,
        ..LanczosOptions::for_count(l)
    };
    let (basis, info) = eigenbasis_with(&p, l, &opts)?;
    let diag = KernelDiagnostics {
        n,
        r,
        k_b,
        graph_density,
        epsilon: scan.selected,
        epsilon_boundary_warning: scan.boundary_warning,
        dimension_estimate: scan.dimension_estimate(),
        max_row_sum_deviation: p.max_row_sum_deviation(),
        eigen_matvecs: info.matvecs,
        eigen_restarts: info.restarts,
        eigen_max_residual: info.max_residual,
        eigen_near_ties: info.near_ties,
    };
    Ok((basis, diag))
}
