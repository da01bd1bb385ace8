//! Thick-restart Lanczos for the largest eigenpairs of a symmetric operator.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Residual tolerance `|A x - θ x| <= tol · max(1, |θ|)`.
    pub tol: f64,
    /// Operator applications allowed before giving up.
    pub max_matvecs: usize,
    /// Krylov subspace size; `None` picks `max(2k, k + 32)`.
    pub subspace: Option<usize>,
    pub seed: u64,
}

impl LanczosOptions {
    pub fn for_count(k: usize) -> Self {
        Self {
            tol: 1e-10,
            max_matvecs: 300 * k.max(1),
            subspace: None,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    /// Nonincreasing.
    pub values: Vec<f64>,
    /// Orthonormal columns, one per value.
    pub vectors: DMatrix<f64>,
    pub matvecs: usize,
    pub restarts: usize,
    /// Largest residual norm among the returned pairs.
    pub max_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed chunks keep the result independent of thread scheduling.
    let partials: Vec<f64> = a
        .par_chunks(4096)
        .zip(b.par_chunks(4096))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Orthogonalize `w` against `basis` (two passes). Returns the accumulated
/// projection coefficients.
fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut coef = vec![0.0; basis.len()];
    for _ in 0..2 {
        let c: Vec<f64> = basis.par_iter().map(|v| dot(v, w)).collect();
        // Classical Gram-Schmidt update, fused over the basis.
        let n = w.len();
        w.par_chunks_mut(2048).enumerate().for_each(|(b, chunk)| {
            let off = b * 2048;
            for (v, ci) in basis.iter().zip(&c) {
                let vs = &v[off..(off + chunk.len()).min(n)];
                for (x, y) in chunk.iter_mut().zip(vs) {
                    *x -= ci * y;
                }
            }
        });
        coef.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    coef
}

fn norm(w: &[f64]) -> f64 {
    dot(w, w).sqrt()
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng, basis: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(basis, &mut v);
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
}

/// Largest `k` eigenpairs of the symmetric `n×n` operator `apply(x, y): y = A x`.
pub fn lanczos_largest<F>(apply: F, n: usize, k: usize, opts: &LanczosOptions) -> Result<LanczosResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    if k == 0 || k > n {
        return Err(Error::param(format!("requested {k} eigenpairs of a {n}x{n} operator")));
    }
    let m = opts.subspace.unwrap_or((2 * k).max(k + 32)).min(n);
    if m < k + 1 || m >= n {
        return Err(Error::param(
            "Krylov subspace must satisfy k < m < n; use a dense solver",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(random_unit(n, &mut rng, &[]));
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut w = vec![0.0; n];
    let mut matvecs = 0;
    let mut restarts = 0;
    let keep = (k + (m - k) / 2).min(m - 1);

    loop {
        // Extend the basis to m vectors.
        let mut beta = 0.0;
        let mut next: Vec<f64> = Vec::new();
        for j in basis.len() - 1..m {
            apply(&basis[j], &mut w);
            matvecs += 1;
            let coef = orthogonalize(&basis, &mut w);
            for (i, c) in coef.iter().enumerate() {
                h[(i, j)] = *c;
                h[(j, i)] = *c;
            }
            beta = norm(&w);
            let scale = h[(j, j)].abs().max(1.0);
            let fresh = if beta <= 1e-13 * scale {
                // Invariant subspace found: continue with a fresh direction.
                beta = 0.0;
                random_unit(n, &mut rng, &basis)
            } else {
                w.iter().map(|x| x / beta).collect()
            };
            if j + 1 < m {
                basis.push(fresh);
            } else {
                next = fresh;
            }
        }

        let eig = SymmetricEigen::new(h.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let theta: Vec<f64> = order.iter().map(|i| eig.eigenvalues[*i]).collect();
        let s = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        let resid: Vec<f64> = (0..m).map(|i| (beta * s[(m - 1, i)]).abs()).collect();
        let converged = (0..k).all(|i| resid[i] <= opts.tol * theta[i].abs().max(1.0));
        let out_of_budget = matvecs + (m - keep) > opts.max_matvecs;

        let count = if converged || out_of_budget { k } else { keep };
        // Ritz vectors for the first `count` columns of S.
        let ritz: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|c| {
                let mut x = vec![0.0; n];
                for (r, v) in basis.iter().enumerate() {
                    let a = s[(r, c)];
                    if a != 0.0 {
                        for (xi, vi) in x.iter_mut().zip(v) {
                            *xi += a * vi;
                        }
                    }
                }
                x
            })
            .collect();

        if converged {
            let vectors = DMatrix::from_fn(n, k, |r, c| ritz[c][r]);
            let max_residual = resid[..k].iter().cloned().fold(0.0, f64::max);
            return Ok(LanczosResult {
                values: theta[..k].to_vec(),
                vectors,
                matvecs,
                restarts,
                max_residual,
            });
        }
        if out_of_budget {
            let worst = (0..k).map(|i| resid[i]).fold(0.0, f64::max);
            return Err(Error::Eigensolve(format!(
                "no convergence after {matvecs} operator applications (largest residual {worst:e})"
            )));
        }

        restarts += 1;
        basis = ritz;
        h.fill(0.0);
        for i in 0..keep {
            h[(i, i)] = theta[i];
        }
        basis.push(next);
    }
}

/// Dense fallback: all eigenpairs, nonincreasing.
pub fn dense_largest(a: DMatrix<f64>, k: usize) -> Result<LanczosResult> {
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(Error::param(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolve("dense symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|x, y| eig.eigenvalues[*y].total_cmp(&eig.eigenvalues[*x]));
    order.truncate(k);
    Ok(LanczosResult {
        values: order.iter().map(|i| eig.eigenvalues[*i]).collect(),
        vectors: DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]),
        matvecs: 0,
        restarts: 0,
        max_residual: 0.0,
    })
}
