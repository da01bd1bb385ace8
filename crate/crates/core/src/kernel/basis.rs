use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::lanczos::{dense_largest, lanczos_largest, LanczosOptions, LanczosResult};
use super::normalize::MarkovKernelMatrix;
use crate::dynamics::{format_f64, parse_f64};
use crate::{Error, Result};

/// Below this size the eigenproblem is solved densely.
const DENSE_LIMIT: usize = 600;

/// Orthonormal basis of `L²(μ_N)` sampled on the training points.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    /// `N×L`, column `j` holds `φ_j(x_n)`.
    values: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

/// Eigensolver statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EigenSolveInfo {
    pub matvecs: usize,
    pub restarts: usize,
    pub max_residual: f64,
    /// Adjacent pairs whose eigenvalues agree to the solver tolerance.
    pub near_ties: Vec<usize>,
}

impl EigenBasis {
    pub fn new(values: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if values.ncols() != eigenvalues.len() || values.ncols() == 0 || values.nrows() < values.ncols() {
            return Err(Error::param("basis values and eigenvalues have inconsistent shapes"));
        }
        if values.iter().chain(&eigenvalues).any(|v| !v.is_finite()) {
            return Err(Error::param("basis contains non-finite values"));
        }
        Ok(Self { values, eigenvalues })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn l(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Leading `l` columns.
    pub fn truncate(&self, l: usize) -> Result<Self> {
        if l == 0 || l > self.l() {
            return Err(Error::param(format!(
                "cannot truncate a basis of size {} to {l}",
                self.l()
            )));
        }
        Ok(Self {
            values: self.values.columns(0, l).into_owned(),
            eigenvalues: self.eigenvalues[..l].to_vec(),
        })
    }

    /// `max_{j,k} |(1/N) Σ_n φ_j φ_k − δ_jk|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.values.tr_mul(&self.values) / self.n() as f64;
        (g - DMatrix::identity(self.l(), self.l())).amax()
    }

    /// Largest deviation of column 0 from the constant 1.
    pub fn constant_error(&self) -> f64 {
        self.values
            .column(0)
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Orthonormality within `tol`, `λ_0 = 1` simple with constant
    /// eigenvector, and `1 >= λ_0 >= λ_1 >= ... >= 0` up to `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let ortho = self.orthonormality_error();
        if ortho > tol {
            return Err(Error::Invariant(format!("basis orthonormality error {ortho:e}")));
        }
        let lam = &self.eigenvalues;
        if (lam[0] - 1.0).abs() > tol {
            return Err(Error::Invariant(format!("leading eigenvalue {} is not 1", lam[0])));
        }
        if lam.len() > 1 && lam[1] >= lam[0] - tol {
            return Err(Error::Ergodicity("leading eigenvalue is not simple".into()));
        }
        if lam.windows(2).any(|w| w[1] > w[0] + tol) || lam.iter().any(|l| *l < -tol || *l > 1.0 + tol) {
            return Err(Error::Invariant("eigenvalues out of order or outside [0, 1]".into()));
        }
        let c = self.constant_error();
        if c > tol.sqrt() {
            return Err(Error::Invariant(format!(
                "leading eigenvector deviates from a constant by {c:e}"
            )));
        }
        Ok(())
    }

    /// CSV: header `row,phi_0,...`, one `lambda` row, then one row per sample.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string()];
        header.extend((0..self.l()).map(|j| format!("phi_{j}")));
        out.write_record(&header)?;
        let mut rec = vec!["lambda".to_string()];
        rec.extend(self.eigenvalues.iter().map(|v| format_f64(*v)));
        out.write_record(&rec)?;
        for n in 0..self.n() {
            rec.clear();
            rec.push(n.to_string());
            rec.extend(self.values.row(n).iter().map(|v| format_f64(*v)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        let l = header.len().saturating_sub(1);
        if l == 0 || &header[0] != "row" || (0..l).any(|j| header[j + 1] != *format!("phi_{j}")) {
            return Err(Error::format("basis CSV header must be row,phi_0,...,phi_{L-1}"));
        }
        let mut records = rdr.records();
        let lam_rec = records
            .next()
            .ok_or_else(|| Error::format("basis CSV has no eigenvalue row"))??;
        if &lam_rec[0] != "lambda" {
            return Err(Error::format("first basis CSV row must be the eigenvalue row"));
        }
        let eigenvalues = lam_rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, 0))
            .collect::<Result<Vec<_>>>()?;
        let mut flat = Vec::new();
        for (n, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != l + 1 || rec[0] != *n.to_string() {
                return Err(Error::format(format!("basis CSV row {n} is malformed")));
            }
            for f in rec.iter().skip(1) {
                flat.push(parse_f64(f, n + 1)?);
            }
        }
        let n = flat.len() / l;
        if n < l {
            return Err(Error::format("basis CSV has fewer samples than basis functions"));
        }
        Self::new(DMatrix::from_row_slice(n, l, &flat), eigenvalues)
    }
}

/// Leading `l` eigenpairs of `P`, scaled to unit norm in the `1/N`-weighted
/// inner product. Column 0 is made positive; in every other column the entry
/// of largest magnitude is made positive.
pub fn eigenbasis(p: &MarkovKernelMatrix, l: usize) -> Result<(EigenBasis, EigenSolveInfo)> {
    eigenbasis_with(p, l, &LanczosOptions::for_count(l))
}

pub fn eigenbasis_with(
    p: &MarkovKernelMatrix,
    l: usize,
    opts: &LanczosOptions,
) -> Result<(EigenBasis, EigenSolveInfo)> {
    let n = p.n();
    if l == 0 || l > n {
        return Err(Error::param(format!(
            "basis size L = {l} must satisfy 1 <= L <= N = {n}"
        )));
    }
    let m = opts.subspace.unwrap_or((2 * l).max(l + 32));
    let res: LanczosResult = if n <= DENSE_LIMIT || m >= n {
        dense_largest(p.matrix().to_dense(), l)?
    } else {
        let a = p.matrix();
        lanczos_largest(|x, y| a.mul_vec(x, y), n, l, opts)?
    };
    if l > 1 && res.values[1] >= res.values[0] - 10.0 * opts.tol {
        return Err(Error::Ergodicity(format!(
            "leading eigenvalue is not simple ({} and {})",
            res.values[0], res.values[1]
        )));
    }
    let near_ties = res
        .values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0] - w[1]).abs() <= 10.0 * opts.tol)
        .map(|(i, _)| i)
        .collect();

    let mut values = res.vectors * (n as f64).sqrt();
    for j in 0..l {
        let mut col = values.column_mut(j);
        let flip = if j == 0 {
            col.sum() < 0.0
        } else {
            let (i, _) = col.iter().enumerate().fold(
                (0, 0.0),
                |best, (i, v)| {
                    if v.abs() > best.1 {
                        (i, v.abs())
                    } else {
                        best
                    }
                },
            );
            col[i] < 0.0
        };
        if flip {
            col.neg_mut();
        }
    }
    let info = EigenSolveInfo {
        matvecs: res.matvecs,
        restarts: res.restarts,
        max_residual: res.max_residual,
        near_ties,
    };
    Ok((EigenBasis::new(values, res.values)?, info))
}
