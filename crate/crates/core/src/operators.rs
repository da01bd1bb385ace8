//! Evolution and measurement operators: data-driven shift matrices, and the
//! analytic Fourier backend for rotation on the circle.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::filter::DensityMatrix;
use crate::kernel::EigenBasis;
use crate::quantizer::{Binning, ProjectorSet};
use crate::{Complex64, Error, Result};

/// `q`-step shift operator projected onto a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftMatrix {
    pub q: usize,
    pub entries: DMatrix<f64>,
}

impl ShiftMatrix {
    pub fn largest_singular_value(&self) -> f64 {
        self.entries.singular_values().max()
    }
}

/// `U_jk = (1/N) Σ_{n=0}^{N-1-q} φ_j(x_n) φ_k(x_{n+q})`.
pub fn shift_matrix(basis: &EigenBasis, q: usize) -> Result<ShiftMatrix> {
    let n = basis.n();
    if q >= n {
        return Err(Error::param(format!("shift of {q} steps needs more than {n} samples")));
    }
    let phi = basis.values();
    let head = phi.rows(0, n - q);
    let tail = phi.rows(q, n - q);
    Ok(ShiftMatrix {
        q,
        entries: head.tr_mul(&tail) / n as f64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionMode {
    /// A separate direct sum for every step count.
    #[default]
    Direct,
    /// Powers of the one-step matrix.
    Power,
}

/// `U^(q)` in either mode.
pub fn shift_power(basis: &EigenBasis, q: usize, mode: EvolutionMode) -> Result<ShiftMatrix> {
    match mode {
        EvolutionMode::Direct => shift_matrix(basis, q),
        EvolutionMode::Power => {
            let one = shift_matrix(basis, 1.min(q))?;
            if q <= 1 {
                return Ok(ShiftMatrix {
                    q,
                    entries: one.entries,
                });
            }
            Ok(ShiftMatrix {
                q,
                entries: one.entries.pow(q as u32),
            })
        }
    }
}

/// Shift matrices for every step count in `qs`, assembled in parallel.
pub fn shift_matrices(basis: &EigenBasis, qs: &[usize], mode: EvolutionMode) -> Result<Vec<ShiftMatrix>> {
    match mode {
        EvolutionMode::Direct => qs.par_iter().map(|q| shift_matrix(basis, *q)).collect(),
        EvolutionMode::Power => qs.iter().map(|q| shift_power(basis, *q, mode)).collect(),
    }
}

/// `sin(π x)` with exact zeros at integers and exact ±1 at half-integers.
pub(crate) fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).floor();
    if r == 0.0 || r == 1.0 {
        0.0
    } else if r == 0.5 {
        1.0
    } else if r == 1.5 {
        -1.0
    } else {
        (PI * r).sin()
    }
}

pub(crate) fn cos_pi(x: f64) -> f64 {
    sin_pi(x + 0.5)
}

/// `sin(π p / q)` for integers, reduced exactly before the float evaluation.
fn sin_pi_ratio(p: i64, q: i64) -> f64 {
    let r = p.rem_euclid(2 * q);
    if r == 0 || r == q {
        0.0
    } else if 2 * r == q {
        1.0
    } else if 2 * r == 3 * q {
        -1.0
    } else {
        (PI * r as f64 / q as f64).sin()
    }
}

/// Fourier functions `e^{ijθ}`, `j = -L..=L`, stored at array index `j + L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCircleBasis {
    pub l_max: usize,
    pub omega: f64,
}

impl AnalyticCircleBasis {
    pub fn new(l_max: usize, omega: f64) -> Result<Self> {
        if !(omega.is_finite() && omega != 0.0) {
            return Err(Error::param("omega must be finite and nonzero"));
        }
        Ok(Self { l_max, omega })
    }

    pub fn dim(&self) -> usize {
        2 * self.l_max + 1
    }

    pub fn fourier_index(&self, i: usize) -> i64 {
        i as i64 - self.l_max as i64
    }

    /// Array index of the constant function.
    pub fn constant_index(&self) -> usize {
        self.l_max
    }

    pub fn stationary(&self) -> DensityMatrix<Complex64> {
        DensityMatrix::stationary(self.dim(), self.constant_index()).expect("index within dimension")
    }

    /// Diagonal Koopman matrix `diag(e^{ijωt})`.
    pub fn koopman(&self, t: f64) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| {
            if r == c {
                Complex64::from_polar(1.0, self.fourier_index(r) as f64 * self.omega * t)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// `ρ_t,jk = e^{i(k-j)ωt} ρ_0,jk`.
pub fn circle_phase_forecast(
    rho: &DensityMatrix<Complex64>,
    c: &AnalyticCircleBasis,
    t: f64,
) -> Result<DensityMatrix<Complex64>> {
    let d = c.dim();
    if rho.dim() != d {
        return Err(Error::param("state dimension does not match the Fourier basis"));
    }
    let m = rho.matrix();
    let phase: Vec<Complex64> = (0..d)
        .map(|i| Complex64::from_polar(1.0, c.fourier_index(i) as f64 * c.omega * t))
        .collect();
    DensityMatrix::from_matrix(DMatrix::from_fn(d, d, |j, k| phase[j].conj() * m[(j, k)] * phase[k]))
}

/// Projectors of `h = 1_[0, α)` in the Fourier basis: `E_1,jk` is
/// `(1/2π) ∫_0^α e^{imθ} dθ` with `m = k − j`, and `E_0 = I − E_1`.
/// Bin 0 holds `h = 0`, bin 1 holds `h = 1`.
pub fn circle_binary_projectors(alpha: f64, c: &AnalyticCircleBasis) -> Result<ProjectorSet<Complex64>> {
    if !(alpha > 0.0 && alpha < 2.0 * PI) {
        return Err(Error::param("alpha must lie in (0, 2π)"));
    }
    let d = c.dim();
    let a = alpha / (2.0 * PI);
    let e1 = DMatrix::from_fn(d, d, |j, k| {
        let m = c.fourier_index(k) - c.fourier_index(j);
        if m == 0 {
            Complex64::new(a, 0.0)
        } else {
            // e^{imα/2} sin(mα/2) / (π m)
            let x = m as f64 * a;
            let s = sin_pi(x) / (PI * m as f64);
            Complex64::new(cos_pi(x) * s, sin_pi(x) * s)
        }
    });
    let e0 = DMatrix::identity(d, d) - &e1;
    ProjectorSet::new(vec![e0, e1])
}

/// Boundaries `cos((1 − k/S)π)`, `k = 1..S-1`, of the equal-mass partition of
/// `cos θ` under the uniform measure.
pub fn circle_cos_boundaries(s: usize) -> Result<Binning> {
    if s == 0 {
        return Err(Error::param("partition needs at least one bin"));
    }
    Binning::new((1..s).map(|k| cos_pi((s - k) as f64 / s as f64)).collect())
}

/// Projectors of the equal-mass partition of `cos θ`. With `a_i = (1 − i/S)π`,
/// bin `i` is `(a_{i+1}, a_i] ∪ [−a_i, −a_{i+1})` and
/// `E_i,jk = (sin(m a_i) − sin(m a_{i+1})) / (π m)`, `m = k − j`.
pub fn circle_cos_projectors(s: usize, c: &AnalyticCircleBasis) -> Result<ProjectorSet<Complex64>> {
    if s == 0 {
        return Err(Error::param("partition needs at least one bin"));
    }
    let d = c.dim();
    let si = s as i64;
    let mats = (0..s)
        .map(|i| {
            let i = i as i64;
            DMatrix::from_fn(d, d, |j, k| {
                let m = c.fourier_index(k) - c.fourier_index(j);
                if m == 0 {
                    Complex64::new(1.0 / s as f64, 0.0)
                } else {
                    let v = (sin_pi_ratio(m * (si - i), si) - sin_pi_ratio(m * (si - i - 1), si)) / (PI * m as f64);
                    Complex64::new(v, 0.0)
                }
            })
        })
        .collect();
    ProjectorSet::new(mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// Composite Gauss-Legendre quadrature of `(1/2π) ∫ e^{imθ}` over
    /// `[a, b]`.
    fn quad(m: i64, a: f64, b: f64) -> Complex64 {
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let panels = 400;
        let h = (b - a) / panels as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * h;
            for (x, w) in nodes {
                let th = c + 0.5 * h * x;
                acc += Complex64::from_polar(0.5 * h * w, m as f64 * th);
            }
        }
        acc / (2.0 * PI)
    }

    fn c64_close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn sin_pi_exact_points() {
        assert_eq!(sin_pi(3.0), 0.0);
        assert_eq!(sin_pi(-2.0), 0.0);
        assert_eq!(sin_pi(2.5), 1.0);
        assert_eq!(cos_pi(1.0), -1.0);
        assert_eq!(sin_pi_ratio(12, 4), 0.0);
        assert_eq!(sin_pi_ratio(-6, 4), 1.0);
        assert!((sin_pi(0.25) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn binary_projector_examples() {
        let c = AnalyticCircleBasis::new(4, 1.0).unwrap();
        let e = circle_binary_projectors(PI, &c).unwrap();
        let l = c.constant_index();
        assert_eq!(e.get(1)[(l, l)], Complex64::new(0.5, 0.0));
        assert!(c64_close(e.get(1)[(l, l + 1)], Complex64::new(0.0, 1.0 / PI), 1e-16));
        assert_eq!(e.get(1)[(l, l + 2)], Complex64::new(0.0, 0.0));
        assert!(e.resolution_error() < 1e-15);
        assert_eq!(e.hermiticity_error(), 0.0);
    }

    #[test]
    fn binary_projectors_match_quadrature() {
        let c = AnalyticCircleBasis::new(6, 1.0).unwrap();
        for alpha in [PI, PI / 6.0, 2.0] {
            let e = circle_binary_projectors(alpha, &c).unwrap();
            for j in 0..c.dim() {
                for k in 0..c.dim() {
                    let m = c.fourier_index(k) - c.fourier_index(j);
                    assert!(c64_close(e.get(1)[(j, k)], quad(m, 0.0, alpha), 1e-12));
                    assert!(c64_close(e.get(0)[(j, k)], quad(m, alpha, 2.0 * PI), 1e-12));
                }
            }
        }
    }

    #[test]
    fn cos_projectors_match_quadrature() {
        let c = AnalyticCircleBasis::new(5, 1.0).unwrap();
        let s = 7;
        let e = circle_cos_projectors(s, &c).unwrap();
        assert!(e.resolution_error() < 1e-14);
        for i in 0..s {
            let a0 = (1.0 - i as f64 / s as f64) * PI;
            let a1 = (1.0 - (i + 1) as f64 / s as f64) * PI;
            for j in 0..c.dim() {
                assert!((e.get(i)[(j, j)].re - 1.0 / s as f64).abs() < 1e-15);
                for k in 0..c.dim() {
                    let m = c.fourier_index(k) - c.fourier_index(j);
                    let want = quad(m, a1, a0) + quad(m, -a0, -a1);
                    assert!(c64_close(e.get(i)[(j, k)], want, 1e-12), "{i} {j} {k}");
                }
            }
        }
    }

    #[test]
    fn cos_boundaries_and_binning() {
        let b = circle_cos_boundaries(4).unwrap();
        let want = [-(0.5f64.sqrt()), 0.0, 0.5f64.sqrt()];
        for (x, y) in b.boundaries().iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        // Bin i holds angles with cos θ in [ξ_i, ξ_{i+1}).
        assert_eq!(b.affiliation((PI).cos()), 0);
        assert_eq!(b.affiliation(0.0f64.cos()), 3);
    }

    #[test]
    fn phase_forecast() {
        let c = AnalyticCircleBasis::new(3, 1.3).unwrap();
        let d = c.dim();
        let psi: Vec<Complex64> = (0..d)
            .map(|i| Complex64::new(1.0 + i as f64, (i as f64).sin()))
            .collect();
        let rho = DensityMatrix::pure(&psi).unwrap();
        let same = circle_phase_forecast(&rho, &c, 0.0).unwrap();
        assert!(crate::quantizer::max_abs(&(same.matrix() - rho.matrix())) < 1e-15);
        let period = 2.0 * PI / c.omega;
        let back = circle_phase_forecast(&rho, &c, period).unwrap();
        assert!(crate::quantizer::max_abs(&(back.matrix() - rho.matrix())) < 1e-13);
        let bar = c.stationary();
        assert_eq!(circle_phase_forecast(&bar, &c, 17.0).unwrap(), bar);
        // Agrees with conjugation by the diagonal Koopman matrix.
        let t = 0.77;
        let via = crate::filter::forecast(&rho, &c.koopman(t)).unwrap();
        let direct = circle_phase_forecast(&rho, &c, t).unwrap();
        assert!(crate::quantizer::max_abs(&(via.matrix() - direct.matrix())) < 1e-14);
        assert!((direct.purity() - rho.purity()).abs() < 1e-14);
    }

    fn toy_basis() -> EigenBasis {
        let n = 40;
        let v = DMatrix::from_fn(n, 3, |r, c| match c {
            0 => 1.0,
            1 => 2f64.sqrt() * (2.0 * PI * r as f64 / n as f64).cos(),
            _ => 2f64.sqrt() * (2.0 * PI * r as f64 / n as f64).sin(),
        });
        EigenBasis::new(v, vec![1.0, 0.9, 0.9]).unwrap()
    }

    #[test]
    fn shift_examples() {
        let b = toy_basis();
        let u0 = shift_matrix(&b, 0).unwrap();
        assert!((u0.entries.clone() - DMatrix::identity(3, 3)).amax() < 1e-12);
        let q = 3;
        let u = shift_matrix(&b, q).unwrap();
        let n = b.n();
        // Row 0 by direct summation.
        for k in 0..3 {
            let want: f64 = (0..n - q).map(|m| b.values()[(m + q, k)]).sum::<f64>() / n as f64;
            assert!((u.entries[(0, k)] - want).abs() < 1e-14);
        }
        assert!((u.entries[(0, 0)] - (1.0 - q as f64 / n as f64)).abs() < 1e-14);
        assert!(u.largest_singular_value() <= 1.0 + 1e-8);
        assert!(shift_matrix(&b, n).is_err());
    }

    #[test]
    fn power_mode() {
        let b = toy_basis();
        for q in [0, 1] {
            assert_eq!(
                shift_power(&b, q, EvolutionMode::Power).unwrap(),
                shift_power(&b, q, EvolutionMode::Direct).unwrap()
            );
        }
        let p = shift_power(&b, 4, EvolutionMode::Power).unwrap();
        let one = shift_matrix(&b, 1).unwrap().entries;
        assert!((p.entries - &one * &one * &one * &one).amax() < 1e-15);
    }
}
