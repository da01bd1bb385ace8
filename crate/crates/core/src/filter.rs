//! Density-matrix filter: forecast by operator conjugation, measurement
//! probabilities by trace pairing, and projective analysis.

use std::io::Write;

use nalgebra::{ComplexField, DMatrix};
use serde::{Deserialize, Serialize};

use crate::dynamics::format_f64;
use crate::metrics::{ignorance, precision, DEFAULT_PROB_FLOOR};
use crate::quantizer::{max_abs, Binning, ProjectorSet};
use crate::{Complex64, Error, Result};

/// Scalar field of a backend: `f64` for data-driven bases, `Complex64` for
/// the Fourier basis.
pub trait Field: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {}

impl Field for f64 {}
impl Field for Complex64 {}

/// Smallest trace accepted as a forecast or analysis normalizer.
pub const TRACE_FLOOR: f64 = 1e-14;

/// Tolerances for the state invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantTolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    /// Deviation of the raw probability sum `Σ tr(E_i ρ)` from one.
    pub prob_sum: f64,
}

impl Default for InvariantTolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-12,
            trace: 1e-10,
            min_eigenvalue: -1e-9,
            prob_sum: 1e-9,
        }
    }
}

/// Hermitian, positive-semidefinite, trace-one matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix<T: Field> {
    m: DMatrix<T>,
}

impl<T: Field> DensityMatrix<T> {
    /// Rank-one projector onto basis vector `index`.
    pub fn stationary(dim: usize, index: usize) -> Result<Self> {
        if dim == 0 || index >= dim {
            return Err(Error::param(format!(
                "stationary index {index} out of range for dimension {dim}"
            )));
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(index, index)] = T::one();
        Ok(Self { m })
    }

    /// Pure state `ψ ψ* / |ψ|²`.
    pub fn pure(psi: &[T]) -> Result<Self> {
        let v = DMatrix::from_column_slice(psi.len(), 1, psi);
        let n2 = v.norm_squared();
        if psi.is_empty() || !(n2 > 0.0) {
            return Err(Error::param("pure state vector must be nonzero"));
        }
        Ok(Self {
            m: (&v * v.adjoint()).unscale(n2),
        })
    }

    /// Hermitian part of `m`, divided by its trace.
    pub fn from_matrix(m: DMatrix<T>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::param("density matrix must be square and nonempty"));
        }
        let mut s = Self { m };
        s.symmetrize();
        let tr = s.trace();
        if !(tr > TRACE_FLOOR) {
            return Err(Error::param("density matrix must have positive trace"));
        }
        s.m.unscale_mut(tr);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().real()
    }

    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().real()
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(&self.m - self.m.adjoint()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m.clone().symmetric_eigenvalues().min()
    }

    /// `ρ <- (ρ + ρ*) / 2`.
    fn symmetrize(&mut self) {
        let adj = self.m.adjoint();
        self.m += adj;
        self.m.scale_mut(0.5);
    }

    pub fn check_invariants(&self, tol: &InvariantTolerances) -> Result<()> {
        let h = self.hermiticity_error();
        if h > tol.hermiticity {
            return Err(Error::Invariant(format!("hermiticity deviation {h:e}")));
        }
        let t = (self.trace() - 1.0).abs();
        if t > tol.trace {
            return Err(Error::Invariant(format!("trace deviation {t:e}")));
        }
        // A Cholesky factorization of ρ - λ_min·I exists iff every eigenvalue
        // exceeds λ_min; fall back to the spectrum only to report the failure.
        let mut shifted = self.m.clone();
        for i in 0..self.dim() {
            shifted[(i, i)] -= T::from_real(tol.min_eigenvalue);
        }
        if nalgebra::Cholesky::new(shifted).is_none() {
            let e = self.min_eigenvalue();
            if e < tol.min_eigenvalue {
                return Err(Error::Invariant(format!("minimum eigenvalue {e:e}")));
            }
        }
        Ok(())
    }

    /// `A* ρ A / tr(A* ρ A)` with re-symmetrization.
    fn conjugate_normalized(&self, a: &DMatrix<T>, degenerate: impl FnOnce(f64) -> Error) -> Result<Self> {
        let mut out = Self {
            m: a.adjoint() * &self.m * a,
        };
        out.symmetrize();
        let tr = out.trace();
        if !(tr > TRACE_FLOOR) {
            return Err(degenerate(tr));
        }
        out.m.unscale_mut(tr);
        Ok(out)
    }
}

/// `U* ρ U / tr(U* ρ U)`.
pub fn forecast<T: Field>(rho: &DensityMatrix<T>, u: &DMatrix<T>) -> Result<DensityMatrix<T>> {
    if u.nrows() != rho.dim() || u.ncols() != rho.dim() {
        return Err(Error::param("shift matrix does not match the state dimension"));
    }
    rho.conjugate_normalized(u, |trace| Error::ForecastDegenerate { trace })
}

/// Tolerated deviation of the raw probability sum from one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// `P_i = tr(E_i ρ)`; negative roundoff is clamped and small deviations of the
/// sum from one are renormalized.
pub fn measurement_probs<T: Field>(rho: &DensityMatrix<T>, projectors: &ProjectorSet<T>) -> Result<Vec<f64>> {
    measurement_probs_with_sum(rho, projectors).map(|(p, _)| p)
}

/// As [`measurement_probs`], also returning the raw sum before
/// renormalization.
pub fn measurement_probs_with_sum<T: Field>(
    rho: &DensityMatrix<T>,
    projectors: &ProjectorSet<T>,
) -> Result<(Vec<f64>, f64)> {
    if projectors.dim() != rho.dim() {
        return Err(Error::param("projectors do not match the state dimension"));
    }
    let rt = rho.m.transpose();
    let mut p: Vec<f64> = projectors
        .iter()
        .map(|e| {
            e.iter()
                .zip(rt.iter())
                .fold(T::zero(), |acc, (a, b)| acc + *a * *b)
                .real()
                .max(0.0)
        })
        .collect();
    let sum: f64 = p.iter().sum();
    if !((sum - 1.0).abs() < PROB_SUM_TOLERANCE) {
        return Err(Error::Consistency(format!("measurement probabilities sum to {sum}")));
    }
    p.iter_mut().for_each(|x| *x /= sum);
    Ok((p, sum))
}

/// What to do when the measured bin has (numerically) zero probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroProbPolicy {
    #[default]
    Error,
    ResetToStationary,
}

/// `E_i ρ E_i / tr(E_i ρ E_i)`.
pub fn analyze<T: Field>(
    rho_minus: &DensityMatrix<T>,
    bin: usize,
    projectors: &ProjectorSet<T>,
) -> Result<DensityMatrix<T>> {
    if bin >= projectors.s() {
        return Err(Error::param(format!("bin {bin} out of range")));
    }
    if projectors.dim() != rho_minus.dim() {
        return Err(Error::param("projectors do not match the state dimension"));
    }
    rho_minus.conjugate_normalized(projectors.get(bin), |_| Error::ZeroProbability { bin })
}

/// Everything the filter cycle needs from an operator backend.
pub trait FilterModel {
    type Scalar: Field;

    fn dim(&self) -> usize;

    fn projectors(&self) -> &ProjectorSet<Self::Scalar>;

    fn binning(&self) -> &Binning;

    fn stationary(&self) -> DensityMatrix<Self::Scalar>;

    /// Sampling interval of one step.
    fn delta_t(&self) -> f64;

    /// Evolve the post-analysis state `rho` by `q` steps.
    fn forecast(&self, rho: &DensityMatrix<Self::Scalar>, q: usize) -> Result<DensityMatrix<Self::Scalar>>;

    /// Step counts `forecast` accepts, if restricted.
    fn available_steps(&self) -> Option<Vec<usize>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub obs_interval_steps: usize,
    pub report_stride: usize,
    #[serde(default)]
    pub zero_prob_policy: ZeroProbPolicy,
    pub prob_floor: f64,
    /// Verify state invariants after every forecast and analysis.
    #[serde(default)]
    pub check_invariants: bool,
}

impl FilterConfig {
    pub fn new(obs_interval_steps: usize, report_stride: usize) -> Self {
        Self {
            obs_interval_steps,
            report_stride,
            zero_prob_policy: ZeroProbPolicy::Error,
            prob_floor: DEFAULT_PROB_FLOOR,
            check_invariants: false,
        }
    }

    pub fn validate(&self, s: usize) -> Result<()> {
        if self.obs_interval_steps == 0 || self.report_stride == 0 {
            return Err(Error::param("observation interval and report stride must be positive"));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0 / s as f64) {
            return Err(Error::param(format!("prob_floor must lie in (0, 1/S) for S = {s}")));
        }
        Ok(())
    }
}

/// The measurement made at a step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub bin: usize,
    pub value: f64,
}

/// One report. At measurement steps `probs` are the post-analysis
/// probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub probs: Vec<f64>,
    pub measurement: Option<Measurement>,
    /// Bin of the true observable value at this time.
    pub true_bin: usize,
    pub precision: f64,
    pub ignorance: f64,
    pub ignorance_clamped: bool,
    /// Set when a zero-probability measurement reset the state.
    pub reset: bool,
}

/// Run the cycle over `truth[0..]` (observable values on the step grid,
/// starting at `t = 0`). Measurements are taken at every positive multiple
/// of `obs_interval_steps`; probabilities are reported every
/// `report_stride` steps and at every measurement.
pub fn run_filter<M: FilterModel>(model: &M, truth: &[f64], cfg: &FilterConfig) -> Result<Vec<StepRecord>> {
    let s = model.projectors().s();
    cfg.validate(s)?;
    if let Some(i) = truth.iter().position(|v| !v.is_finite()) {
        return Err(Error::param(format!("truth value at step {i} is not finite")));
    }
    if let Some(steps) = model.available_steps() {
        let needed =
            (0..=cfg.obs_interval_steps).filter(|q| q % cfg.report_stride == 0 || *q == cfg.obs_interval_steps);
        for q in needed {
            if !steps.contains(&q) {
                return Err(Error::param(format!(
                    "operator bundle has no shift matrix for {q} steps"
                )));
            }
        }
    }
    let tol = InvariantTolerances::default();
    let check = |rho: &DensityMatrix<M::Scalar>, step: usize| -> Result<()> {
        if cfg.check_invariants {
            rho.check_invariants(&tol).map_err(|e| e.at_step(step))?;
        }
        Ok(())
    };
    let binning = model.binning();
    let mut rho_plus = model.stationary();
    let mut last = 0usize;
    let mut records = Vec::new();
    for (step, &value) in truth.iter().enumerate() {
        let measuring = step > 0 && step % cfg.obs_interval_steps == 0;
        let reporting = step % cfg.report_stride == 0;
        if !measuring && !reporting {
            continue;
        }
        let rho = model.forecast(&rho_plus, step - last).map_err(|e| e.at_step(step))?;
        check(&rho, step)?;
        let true_bin = binning.affiliation(value);
        let mut measurement = None;
        let mut reset = false;
        let (probs, raw_sum) = if measuring {
            let m = Measurement { bin: true_bin, value };
            measurement = Some(m);
            match analyze(&rho, m.bin, model.projectors()) {
                Ok(post) => rho_plus = post,
                Err(Error::ZeroProbability { .. }) if cfg.zero_prob_policy == ZeroProbPolicy::ResetToStationary => {
                    rho_plus = model.stationary();
                    reset = true;
                }
                Err(e) => return Err(e.at_step(step)),
            }
            last = step;
            check(&rho_plus, step)?;
            measurement_probs_with_sum(&rho_plus, model.projectors())
        } else {
            measurement_probs_with_sum(&rho, model.projectors())
        }
        .map_err(|e| e.at_step(step))?;
        if cfg.check_invariants && (raw_sum - 1.0).abs() > tol.prob_sum {
            let e = Error::Invariant(format!("probabilities sum to {raw_sum}"));
            return Err(e.at_step(step));
        }
        let (ign, clamped) = ignorance(&probs, true_bin, cfg.prob_floor);
        records.push(StepRecord {
            step,
            time: step as f64 * model.delta_t(),
            precision: precision(&probs),
            ignorance: ign,
            ignorance_clamped: clamped,
            probs,
            measurement,
            true_bin,
            reset,
        });
    }
    Ok(records)
}

/// CSV with columns `t, P_0..P_{S-1}, measured_bin, measured_value, D, E`.
pub fn write_records_csv<W: Write>(records: &[StepRecord], s: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..s).map(|i| format!("P_{i}")));
    header.extend(["measured_bin", "measured_value", "D", "E"].map(String::from));
    out.write_record(&header)?;
    for r in records {
        if r.probs.len() != s {
            return Err(Error::param("record width does not match S"));
        }
        let mut rec = vec![format_f64(r.time)];
        rec.extend(r.probs.iter().map(|p| format_f64(*p)));
        match r.measurement {
            Some(m) => {
                rec.push(m.bin.to_string());
                rec.push(format_f64(m.value));
            }
            None => rec.extend([String::new(), String::new()]),
        }
        rec.push(format_f64(r.precision));
        rec.push(format_f64(r.ignorance));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn stationary_state() {
        let r = DensityMatrix::<f64>::stationary(4, 0).unwrap();
        assert_eq!(r.trace(), 1.0);
        assert_eq!(r.matrix()[(0, 0)], 1.0);
        assert_eq!(r.matrix().iter().filter(|v| **v != 0.0).count(), 1);
        r.check_invariants(&InvariantTolerances::default()).unwrap();
        assert!(DensityMatrix::<f64>::stationary(0, 0).is_err());
    }

    #[test]
    fn unitary_forecast_keeps_trace_and_purity() {
        let rho = DensityMatrix::pure(&[c(1.0, 0.0), c(0.5, 0.5), c(0.0, -1.0)]).unwrap();
        let u = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::from_polar(1.0, 0.3),
            Complex64::from_polar(1.0, -1.1),
            Complex64::from_polar(1.0, 2.0),
        ]));
        let f = forecast(&rho, &u).unwrap();
        assert!((f.trace() - 1.0).abs() < 1e-15);
        assert!((f.purity() - rho.purity()).abs() < 1e-14);
        f.check_invariants(&InvariantTolerances::default()).unwrap();
    }

    #[test]
    fn forecast_renormalizes_contractions() {
        let rho = DensityMatrix::<f64>::pure(&[1.0, 1.0]).unwrap();
        let u = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let f = forecast(&rho, &u).unwrap();
        assert!((f.trace() - 1.0).abs() < 1e-15);
        assert!((f.matrix()[(0, 0)] - 0.8).abs() < 1e-15);
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(forecast(&rho, &zero), Err(Error::ForecastDegenerate { .. })));
    }

    fn halves() -> ProjectorSet<f64> {
        let e0 = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let e1 = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        ProjectorSet::new(vec![e0, e1]).unwrap()
    }

    #[test]
    fn probabilities_and_analysis() {
        let e = halves();
        let rho = DensityMatrix::<f64>::stationary(2, 0).unwrap();
        let p = measurement_probs(&rho, &e).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let post = analyze(&rho, 1, &e).unwrap();
        assert!((post.purity() - 1.0).abs() < 1e-15);
        let again = analyze(&post, 1, &e).unwrap();
        assert!(max_abs(&(again.matrix() - post.matrix())) < 1e-15);
        let p = measurement_probs(&post, &e).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-15);
        assert!(matches!(analyze(&post, 0, &e), Err(Error::ZeroProbability { bin: 0 })));
    }

    #[test]
    fn inconsistent_projectors_are_reported() {
        let e = ProjectorSet::new(vec![DMatrix::<f64>::identity(2, 2) * 0.5]).unwrap();
        let rho = DensityMatrix::<f64>::stationary(2, 0).unwrap();
        assert!(matches!(measurement_probs(&rho, &e), Err(Error::Consistency(_))));
    }

    struct Toy {
        e: ProjectorSet<f64>,
        b: Binning,
    }

    impl FilterModel for Toy {
        type Scalar = f64;
        fn dim(&self) -> usize {
            2
        }
        fn projectors(&self) -> &ProjectorSet<f64> {
            &self.e
        }
        fn binning(&self) -> &Binning {
            &self.b
        }
        fn stationary(&self) -> DensityMatrix<f64> {
            DensityMatrix::stationary(2, 0).unwrap()
        }
        fn delta_t(&self) -> f64 {
            0.5
        }
        fn forecast(&self, rho: &DensityMatrix<f64>, _q: usize) -> Result<DensityMatrix<f64>> {
            Ok(rho.clone())
        }
    }

    #[test]
    fn cycle_cadence_and_policy() {
        let toy = Toy {
            e: halves(),
            b: Binning::new(vec![0.5]).unwrap(),
        };
        let truth = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut cfg = FilterConfig::new(3, 2);
        cfg.check_invariants = true;
        let recs = run_filter(&toy, &truth, &cfg);
        // The second measurement (bin 1) is impossible after collapsing onto bin 0.
        assert!(matches!(recs, Err(Error::AtStep { step: 6, .. })));

        cfg.zero_prob_policy = ZeroProbPolicy::ResetToStationary;
        let recs = run_filter(&toy, &truth, &cfg).unwrap();
        let steps: Vec<usize> = recs.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 2, 3, 4, 6]);
        assert_eq!(recs[0].probs, vec![0.5, 0.5]);
        assert_eq!(recs[0].precision, 0.0);
        assert_eq!(recs[0].ignorance, 1.0);
        assert_eq!(recs[2].measurement, Some(Measurement { bin: 0, value: 0.0 }));
        assert!((recs[2].probs[0] - 1.0).abs() < 1e-15);
        assert!(recs[4].reset);
        assert_eq!(recs[4].time, 3.0);
    }

    #[test]
    fn csv_schema() {
        let rec = StepRecord {
            step: 0,
            time: 0.0,
            probs: vec![0.25, 0.75],
            measurement: Some(Measurement { bin: 1, value: 0.5 }),
            true_bin: 1,
            precision: 0.1,
            ignorance: 0.4,
            ignorance_clamped: false,
            reset: false,
        };
        let mut buf = Vec::new();
        write_records_csv(&[rec], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,P_0,P_1,measured_bin,measured_value,D,E\n0.0,0.25,0.75,1,0.5,0.1,0.4\n"
        );
    }
}
