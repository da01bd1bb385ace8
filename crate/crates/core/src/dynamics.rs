//! Training and truth trajectories: circle rotation, Lorenz 63, and
//! delay-coordinate embeddings.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A time-independent vector field on `R^D`.
pub trait VectorField<const D: usize> {
    fn velocity(&self, x: &[f64; D]) -> [f64; D];
}

impl<const D: usize, F> VectorField<D> for F
where
    F: Fn(&[f64; D]) -> [f64; D],
{
    fn velocity(&self, x: &[f64; D]) -> [f64; D] {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L63Params {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for L63Params {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

pub fn l63_velocity(x: &[f64; 3], p: &L63Params) -> [f64; 3] {
    [
        p.sigma * (x[1] - x[0]),
        x[0] * (p.rho - x[2]) - x[1],
        x[0] * x[1] - p.beta * x[2],
    ]
}

impl VectorField<3> for L63Params {
    fn velocity(&self, x: &[f64; 3]) -> [f64; 3] {
        l63_velocity(x, self)
    }
}

fn axpy<const D: usize>(x: &[f64; D], a: f64, k: &[f64; D]) -> [f64; D] {
    let mut out = *x;
    for (o, ki) in out.iter_mut().zip(k) {
        *o += a * ki;
    }
    out
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F: VectorField<D>, const D: usize>(field: &F, x: &[f64; D], dt: f64) -> [f64; D] {
    let k1 = field.velocity(x);
    let k2 = field.velocity(&axpy(x, 0.5 * dt, &k1));
    let k3 = field.velocity(&axpy(x, 0.5 * dt, &k2));
    let k4 = field.velocity(&axpy(x, dt, &k3));
    let mut out = *x;
    for i in 0..D {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("time step must be positive and finite, got {dt}")));
    }
    Ok(())
}

/// Integrate `n_steps` RK4 steps from `x0`. The output has `n_steps + 1`
/// states, starting with `x0`.
pub fn integrate_rk4<F: VectorField<D>, const D: usize>(
    field: &F,
    x0: [f64; D],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<[f64; D]>> {
    check_dt(dt)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(x0);
    let mut x = x0;
    for step in 1..=n_steps {
        x = rk4_step(field, &x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { step });
        }
        out.push(x);
    }
    Ok(out)
}

/// Advance without storing intermediate states.
fn advance<F: VectorField<D>, const D: usize>(field: &F, mut x: [f64; D], dt: f64, n_steps: usize) -> Result<[f64; D]> {
    for step in 1..=n_steps {
        x = rk4_step(field, &x, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { step });
        }
    }
    Ok(x)
}

/// Ordered samples along one orbit at a fixed sampling interval, together
/// with the values of the assimilated scalar observable.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    delta_t: f64,
    dim: usize,
    /// Row-major `n_samples × dim`.
    points: Vec<f64>,
    h_values: Vec<f64>,
}

impl TrajectoryDataset {
    pub fn new(delta_t: f64, dim: usize, points: Vec<f64>, h_values: Vec<f64>) -> Result<Self> {
        check_dt(delta_t)?;
        if dim == 0 {
            return Err(Error::param("sample dimension must be positive"));
        }
        if points.len() % dim != 0 {
            return Err(Error::param("point buffer length is not a multiple of the dimension"));
        }
        let n = points.len() / dim;
        if n != h_values.len() {
            return Err(Error::param(format!(
                "{n} samples but {} observable values",
                h_values.len()
            )));
        }
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        if points.iter().chain(&h_values).any(|v| !v.is_finite()) {
            return Err(Error::param("dataset contains non-finite values"));
        }
        let ds = Self {
            delta_t,
            dim,
            points,
            h_values,
        };
        ds.check_distinct()?;
        Ok(ds)
    }

    fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.n_samples()).collect();
        let cmp = |a: &usize, b: &usize| {
            self.sample(*a)
                .iter()
                .zip(self.sample(*b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        };
        order.sort_unstable_by(cmp);
        for w in order.windows(2) {
            if cmp(&w[0], &w[1]).is_eq() {
                return Err(Error::DuplicateSample {
                    first: w[0].min(w[1]),
                    second: w[0].max(w[1]),
                });
            }
        }
        Ok(())
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn n_samples(&self) -> usize {
        self.h_values.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        &self.points[n * self.dim..(n + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    /// Replace the observable values, keeping the samples.
    pub fn with_h_values(mut self, h_values: Vec<f64>) -> Result<Self> {
        if h_values.len() != self.n_samples() {
            return Err(Error::param("observable length does not match the sample count"));
        }
        self.h_values = h_values;
        Ok(self)
    }

    /// Write as CSV with columns `index, t, x1..xm, h`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string(), "t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.push("h".into());
        wtr.write_record(&header)?;
        for n in 0..self.n_samples() {
            let mut row = vec![n.to_string(), format_f64(n as f64 * self.delta_t)];
            row.extend(self.sample(n).iter().map(|v| format_f64(*v)));
            row.push(format_f64(self.h_values[n]));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parse the CSV layout written by [`TrajectoryDataset::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols < 4 || &header[0] != "index" || &header[1] != "t" || &header[cols - 1] != "h" {
            return Err(Error::format("dataset header must be index,t,x1..xm,h"));
        }
        let dim = cols - 3;
        let mut times = Vec::new();
        let mut points = Vec::new();
        let mut h = Vec::new();
        for (row_no, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != cols {
                return Err(Error::format(format!(
                    "row {row_no} has {} fields, expected {cols}",
                    rec.len()
                )));
            }
            let index: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("row {row_no}: bad index")))?;
            if index != row_no {
                return Err(Error::format(format!("row {row_no}: index {index} out of sequence")));
            }
            times.push(parse_f64(&rec[1], row_no)?);
            for field in rec.iter().skip(2).take(dim) {
                points.push(parse_f64(field, row_no)?);
            }
            h.push(parse_f64(&rec[cols - 1], row_no)?);
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: times.len(),
            });
        }
        let delta_t = times[1] - times[0];
        check_dt(delta_t)?;
        for (n, t) in times.iter().enumerate() {
            let expected = times[0] + n as f64 * delta_t;
            if (t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(Error::format(format!("row {n}: time {t} is off the sampling grid")));
            }
        }
        Self::new(delta_t, dim, points, h)
    }
}

pub(crate) fn format_f64(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

pub(crate) fn parse_f64(s: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::format(format!("row {row}: '{s}' is not a finite number")))
}

/// Scalar observables evaluated along trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// Indicator of the arc `[0, alpha)` on the circle.
    Binary { alpha: f64 },
    /// `cos θ` on the circle.
    Cos,
    /// A coordinate of the ambient state vector (0-based).
    Coordinate { index: usize },
}

impl Observable {
    pub fn on_circle(&self, theta: f64) -> f64 {
        match *self {
            Observable::Binary { alpha } => {
                if wrap_angle(theta) < alpha {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::Cos => theta.cos(),
            Observable::Coordinate { index } => {
                if index == 0 {
                    theta.cos()
                } else {
                    theta.sin()
                }
            }
        }
    }

    pub fn on_state(&self, x: &[f64]) -> f64 {
        match *self {
            Observable::Coordinate { index } => x[index],
            _ => x[0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    omega: f64,
}

impl CircleParams {
    pub fn new(omega: f64) -> Result<Self> {
        if omega == 0.0 || !omega.is_finite() {
            return Err(Error::param("circle frequency must be finite and nonzero"));
        }
        Ok(Self { omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega.abs()
    }

    /// `θ + ωt mod 2π`.
    pub fn flow(&self, theta: f64, t: f64) -> f64 {
        wrap_angle(theta + self.omega * t)
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to TAU itself for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Sample the circle rotation at `θ_n = θ0 + nωΔt (mod 2π)`. Samples are
/// stored through the injective embedding `(cos θ, sin θ)`.
pub fn circle_trajectory(
    theta0: f64,
    c: &CircleParams,
    dt: f64,
    n: usize,
    observable: Observable,
) -> Result<TrajectoryDataset> {
    check_dt(dt)?;
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let thetas: Vec<f64> = (0..n).map(|k| c.flow(theta0, k as f64 * dt)).collect();

    // Rational resonances revisit earlier angles.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| thetas[*a].total_cmp(&thetas[*b]));
    let gap_tol = 1e-12;
    for w in order.windows(2) {
        if thetas[w[1]] - thetas[w[0]] < gap_tol {
            return Err(Error::DuplicateSample {
                first: w[0].min(w[1]),
                second: w[0].max(w[1]),
            });
        }
    }
    let (lo, hi) = (order[0], order[n - 1]);
    if thetas[lo] + TAU - thetas[hi] < gap_tol {
        return Err(Error::DuplicateSample {
            first: lo.min(hi),
            second: lo.max(hi),
        });
    }

    let mut points = Vec::with_capacity(2 * n);
    for th in &thetas {
        points.push(th.cos());
        points.push(th.sin());
    }
    let h = thetas.iter().map(|th| observable.on_circle(*th)).collect();
    TrajectoryDataset::new(dt, 2, points, h)
}

/// Integrate for `spinup_steps · dt` time units from `x_init`, discard the
/// transient, then record `n` samples at spacing `dt`.
pub fn spinup_sample_with(
    p: &L63Params,
    x_init: [f64; 3],
    spinup_steps: usize,
    n: usize,
    dt: f64,
    observable: Observable,
) -> Result<TrajectoryDataset> {
    check_dt(dt)?;
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let x0 = advance(p, x_init, dt, spinup_steps)?;
    let states = integrate_rk4(p, x0, dt, n - 1)?;
    let h = states.iter().map(|x| observable.on_state(x)).collect();
    let points = states.into_iter().flatten().collect();
    TrajectoryDataset::new(dt, 3, points, h)
}

/// Training protocol for Lorenz 63: spin up for `n · dt` time units, then
/// record `n` samples with `h(x) = x¹`.
pub fn spinup_sample(p: &L63Params, x_init: [f64; 3], n: usize, dt: f64) -> Result<TrajectoryDataset> {
    spinup_sample_with(p, x_init, n, n, dt, Observable::Coordinate { index: 0 })
}

/// Seeded initial condition near `(1, 1, 1)`, jittered uniformly in
/// `[-5, 5]^3`.
pub fn jittered_initial_condition(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = [1.0; 3];
    for v in &mut x {
        *v += rng.random_range(-5.0..5.0);
    }
    x
}

/// Delay-coordinate vectors `(h_n, h_{n-1}, …, h_{n-Q+1})` for
/// `Q-1 ≤ n ≤ N-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSeries {
    q_delays: usize,
    /// Row-major `(N - Q + 1) × Q`.
    vectors: Vec<f64>,
}

impl EmbeddedSeries {
    pub fn q_delays(&self) -> usize {
        self.q_delays
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.q_delays
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Sample index of the first delay vector.
    pub fn first_index(&self) -> usize {
        self.q_delays - 1
    }

    /// Delay vector for source sample index `n` (`n ≥ Q - 1`).
    pub fn at(&self, n: usize) -> &[f64] {
        let row = n - self.first_index();
        &self.vectors[row * self.q_delays..(row + 1) * self.q_delays]
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.vectors
    }
}

pub fn delay_embed(h_values: &[f64], q_delays: usize) -> Result<EmbeddedSeries> {
    if q_delays == 0 {
        return Err(Error::param("number of delays must be at least 1"));
    }
    if q_delays > h_values.len() {
        return Err(Error::InsufficientData {
            needed: q_delays,
            got: h_values.len(),
        });
    }
    let rows = h_values.len() - q_delays + 1;
    let mut vectors = Vec::with_capacity(rows * q_delays);
    for n in (q_delays - 1)..h_values.len() {
        vectors.extend((0..q_delays).map(|k| h_values[n - k]));
    }
    Ok(EmbeddedSeries { q_delays, vectors })
}

/// Delay-embed a dataset's observable, keeping `h_n` aligned with each
/// delay vector.
pub fn delay_dataset(ds: &TrajectoryDataset, q_delays: usize) -> Result<TrajectoryDataset> {
    let emb = delay_embed(ds.h_values(), q_delays)?;
    let h = ds.h_values()[emb.first_index()..].to_vec();
    TrajectoryDataset::new(ds.delta_t(), q_delays, emb.into_flat(), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l63_velocity_examples() {
        let p = L63Params::default();
        assert_eq!(l63_velocity(&[0.0; 3], &p), [0.0; 3]);
        let v = l63_velocity(&[1.0, 1.0, 1.0], &p);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert!((v[2] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn l63_divergence_is_constant() {
        // Central finite differences of the field; the Jacobian trace is
        // -(σ + 1 + β) everywhere.
        let p = L63Params::default();
        let h = 1e-5;
        for x in [[1.0, 2.0, 3.0], [-7.5, 4.0, 30.0], [0.0, 0.0, 0.0]] {
            let mut div = 0.0;
            for i in 0..3 {
                let (mut xp, mut xm) = (x, x);
                xp[i] += h;
                xm[i] -= h;
                div += (l63_velocity(&xp, &p)[i] - l63_velocity(&xm, &p)[i]) / (2.0 * h);
            }
            assert!((div + 41.0 / 3.0).abs() < 1e-6, "{div}");
        }
    }

    #[test]
    fn zero_field_is_stationary() {
        let f = |_: &[f64; 2]| [0.0, 0.0];
        let traj = integrate_rk4(&f, [0.3, -1.2], 0.1, 50).unwrap();
        assert_eq!(traj.len(), 51);
        assert!(traj.iter().all(|x| *x == [0.3, -1.2]));
    }

    #[test]
    fn harmonic_oscillator_one_period() {
        let f = |x: &[f64; 2]| [x[1], -x[0]];
        let dt = 0.001;
        let steps = (TAU / dt).round() as usize;
        let traj = integrate_rk4(&f, [1.0, 0.0], dt, steps).unwrap();
        let t = steps as f64 * dt;
        let last = traj.last().unwrap();
        assert!((last[0] - t.cos()).abs() < 1e-6);
        assert!((last[1] + t.sin()).abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Richardson: one step of size h vs two of size h/2, against a
        // reference from 64 steps of size h/64.
        let f = |x: &[f64; 2]| [x[1], -x[0].sin()];
        let x0 = [0.9, 0.1];
        let reference = |h: f64| *integrate_rk4(&f, x0, h / 64.0, 64).unwrap().last().unwrap();
        let err = |h: f64| {
            let r = reference(h);
            let y = rk4_step(&f, &x0, h);
            ((y[0] - r[0]).powi(2) + (y[1] - r[1]).powi(2)).sqrt()
        };
        let ratio = err(0.2) / err(0.1);
        // Local error is O(h^5), global error O(h^4).
        assert!(ratio > 24.0 && ratio < 40.0, "{ratio}");

        let global = |h: f64| {
            let n = (2.0 / h).round() as usize;
            let y = *integrate_rk4(&f, x0, h, n).unwrap().last().unwrap();
            let r = *integrate_rk4(&f, x0, h / 32.0, 32 * n).unwrap().last().unwrap();
            ((y[0] - r[0]).powi(2) + (y[1] - r[1]).powi(2)).sqrt()
        };
        let ratio = global(0.1) / global(0.05);
        assert!(ratio > 13.0 && ratio < 19.0, "{ratio}");
    }

    #[test]
    fn divergence_is_reported() {
        let f = |x: &[f64; 1]| [x[0] * x[0]];
        let err = integrate_rk4(&f, [1.0], 0.5, 100).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { .. }));
    }

    #[test]
    fn l63_stays_in_absorbing_ball() {
        let p = L63Params::default();
        let traj = integrate_rk4(&p, [1.0, 1.0, 1.0], 0.01, 100_000).unwrap();
        let max = traj.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 100.0, "{max}");
    }

    #[test]
    fn spinup_small() {
        let p = L63Params::default();
        let ds = spinup_sample(&p, [1.0, 1.0, 1.0], 2, 0.01).unwrap();
        assert_eq!(ds.n_samples(), 2);
        assert_ne!(ds.sample(0), ds.sample(1));
        assert_eq!(ds.h_values()[0], ds.sample(0)[0]);

        let ds = spinup_sample(&p, [1.0, 1.0, 1.0], 2000, 0.01).unwrap();
        assert!(ds.points().iter().all(|v| v.abs() < 100.0));
    }

    #[test]
    fn circle_full_period_returns() {
        let c = CircleParams::new(1.0).unwrap();
        assert!(c.flow(0.0, c.period()).min(TAU - c.flow(0.0, c.period())) < 1e-12);
        assert!(CircleParams::new(0.0).is_err());
    }

    #[test]
    fn circle_flow_group_property() {
        let c = CircleParams::new(1.3).unwrap();
        for (t, s) in [(0.4, 2.2), (17.0, 3.1), (100.0, 0.001)] {
            let a = c.flow(c.flow(0.7, t), s);
            let b = c.flow(0.7, t + s);
            let d = (a - b).abs();
            assert!(d.min(TAU - d) < 1e-12);
        }
    }

    #[test]
    fn circle_binary_square_wave() {
        let c = CircleParams::new(1.0).unwrap();
        let dt = c.period() / (50.0 * 2f64.sqrt());
        let ds = circle_trajectory(
            0.0,
            &c,
            dt,
            2000,
            Observable::Binary {
                alpha: std::f64::consts::PI,
            },
        )
        .unwrap();
        // Runs of ones and zeros alternate with lengths ≈ half a period.
        let h = ds.h_values();
        let mut runs = vec![];
        let mut len = 1;
        for w in h.windows(2) {
            if w[0] == w[1] {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        let half = 0.5 * c.period() / dt;
        for r in &runs[1..] {
            assert!((*r as f64 - half).abs() <= 1.0, "{r} vs {half}");
        }
    }

    #[test]
    fn circle_binary_mass_fraction() {
        let c = CircleParams::new(1.0).unwrap();
        let dt = c.period() / (50.0 * 2f64.sqrt());
        let alpha = std::f64::consts::PI / 6.0;
        let ds = circle_trajectory(0.0, &c, dt, 20_000, Observable::Binary { alpha }).unwrap();
        let frac = ds.h_values().iter().sum::<f64>() / 20_000.0;
        assert!((frac - alpha / TAU).abs() < 1e-3);
    }

    #[test]
    fn circle_resonance_is_rejected() {
        let c = CircleParams::new(1.0).unwrap();
        let err = circle_trajectory(0.0, &c, c.period() / 4.0, 9, Observable::Cos).unwrap_err();
        assert!(matches!(err, Error::DuplicateSample { .. }));
        assert!(circle_trajectory(0.0, &c, c.period() / 4.0, 4, Observable::Cos).is_ok());
    }

    #[test]
    fn delay_examples() {
        let h = [0.0, 1.0, 2.0, 3.0];
        let e = delay_embed(&h, 1).unwrap();
        assert_eq!(e.into_flat(), h.to_vec());
        let e = delay_embed(&h, 3).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.at(2), &[2.0, 1.0, 0.0]);
        assert_eq!(e.at(3), &[3.0, 2.0, 1.0]);
        assert!(matches!(delay_embed(&h, 5), Err(Error::InsufficientData { .. })));
        assert!(delay_embed(&h, 0).is_err());
    }

    #[test]
    fn delay_l63_setting() {
        let p = L63Params::default();
        let ds = spinup_sample(&p, [1.0, 1.0, 1.0], 200, 0.01).unwrap();
        let emb = delay_dataset(&ds, 24).unwrap();
        assert_eq!(emb.n_samples(), 200 - 23);
        assert_eq!(emb.dim(), 24);
        assert_eq!(emb.sample(0)[0], ds.h_values()[23]);
        assert_eq!(emb.sample(0)[23], ds.h_values()[0]);
        assert_eq!(emb.h_values()[0], ds.h_values()[23]);
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let err = TrajectoryDataset::new(0.1, 1, vec![1.0, 2.0, 1.0], vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::DuplicateSample { first: 0, second: 2 }));
    }

    #[test]
    fn csv_round_trip() {
        let c = CircleParams::new(1.0).unwrap();
        let ds = circle_trajectory(0.3, &c, 0.37, 25, Observable::Cos).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = TrajectoryDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.n_samples(), 25);
        assert_eq!(back.points(), ds.points());
        assert_eq!(back.h_values(), ds.h_values());
        assert!((back.delta_t() - 0.37).abs() < 1e-12);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(TrajectoryDataset::read_csv("index,t,x1,h\n0,0,1,nan\n1,1,2,0\n".as_bytes()).is_err());
        assert!(TrajectoryDataset::read_csv("index,t,h\n0,0,1\n".as_bytes()).is_err());
        assert!(TrajectoryDataset::read_csv("index,t,x1,h\n1,0,1,0\n2,1,2,0\n".as_bytes()).is_err());
    }
}
