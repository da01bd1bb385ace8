//! Named experiment presets, the train/assimilate pipeline, the large-data
//! convergence study against the analytic circle backend, and eigenfunction
//! dumps. Every run writes its full configuration next to its outputs so it
//! can be replayed.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{save_bundle, AnyBundle, CircleBundle, CircleMeasurement, DataDrivenBundle};
use crate::dynamics::{
    circle_trajectory, delay_dataset, format_f64, jittered_initial_condition, spinup_sample_with, CircleParams,
    L63Params, Observable, TrajectoryDataset,
};
use crate::filter::{write_records_csv, FilterConfig, FilterModel, StepRecord, ZeroProbPolicy};
use crate::kernel::{build_basis, EigenBasis, KernelDiagnostics, KernelParams};
use crate::metrics::{summarize, MetricsSummary, DEFAULT_PROB_FLOOR};
use crate::operators::{circle_cos_boundaries, shift_matrices, AnalyticCircleBasis, EvolutionMode};
use crate::quantizer::{build_partition, max_abs, projector_matrices, PartitionSummary, ProjectorSet};
use crate::{Complex64, Error, Result};

pub const PRESETS: [&str; 8] = [
    "circle-binary-a",
    "circle-binary-b",
    "circle-binary-c",
    "circle-cos",
    "l63-full",
    "l63-delay",
    "eigfuncs-dump",
    "convergence-study",
];

pub const CONFIG_FILE: &str = "config.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const RUN_FILE: &str = "run.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const EIGFUNCS_SCATTER_FILE: &str = "eigfuncs_scatter.csv";
pub const EIGFUNCS_SERIES_FILE: &str = "eigfuncs_series.csv";
pub const EIGFUNCS_REPORT_FILE: &str = "eigfuncs.json";

/// Tolerance for basis orthonormality, projector resolution and Markov row
/// sums after training.
pub const TRAINING_TOLERANCE: f64 = 1e-8;

/// Sampling interval of the circle presets for `ω = 1`: `T / (50√2)`.
pub fn circle_base_step(omega: f64) -> f64 {
    TAU / omega.abs() / (50.0 * SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemConfig {
    Circle { omega: f64 },
    Lorenz63(L63Params),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Exact Fourier representation (circle only).
    Analytic,
    /// Kernel eigenbasis learned from a training trajectory.
    DataDriven,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Assimilation,
    EigfuncsDump,
    Convergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub task: Task,
    pub system: SystemConfig,
    pub observable: Observable,
    pub backend: Backend,
    /// Training samples after delay embedding.
    pub n_train: usize,
    pub delta_t: f64,
    /// Delay-embedding length; 0 trains on the full state.
    pub q_delays: usize,
    pub kernel: KernelParams,
    /// Basis size; for the analytic backend the largest Fourier index.
    pub l: usize,
    pub s: usize,
    pub mode: EvolutionMode,
    pub obs_interval_steps: usize,
    pub report_stride: usize,
    pub run_steps: usize,
    pub burn_in: f64,
    pub zero_prob_policy: ZeroProbPolicy,
    pub prob_floor: f64,
    pub check_invariants: bool,
    /// Seed of the training initial condition.
    pub seed: u64,
    /// Seed of the truth initial condition (Lorenz 63).
    pub truth_seed: u64,
    pub truth_spinup_steps: usize,
    /// Initial angle of the circle truth.
    pub truth_theta0: f64,
    pub scale: f64,
    pub out_dir: PathBuf,
    /// Training sizes of the convergence study.
    pub sweep: Vec<usize>,
    /// Length in time units of the eigenfunction time-series window.
    pub series_window: f64,
    /// Eigenfunctions written by the dump.
    pub dump_count: usize,
}

fn base_config(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        preset: name.to_string(),
        task: Task::Assimilation,
        system: SystemConfig::Circle { omega: 1.0 },
        observable: Observable::Cos,
        backend: Backend::Analytic,
        n_train: 0,
        delta_t: circle_base_step(1.0),
        q_delays: 0,
        kernel: KernelParams::default(),
        l: 64,
        s: 2,
        mode: EvolutionMode::Direct,
        obs_interval_steps: 1,
        report_stride: 1,
        run_steps: 0,
        burn_in: 0.0,
        zero_prob_policy: ZeroProbPolicy::Error,
        prob_floor: DEFAULT_PROB_FLOOR,
        check_invariants: true,
        seed: 1,
        truth_seed: 2,
        truth_spinup_steps: 10_000,
        truth_theta0: 0.0,
        scale: 1.0,
        out_dir: PathBuf::from("out").join(name),
        sweep: Vec::new(),
        series_window: 10.0,
        dump_count: 32,
    }
}

fn steps_for(duration: f64, dt: f64) -> usize {
    (duration / dt).ceil() as usize
}

/// Parameters of a named preset. `scale` shrinks the training size and basis
/// of the Lorenz 63 presets; the analytic circle presets ignore it.
pub fn preset(name: &str, scale: f64) -> Result<ExperimentConfig> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param("scale must be positive"));
    }
    let mut c = base_config(name);
    c.scale = scale;
    let circle = |c: &mut ExperimentConfig, observable, s, q, duration: f64, burn_in| {
        c.observable = observable;
        c.s = s;
        c.obs_interval_steps = q;
        c.run_steps = steps_for(duration, c.delta_t);
        c.burn_in = burn_in;
    };
    let n_l63 = ((64_000.0 * scale).round() as usize).max(2);
    let l63 = |c: &mut ExperimentConfig, q_delays: usize, l: usize| {
        c.system = SystemConfig::Lorenz63(L63Params::default());
        c.observable = Observable::Coordinate { index: 0 };
        c.backend = Backend::DataDriven;
        c.n_train = n_l63;
        c.delta_t = 0.01;
        c.q_delays = q_delays;
        c.l = l.clamp(1, n_l63 - 1);
        c.s = if scale >= 1.0 { 32 } else { 16 };
        c.obs_interval_steps = 100;
        c.report_stride = 5;
        c.run_steps = 5000;
        c.burn_in = 8.0;
    };
    let l_full = ((1200.0 * scale).round() as usize).min(1000);
    let l_delay = ((800.0 * scale).round() as usize).min(800);
    match name {
        "circle-binary-a" => circle(&mut c, Observable::Binary { alpha: PI }, 2, 20, 100.0, 20.0),
        "circle-binary-b" => circle(&mut c, Observable::Binary { alpha: PI }, 2, 200, 200.0, 80.0),
        "circle-binary-c" => circle(&mut c, Observable::Binary { alpha: PI / 6.0 }, 2, 200, 400.0, 80.0),
        "circle-cos" => circle(&mut c, Observable::Cos, 32, 200, 700.0, 500.0),
        "l63-full" => l63(&mut c, 0, l_full),
        "l63-delay" => l63(&mut c, 24, l_delay),
        "eigfuncs-dump" => {
            l63(&mut c, 0, 32);
            c.task = Task::EigfuncsDump;
        }
        "convergence-study" => {
            c.task = Task::Convergence;
            c.backend = Backend::DataDriven;
            c.l = 9;
            c.s = 4;
            c.obs_interval_steps = 10;
            c.report_stride = 10;
            c.run_steps = 200;
            c.sweep = vec![500, 1000, 2000, 4000];
            c.n_train = 4000;
        }
        _ => {
            return Err(Error::param(format!(
                "unknown preset '{name}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    }
    c.validate()?;
    Ok(c)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return bad("delta_t must be positive".into());
        }
        if self.s == 0 || self.l == 0 {
            return bad("S and L must be positive".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive".into());
        }
        if !self.burn_in.is_finite() || !self.series_window.is_finite() || !self.truth_theta0.is_finite() {
            return bad("burn-in, series window and truth angle must be finite".into());
        }
        self.filter_config().validate(self.s)?;
        match (self.system, self.observable) {
            (SystemConfig::Circle { omega }, _) => {
                CircleParams::new(omega)?;
            }
            (SystemConfig::Lorenz63(_), Observable::Coordinate { index }) if index < 3 => {}
            (SystemConfig::Lorenz63(_), _) => {
                return bad("Lorenz 63 experiments observe a state coordinate (index 0, 1 or 2)".into())
            }
        }
        if let Observable::Binary { alpha } = self.observable {
            if !(alpha > 0.0 && alpha < TAU) {
                return bad("alpha must lie in (0, 2π)".into());
            }
        }
        match self.backend {
            Backend::Analytic => {
                if !matches!(self.system, SystemConfig::Circle { .. }) {
                    return bad("the analytic backend is only available for the circle".into());
                }
                match self.observable {
                    Observable::Binary { .. } if self.s != 2 => {
                        return bad("the binary observable has S = 2".into());
                    }
                    Observable::Coordinate { .. } => {
                        return bad("the analytic backend supports the binary and cos observables".into());
                    }
                    _ => {}
                }
                if self.task != Task::Assimilation {
                    return bad("this task needs the data-driven backend".into());
                }
            }
            Backend::DataDriven => {
                if self.l >= self.n_train {
                    return bad(format!("L = {} must be smaller than N = {}", self.l, self.n_train));
                }
                if self.obs_interval_steps >= self.n_train {
                    return bad("observation interval exceeds the training length".into());
                }
            }
        }
        if self.task == Task::Convergence {
            if !matches!(self.system, SystemConfig::Circle { .. }) || self.observable != Observable::Cos {
                return bad("the convergence study compares the cos observable on the circle".into());
            }
            if self.q_delays != 0 {
                return bad("the convergence study trains on (cos θ, sin θ) without delays".into());
            }
            if self.l % 2 == 0 {
                return bad("the convergence study needs odd L to match a symmetric Fourier band".into());
            }
            if self.sweep.is_empty() || self.sweep.iter().any(|n| *n <= self.l.max(self.obs_interval_steps)) {
                return bad("every sweep size must exceed L and the observation interval".into());
            }
        }
        if self.task == Task::EigfuncsDump && self.dump_count == 0 {
            return bad("dump_count must be positive".into());
        }
        Ok(())
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            obs_interval_steps: self.obs_interval_steps,
            report_stride: self.report_stride,
            zero_prob_policy: self.zero_prob_policy,
            prob_floor: self.prob_floor,
            check_invariants: self.check_invariants,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn circle(&self) -> Result<CircleParams> {
        match self.system {
            SystemConfig::Circle { omega } => CircleParams::new(omega),
            SystemConfig::Lorenz63(_) => Err(Error::param("expected the circle system")),
        }
    }
}

/// Command-line adjustments applied on top of a preset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub truth_seed: Option<u64>,
    pub run_steps: Option<usize>,
    pub n_train: Option<usize>,
    pub l: Option<usize>,
    pub s: Option<usize>,
    pub sweep: Option<Vec<usize>>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.truth_seed {
            c.truth_seed = v;
        }
        if let Some(v) = self.run_steps {
            c.run_steps = v;
        }
        if let Some(v) = self.n_train {
            c.n_train = v;
        }
        if let Some(v) = self.l {
            c.l = v;
        }
        if let Some(v) = self.s {
            c.s = v;
        }
        if let Some(v) = &self.sweep {
            c.sweep = v.clone();
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        c.validate()
    }

    /// Preset `name` at the requested scale with the remaining overrides.
    pub fn config_for(&self, name: &str) -> Result<ExperimentConfig> {
        let mut c = preset(name, self.scale.unwrap_or(1.0))?;
        self.apply(&mut c)?;
        Ok(c)
    }
}

/// Training trajectory for a data-driven configuration, delay-embedded when
/// `q_delays > 0`, with `n_train` samples.
pub fn training_data(cfg: &ExperimentConfig) -> Result<TrajectoryDataset> {
    let extra = cfg.q_delays.saturating_sub(1);
    let n = cfg.n_train + extra;
    let ds = match cfg.system {
        SystemConfig::Circle { .. } => {
            let theta0 = ChaCha8Rng::seed_from_u64(cfg.seed).random_range(0.0..TAU);
            circle_trajectory(theta0, &cfg.circle()?, cfg.delta_t, n, cfg.observable)?
        }
        SystemConfig::Lorenz63(p) => {
            // Spin up for as long as the recorded window.
            spinup_sample_with(
                &p,
                jittered_initial_condition(cfg.seed),
                n,
                n,
                cfg.delta_t,
                cfg.observable,
            )?
        }
    };
    if cfg.q_delays > 0 {
        delay_dataset(&ds, cfg.q_delays)
    } else {
        Ok(ds)
    }
}

/// Observable values at `t = nΔt`, `n = 0..=run_steps`.
pub fn truth_series(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let n = cfg.run_steps + 1;
    match cfg.system {
        SystemConfig::Circle { .. } => {
            let c = cfg.circle()?;
            Ok((0..n)
                .map(|k| {
                    cfg.observable
                        .on_circle(c.flow(cfg.truth_theta0, k as f64 * cfg.delta_t))
                })
                .collect())
        }
        SystemConfig::Lorenz63(p) => {
            let x = jittered_initial_condition(cfg.truth_seed);
            let ds = spinup_sample_with(&p, x, cfg.truth_spinup_steps, n.max(2), cfg.delta_t, cfg.observable)?;
            Ok(ds.h_values()[..n].to_vec())
        }
    }
}

/// Step counts the filter forecasts by: multiples of the report stride up to
/// the observation interval, plus the interval itself.
pub fn shift_steps(cfg: &ExperimentConfig) -> Vec<usize> {
    (0..=cfg.obs_interval_steps)
        .filter(|q| q % cfg.report_stride == 0 || *q == cfg.obs_interval_steps)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub backend: Backend,
    pub dim: usize,
    pub kernel: Option<KernelDiagnostics>,
    pub partition: Option<PartitionSummary>,
    pub orthonormality_error: Option<f64>,
    pub constant_error: Option<f64>,
    pub projector_resolution_error: f64,
    pub projector_hermiticity_error: f64,
    pub max_shift_singular_value: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub bundle: AnyBundle,
    pub diagnostics: TrainDiagnostics,
    pub basis: Option<EigenBasis>,
    pub training: Option<TrajectoryDataset>,
}

fn check_resolution<T: crate::filter::Field>(p: &ProjectorSet<T>) -> Result<(f64, f64)> {
    let r = p.resolution_error();
    if r > TRAINING_TOLERANCE {
        return Err(Error::Invariant(format!(
            "projectors sum to the identity only within {r:e}"
        )));
    }
    Ok((r, p.hermiticity_error()))
}

/// Build the operator bundle for a configuration.
pub fn train(cfg: &ExperimentConfig) -> Result<Trained> {
    cfg.validate()?;
    match cfg.backend {
        Backend::Analytic => {
            let c = cfg.circle()?;
            let basis = AnalyticCircleBasis::new(cfg.l, c.omega())?;
            let measurement = match cfg.observable {
                Observable::Binary { alpha } => CircleMeasurement::Binary { alpha },
                _ => CircleMeasurement::Cos { s: cfg.s },
            };
            let b = CircleBundle::new(basis, cfg.delta_t, measurement)?;
            let (res, herm) = check_resolution(b.projectors())?;
            let diagnostics = TrainDiagnostics {
                backend: Backend::Analytic,
                dim: b.dim(),
                kernel: None,
                partition: None,
                orthonormality_error: None,
                constant_error: None,
                projector_resolution_error: res,
                projector_hermiticity_error: herm,
                max_shift_singular_value: None,
            };
            Ok(Trained {
                bundle: AnyBundle::Circle(b),
                diagnostics,
                basis: None,
                training: None,
            })
        }
        Backend::DataDriven => {
            let ds = training_data(cfg)?;
            let (basis, kd) = build_basis(ds.points(), ds.dim(), cfg.l, &cfg.kernel)?;
            basis.check_invariants(TRAINING_TOLERANCE)?;
            if kd.max_row_sum_deviation > TRAINING_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "Markov row sums deviate from one by {:e}",
                    kd.max_row_sum_deviation
                )));
            }
            let partition = build_partition(ds.h_values(), cfg.s)?;
            let projectors = projector_matrices(&basis, &partition)?;
            let (res, herm) = check_resolution(&projectors)?;
            let shifts = shift_matrices(&basis, &shift_steps(cfg), cfg.mode)?;
            let max_sv = shifts.iter().map(|s| s.largest_singular_value()).fold(0.0, f64::max);
            let summary = partition.summary();
            let diagnostics = TrainDiagnostics {
                backend: Backend::DataDriven,
                dim: basis.l(),
                kernel: Some(kd),
                partition: Some(summary.clone()),
                orthonormality_error: Some(basis.orthonormality_error()),
                constant_error: Some(basis.constant_error()),
                projector_resolution_error: res,
                projector_hermiticity_error: herm,
                max_shift_singular_value: Some(max_sv),
            };
            let bundle = AnyBundle::DataDriven(DataDrivenBundle {
                delta_t: cfg.delta_t,
                q_delays: cfg.q_delays,
                mode: cfg.mode,
                eigenvalues: basis.eigenvalues().to_vec(),
                binning: partition.binning().clone(),
                cond_means: summary.cond_means,
                shifts,
                projectors,
            });
            Ok(Trained {
                bundle,
                diagnostics,
                basis: Some(basis),
                training: Some(ds),
            })
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write `config.json`, the bundle, its hash and the training diagnostics.
/// Returns the bundle hash.
pub fn write_training(dir: &Path, cfg: &ExperimentConfig, trained: &Trained) -> Result<String> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let hash = save_bundle(&trained.bundle, dir)?;
    write_json(&dir.join(DIAGNOSTICS_FILE), &trained.diagnostics)?;
    if let Some(p) = &trained.diagnostics.partition {
        fs::write(dir.join(PARTITION_FILE), p.to_json()?)?;
    }
    Ok(hash)
}

/// Run the filter over the configured truth.
pub fn assimilate(cfg: &ExperimentConfig, bundle: &AnyBundle) -> Result<Vec<StepRecord>> {
    if bundle.s() != cfg.s {
        return Err(Error::param(format!(
            "bundle has S = {} but the configuration asks for {}",
            bundle.s(),
            cfg.s
        )));
    }
    if (bundle.delta_t() - cfg.delta_t).abs() > 1e-12 * cfg.delta_t {
        return Err(Error::param(
            "bundle and configuration disagree on the sampling interval",
        ));
    }
    let truth = truth_series(cfg)?;
    bundle.run(&truth, &cfg.filter_config())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: String,
    pub bundle_hash: String,
    pub truth_seed: u64,
    pub run_steps: usize,
    /// Precision right after the first analysis.
    pub first_measurement_precision: Option<f64>,
    pub metrics: MetricsSummary,
}

pub fn run_summary(cfg: &ExperimentConfig, hash: &str, records: &[StepRecord]) -> Result<RunSummary> {
    Ok(RunSummary {
        preset: cfg.preset.clone(),
        bundle_hash: hash.to_string(),
        truth_seed: cfg.truth_seed,
        run_steps: cfg.run_steps,
        first_measurement_precision: records.iter().find(|r| r.measurement.is_some()).map(|r| r.precision),
        metrics: summarize(records, cfg.s, cfg.burn_in)?,
    })
}

/// Write `run.csv` and `summary.json`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, hash: &str, records: &[StepRecord]) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    let summary = run_summary(cfg, hash, records)?;
    let f = fs::File::create(dir.join(RUN_FILE))?;
    write_records_csv(records, cfg.s, std::io::BufWriter::new(f))?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Max-entry error of `U^(q)` after basis alignment.
    pub shift_error: f64,
    pub projector_errors: Vec<f64>,
    /// `|ξ_k,N − ξ_k|` for the `S − 1` interior boundaries.
    pub boundary_errors: Vec<f64>,
    /// Largest probability difference between the two filters over all
    /// reports.
    pub prob_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub l: usize,
    pub s: usize,
    pub q: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn shift_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.shift_error).collect()
    }

    /// Largest projector error per row.
    pub fn projector_errors(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.projector_errors.iter().cloned().fold(0.0, f64::max))
            .collect()
    }

    /// Largest boundary error per row.
    pub fn boundary_errors(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.boundary_errors.iter().cloned().fold(0.0, f64::max))
            .collect()
    }

    pub fn prob_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prob_error).collect()
    }

    /// Columns `n, shift_error, E_0..E_{S-1}, xi_1..xi_{S-1}, prob_error`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["n".to_string(), "shift_error".to_string()];
        header.extend((0..self.s).map(|i| format!("E_{i}")));
        header.extend((1..self.s).map(|k| format!("xi_{k}")));
        header.push("prob_error".into());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.n.to_string(), format_f64(r.shift_error)];
            rec.extend(r.projector_errors.iter().map(|v| format_f64(*v)));
            rec.extend(r.boundary_errors.iter().map(|v| format_f64(*v)));
            rec.push(format_f64(r.prob_error));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Nearest unitary matrix to `c`.
fn polar_unitary(c: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let svd = c.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::Consistency("SVD of the alignment matrix failed".into())),
    }
}

/// Maps real data-driven matrices into the Fourier basis. With
/// `C_kj = ⟨ψ_k, φ_j⟩_N` replaced by its unitary polar factor `Q`, a matrix
/// `A` in the learned basis corresponds to `Q A Q*`.
struct Alignment {
    q: DMatrix<Complex64>,
}

impl Alignment {
    fn new(basis: &EigenBasis, training: &TrajectoryDataset, fourier: &AnalyticCircleBasis) -> Result<Self> {
        let n = basis.n();
        let l = basis.l();
        if fourier.dim() != l || training.dim() != 2 || training.n_samples() != n {
            return Err(Error::param("alignment needs a circle training set matching the basis"));
        }
        let phi = basis.values();
        let mut c = DMatrix::<Complex64>::zeros(l, l);
        for s in 0..n {
            let x = training.sample(s);
            let theta = x[1].atan2(x[0]);
            for k in 0..l {
                let psi_conj = Complex64::from_polar(1.0, -(fourier.fourier_index(k) as f64) * theta);
                for j in 0..l {
                    c[(k, j)] += psi_conj * phi[(s, j)];
                }
            }
        }
        c.unscale_mut(n as f64);
        Ok(Self { q: polar_unitary(&c)? })
    }

    fn map(&self, a: &DMatrix<f64>) -> DMatrix<Complex64> {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        &self.q * ac * self.q.adjoint()
    }
}

/// Train the data-driven pipeline on circle data for every size in the
/// sweep and compare against the analytic backend.
pub fn convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let mut base = cfg.clone();
    base.task = Task::Convergence;
    base.backend = Backend::DataDriven;
    base.n_train = *cfg.sweep.iter().max().unwrap_or(&0);
    base.validate()?;
    let c = base.circle()?;
    let fourier = AnalyticCircleBasis::new((base.l - 1) / 2, c.omega())?;
    let analytic = CircleBundle::new(fourier, base.delta_t, CircleMeasurement::Cos { s: base.s })?;
    let exact_u = fourier.koopman(base.obs_interval_steps as f64 * base.delta_t);
    let exact_xi = circle_cos_boundaries(base.s)?;
    let truth = truth_series(&base)?;
    let fc = base.filter_config();
    let reference = crate::filter::run_filter(&analytic, &truth, &fc)?;

    let mut rows = Vec::with_capacity(cfg.sweep.len());
    for &n in &cfg.sweep {
        let mut one = base.clone();
        one.n_train = n;
        let trained = train(&one)?;
        let (AnyBundle::DataDriven(b), Some(basis), Some(ds)) = (&trained.bundle, &trained.basis, &trained.training)
        else {
            return Err(Error::Consistency(
                "convergence study expects a data-driven bundle".into(),
            ));
        };
        let align = Alignment::new(basis, ds, &fourier)?;
        let u = b
            .shift(base.obs_interval_steps)
            .ok_or_else(|| Error::Consistency("missing shift matrix".into()))?;
        let shift_error = max_abs(&(align.map(&u.entries) - &exact_u));
        let projector_errors = (0..base.s)
            .map(|i| max_abs(&(align.map(b.projectors.get(i)) - analytic.projectors().get(i))))
            .collect();
        let boundary_errors = b
            .binning
            .boundaries()
            .iter()
            .zip(exact_xi.boundaries())
            .map(|(a, e)| (a - e).abs())
            .collect();
        let records = crate::filter::run_filter(b, &truth, &fc)?;
        let prob_error = records
            .iter()
            .zip(&reference)
            .flat_map(|(a, e)| a.probs.iter().zip(&e.probs).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        rows.push(ConvergenceRow {
            n,
            shift_error,
            projector_errors,
            boundary_errors,
            prob_error,
        });
    }
    Ok(ConvergenceReport {
        l: base.l,
        s: base.s,
        q: base.obs_interval_steps,
        rows,
    })
}

/// Sign changes along a series; exact zeros carry the previous sign.
pub fn zero_crossings(series: &[f64]) -> usize {
    let mut count = 0;
    let mut prev = 0.0f64;
    for &v in series {
        if v == 0.0 {
            continue;
        }
        if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

/// Number of `j` in `1..upto` with `counts[j] < counts[j - 1]`.
pub fn count_decreases(counts: &[usize], upto: usize) -> usize {
    (1..upto.min(counts.len()))
        .filter(|j| counts[*j] < counts[j - 1])
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigfuncsReport {
    pub count: usize,
    pub eigenvalues: Vec<f64>,
    /// Samples in the time-series window.
    pub window_samples: usize,
    pub zero_crossings: Vec<usize>,
    pub constant_error: f64,
}

/// Zero-crossing statistics of the leading eigenfunctions over the first
/// `series_window` time units of the training trajectory.
pub fn eigfuncs_report(basis: &EigenBasis, delta_t: f64, series_window: f64, count: usize) -> EigfuncsReport {
    let count = count.min(basis.l());
    let window = (steps_for(series_window, delta_t) + 1).min(basis.n());
    let phi = basis.values();
    let zero_crossings = (0..count)
        .map(|j| zero_crossings(&phi.column(j).as_slice()[..window]))
        .collect();
    EigfuncsReport {
        count,
        eigenvalues: basis.eigenvalues()[..count].to_vec(),
        window_samples: window,
        zero_crossings,
        constant_error: basis.constant_error(),
    }
}

fn eigen_header(prefix: &[&str], count: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((0..count).map(|j| format!("phi_{j}")));
    h
}

/// Write the scatter file (`row, x1.., phi_j..`, led by an eigenvalue row),
/// the time-series file (`t, phi_j..`) and the report.
pub fn write_eigfuncs(dir: &Path, basis: &EigenBasis, ds: &TrajectoryDataset, report: &EigfuncsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let count = report.count;
    let phi = basis.values();
    let dims: Vec<String> = (1..=ds.dim()).map(|d| format!("x{d}")).collect();
    let mut prefix = vec!["row"];
    prefix.extend(dims.iter().map(|s| s.as_str()));

    let mut out = csv::Writer::from_writer(std::io::BufWriter::new(fs::File::create(
        dir.join(EIGFUNCS_SCATTER_FILE),
    )?));
    out.write_record(eigen_header(&prefix, count))?;
    let mut lambda = vec!["lambda".to_string()];
    lambda.extend((0..ds.dim()).map(|_| String::new()));
    lambda.extend(report.eigenvalues.iter().map(|v| format_f64(*v)));
    out.write_record(&lambda)?;
    for s in 0..basis.n() {
        let mut rec = vec![s.to_string()];
        rec.extend(ds.sample(s).iter().map(|v| format_f64(*v)));
        rec.extend((0..count).map(|j| format_f64(phi[(s, j)])));
        out.write_record(&rec)?;
    }
    out.flush()?;

    let mut out = csv::Writer::from_writer(std::io::BufWriter::new(fs::File::create(
        dir.join(EIGFUNCS_SERIES_FILE),
    )?));
    out.write_record(eigen_header(&["t"], count))?;
    for s in 0..report.window_samples {
        let mut rec = vec![format_f64(s as f64 * ds.delta_t())];
        rec.extend((0..count).map(|j| format_f64(phi[(s, j)])));
        out.write_record(&rec)?;
    }
    out.flush()?;
    write_json(&dir.join(EIGFUNCS_REPORT_FILE), report)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Assimilation(RunSummary),
    Eigfuncs(EigfuncsReport),
    Convergence(ConvergenceReport),
}

/// Run a configuration end to end, writing every artifact into `out_dir`.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Outcome> {
    let go = || -> Result<Outcome> {
        cfg.validate()?;
        let dir = cfg.out_dir.as_path();
        fs::create_dir_all(dir)?;
        match cfg.task {
            Task::Assimilation => {
                let trained = train(cfg)?;
                let hash = write_training(dir, cfg, &trained)?;
                let records = assimilate(cfg, &trained.bundle)?;
                Ok(Outcome::Assimilation(write_run(dir, cfg, &hash, &records)?))
            }
            Task::EigfuncsDump => {
                write_json(&dir.join(CONFIG_FILE), cfg)?;
                let ds = training_data(cfg)?;
                let (basis, _) = build_basis(ds.points(), ds.dim(), cfg.l, &cfg.kernel)?;
                basis.check_invariants(TRAINING_TOLERANCE)?;
                let report = eigfuncs_report(&basis, cfg.delta_t, cfg.series_window, cfg.dump_count);
                write_eigfuncs(dir, &basis, &ds, &report)?;
                Ok(Outcome::Eigfuncs(report))
            }
            Task::Convergence => {
                write_json(&dir.join(CONFIG_FILE), cfg)?;
                let report = convergence_study(cfg)?;
                let f = fs::File::create(dir.join(CONVERGENCE_FILE))?;
                report.write_csv(std::io::BufWriter::new(f))?;
                Ok(Outcome::Convergence(report))
            }
        }
    };
    go().map_err(|e| e.in_preset(&cfg.preset))
}

pub fn run_preset(name: &str, overrides: &Overrides) -> Result<Outcome> {
    let cfg = overrides.config_for(name).map_err(|e| e.in_preset(name))?;
    run_config(&cfg)
}
