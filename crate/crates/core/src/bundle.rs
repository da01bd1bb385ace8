//! Operator bundles: everything the filter needs, with a versioned binary
//! encoding and a sha256 integrity check.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filter::{run_filter, DensityMatrix, FilterConfig, FilterModel, StepRecord};
use crate::operators::{
    circle_binary_projectors, circle_cos_boundaries, circle_cos_projectors, circle_phase_forecast, AnalyticCircleBasis,
    EvolutionMode, ShiftMatrix,
};
use crate::quantizer::{Binning, ProjectorSet};
use crate::{Complex64, Error, Result};

pub const MAGIC: &[u8; 8] = b"QMDABNDL";
pub const FORMAT_VERSION: u16 = 1;

const KIND_DATA_DRIVEN: u8 = 1;
const KIND_CIRCLE: u8 = 2;

/// Cap on matrix entries an analytic bundle may expand to.
const MAX_ANALYTIC_ENTRIES: usize = 1 << 22;

/// Shift matrices and projectors in a learned real basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DataDrivenBundle {
    pub delta_t: f64,
    /// Delays used to build the basis; 0 for full observation.
    pub q_delays: usize,
    pub mode: EvolutionMode,
    pub eigenvalues: Vec<f64>,
    pub binning: Binning,
    pub cond_means: Vec<f64>,
    /// Sorted by strictly increasing `q`.
    pub shifts: Vec<ShiftMatrix>,
    pub projectors: ProjectorSet<f64>,
}

impl DataDrivenBundle {
    pub fn shift(&self, q: usize) -> Option<&ShiftMatrix> {
        self.shifts
            .binary_search_by_key(&q, |s| s.q)
            .ok()
            .map(|i| &self.shifts[i])
    }
}

impl FilterModel for DataDrivenBundle {
    type Scalar = f64;

    fn dim(&self) -> usize {
        self.projectors.dim()
    }

    fn projectors(&self) -> &ProjectorSet<f64> {
        &self.projectors
    }

    fn binning(&self) -> &Binning {
        &self.binning
    }

    fn stationary(&self) -> DensityMatrix<f64> {
        DensityMatrix::stationary(self.dim(), 0).expect("nonempty basis")
    }

    fn delta_t(&self) -> f64 {
        self.delta_t
    }

    fn forecast(&self, rho: &DensityMatrix<f64>, q: usize) -> Result<DensityMatrix<f64>> {
        let u = self
            .shift(q)
            .ok_or_else(|| Error::param(format!("no shift matrix for {q} steps")))?;
        crate::filter::forecast(rho, &u.entries)
    }

    fn available_steps(&self) -> Option<Vec<usize>> {
        Some(self.shifts.iter().map(|s| s.q).collect())
    }
}

/// Measured quantity for the analytic backend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CircleMeasurement {
    /// `h = 1_[0, α)`, two bins.
    Binary { alpha: f64 },
    /// `h = cos θ`, `S` equal-mass bins.
    Cos { s: usize },
}

/// Analytic rotation on the circle in the Fourier basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleBundle {
    basis: AnalyticCircleBasis,
    delta_t: f64,
    measurement: CircleMeasurement,
    binning: Binning,
    projectors: ProjectorSet<Complex64>,
}

impl CircleBundle {
    pub fn new(basis: AnalyticCircleBasis, delta_t: f64, measurement: CircleMeasurement) -> Result<Self> {
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::param("delta_t must be positive"));
        }
        let bins = match measurement {
            CircleMeasurement::Binary { .. } => 2,
            CircleMeasurement::Cos { s } => s,
        };
        if basis.dim().saturating_mul(basis.dim()).saturating_mul(bins) > MAX_ANALYTIC_ENTRIES {
            return Err(Error::param("analytic bundle is too large"));
        }
        let (binning, projectors) = match measurement {
            CircleMeasurement::Binary { alpha } => (Binning::new(vec![0.5])?, circle_binary_projectors(alpha, &basis)?),
            CircleMeasurement::Cos { s } => (circle_cos_boundaries(s)?, circle_cos_projectors(s, &basis)?),
        };
        Ok(Self {
            basis,
            delta_t,
            measurement,
            binning,
            projectors,
        })
    }

    pub fn basis(&self) -> &AnalyticCircleBasis {
        &self.basis
    }

    pub fn measurement(&self) -> CircleMeasurement {
        self.measurement
    }
}

impl FilterModel for CircleBundle {
    type Scalar = Complex64;

    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn projectors(&self) -> &ProjectorSet<Complex64> {
        &self.projectors
    }

    fn binning(&self) -> &Binning {
        &self.binning
    }

    fn stationary(&self) -> DensityMatrix<Complex64> {
        self.basis.stationary()
    }

    fn delta_t(&self) -> f64 {
        self.delta_t
    }

    fn forecast(&self, rho: &DensityMatrix<Complex64>, q: usize) -> Result<DensityMatrix<Complex64>> {
        circle_phase_forecast(rho, &self.basis, q as f64 * self.delta_t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyBundle {
    DataDriven(DataDrivenBundle),
    Circle(CircleBundle),
}

impl AnyBundle {
    pub fn s(&self) -> usize {
        match self {
            AnyBundle::DataDriven(b) => b.projectors.s(),
            AnyBundle::Circle(b) => b.projectors.s(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyBundle::DataDriven(b) => b.dim(),
            AnyBundle::Circle(b) => b.dim(),
        }
    }

    pub fn binning(&self) -> &Binning {
        match self {
            AnyBundle::DataDriven(b) => &b.binning,
            AnyBundle::Circle(b) => &b.binning,
        }
    }

    pub fn delta_t(&self) -> f64 {
        match self {
            AnyBundle::DataDriven(b) => b.delta_t,
            AnyBundle::Circle(b) => b.delta_t,
        }
    }

    pub fn run(&self, truth: &[f64], cfg: &FilterConfig) -> Result<Vec<StepRecord>> {
        match self {
            AnyBundle::DataDriven(b) => run_filter(b, truth, cfg),
            AnyBundle::Circle(b) => run_filter(b, truth, cfg),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(FORMAT_VERSION).unwrap();
        match self {
            AnyBundle::DataDriven(b) => {
                out.push(KIND_DATA_DRIVEN);
                encode_data_driven(b, &mut out);
            }
            AnyBundle::Circle(b) => {
                out.push(KIND_CIRCLE);
                put_f64(&mut out, b.delta_t);
                put_f64(&mut out, b.basis.omega);
                put_u32(&mut out, b.basis.l_max);
                match b.measurement {
                    CircleMeasurement::Binary { alpha } => {
                        out.push(0);
                        put_f64(&mut out, alpha);
                    }
                    CircleMeasurement::Cos { s } => {
                        out.push(1);
                        put_u32(&mut out, s);
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mut magic = [0u8; 8];
        r.bytes(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not an operator bundle"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported bundle version {version}")));
        }
        let bundle = match r.u8()? {
            KIND_DATA_DRIVEN => AnyBundle::DataDriven(decode_data_driven(&mut r)?),
            KIND_CIRCLE => {
                let delta_t = r.f64()?;
                let omega = r.f64()?;
                let l_max = r.u32()?;
                let measurement = match r.u8()? {
                    0 => CircleMeasurement::Binary { alpha: r.f64()? },
                    1 => CircleMeasurement::Cos { s: r.u32()? },
                    k => return Err(Error::format(format!("unknown circle measurement kind {k}"))),
                };
                let basis = AnalyticCircleBasis::new(l_max, omega).map_err(to_format)?;
                AnyBundle::Circle(CircleBundle::new(basis, delta_t, measurement).map_err(to_format)?)
            }
            k => return Err(Error::format(format!("unknown bundle kind {k}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::format("trailing bytes after bundle"));
        }
        Ok(bundle)
    }
}

fn to_format(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Format(m),
        e => e,
    }
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.write_f64::<LittleEndian>(v).unwrap();
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.write_u32::<LittleEndian>(u32::try_from(v).expect("size fits in u32"))
        .unwrap();
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for v in m.iter() {
        put_f64(out, *v);
    }
}

fn encode_data_driven(b: &DataDrivenBundle, out: &mut Vec<u8>) {
    let l = b.projectors.dim();
    let s = b.projectors.s();
    put_f64(out, b.delta_t);
    put_u32(out, b.q_delays);
    out.push(match b.mode {
        EvolutionMode::Direct => 0,
        EvolutionMode::Power => 1,
    });
    put_u32(out, l);
    put_u32(out, s);
    b.eigenvalues.iter().for_each(|v| put_f64(out, *v));
    b.binning.boundaries().iter().for_each(|v| put_f64(out, *v));
    b.cond_means.iter().for_each(|v| put_f64(out, *v));
    put_u32(out, b.shifts.len());
    for u in &b.shifts {
        put_u32(out, u.q);
        put_matrix(out, &u.entries);
    }
    for e in b.projectors.iter() {
        put_matrix(out, e);
    }
}

fn decode_data_driven(r: &mut Reader) -> Result<DataDrivenBundle> {
    let delta_t = r.f64()?;
    if !(delta_t > 0.0) {
        return Err(Error::format("delta_t must be positive"));
    }
    let q_delays = r.u32()?;
    let mode = match r.u8()? {
        0 => EvolutionMode::Direct,
        1 => EvolutionMode::Power,
        k => return Err(Error::format(format!("unknown evolution mode {k}"))),
    };
    let l = r.u32()?;
    let s = r.u32()?;
    if l == 0 || s == 0 {
        return Err(Error::format("basis size and bin count must be positive"));
    }
    let eigenvalues = r.f64s(l)?;
    let binning = Binning::new(r.f64s(s - 1)?).map_err(to_format)?;
    let cond_means = r.f64s(s)?;
    let n_shifts = r.u32()?;
    if n_shifts == 0 {
        return Err(Error::format("bundle has no shift matrices"));
    }
    let mut shifts: Vec<ShiftMatrix> = Vec::new();
    for _ in 0..n_shifts {
        let q = r.u32()?;
        if shifts.last().is_some_and(|p| p.q >= q) {
            return Err(Error::format("shift matrices must have increasing step counts"));
        }
        shifts.push(ShiftMatrix {
            q,
            entries: r.matrix(l)?,
        });
    }
    let mats = (0..s).map(|_| r.matrix(l)).collect::<Result<Vec<_>>>()?;
    Ok(DataDrivenBundle {
        delta_t,
        q_delays,
        mode,
        eigenvalues,
        binning,
        cond_means,
        shifts,
        projectors: ProjectorSet::new(mats).map_err(to_format)?,
    })
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            cur: Cursor::new(bytes),
        }
    }

    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn truncated() -> Error {
        Error::format("bundle is truncated")
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.cur.read_exact(buf).map_err(|_| Self::truncated())
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| Self::truncated())
    }

    fn u16(&mut self) -> Result<u16> {
        self.cur.read_u16::<LittleEndian>().map_err(|_| Self::truncated())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(self.cur.read_u32::<LittleEndian>().map_err(|_| Self::truncated())? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let v = self.cur.read_f64::<LittleEndian>().map_err(|_| Self::truncated())?;
        if !v.is_finite() {
            return Err(Error::format("non-finite value in bundle"));
        }
        Ok(v)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(Self::truncated());
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, l: usize) -> Result<DMatrix<f64>> {
        let n = l.checked_mul(l).ok_or_else(Self::truncated)?;
        Ok(DMatrix::from_vec(l, l, self.f64s(n)?))
    }
}

/// Lowercase hex sha256.
pub fn bundle_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const BUNDLE_FILE: &str = "bundle.bin";
pub const HASH_FILE: &str = "bundle.sha256";

/// Write `bundle.bin` and `bundle.sha256` into `dir`. Returns the hash.
pub fn save_bundle(bundle: &AnyBundle, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir)?;
    let bytes = bundle.encode();
    let hash = bundle_hash(&bytes);
    fs::write(dir.join(BUNDLE_FILE), &bytes)?;
    fs::write(dir.join(HASH_FILE), format!("{hash}\n"))?;
    Ok(hash)
}

/// Read a bundle from `dir`, refusing it if its hash does not match the
/// recorded one.
pub fn load_bundle(dir: &Path) -> Result<(AnyBundle, String)> {
    let bytes = fs::read(dir.join(BUNDLE_FILE))?;
    let expected = fs::read_to_string(dir.join(HASH_FILE))?.trim().to_string();
    let found = bundle_hash(&bytes);
    if expected != found {
        return Err(Error::BundleMismatch { expected, found });
    }
    Ok((AnyBundle::decode(&bytes)?, found))
}
