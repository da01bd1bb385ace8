//! Equal-mass quantization of a scalar observable and the matching
//! projector matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::filter::Field;
use crate::kernel::EigenBasis;
use crate::{Error, Result};

/// Fraction of samples with `h <= a`.
pub fn empirical_cdf(h_values: &[f64], a: f64) -> f64 {
    if h_values.is_empty() {
        return 0.0;
    }
    h_values.iter().filter(|h| **h <= a).count() as f64 / h_values.len() as f64
}

/// Bin boundaries `ξ_1 <= ... <= ξ_{S-1}` with left-closed bins, clamped at
/// both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    s: usize,
    boundaries: Vec<f64>,
}

impl Binning {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::param("bin boundaries must be finite"));
        }
        if boundaries.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("bin boundaries must be nondecreasing"));
        }
        Ok(Self {
            s: boundaries.len() + 1,
            boundaries,
        })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Largest `i` with `ξ_i <= a`, where `ξ_0 = -∞`.
    pub fn affiliation(&self, a: f64) -> usize {
        self.boundaries.partition_point(|b| *b <= a)
    }

    fn validate(&self) -> Result<()> {
        if self.s != self.boundaries.len() + 1 {
            return Err(Error::format("bin count does not match the boundaries"));
        }
        Self::new(self.boundaries.clone()).map(|_| ())
    }
}

/// Equal-mass partition of the training values.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantilePartition {
    binning: Binning,
    index_sets: Vec<Vec<usize>>,
    cond_means: Vec<f64>,
    /// Groups of equal values that straddle a block boundary.
    ties_split: usize,
}

impl QuantilePartition {
    pub fn s(&self) -> usize {
        self.binning.s
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.binning.boundaries
    }

    /// `b_i = i / S` for `i = 0..=S`.
    pub fn quantile_points(&self) -> Vec<f64> {
        (0..=self.s()).map(|i| i as f64 / self.s() as f64).collect()
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn cond_means(&self) -> &[f64] {
        &self.cond_means
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        self.index_sets.iter().map(Vec::len).collect()
    }

    pub fn ties_split(&self) -> usize {
        self.ties_split
    }

    pub fn affiliation(&self, a: f64) -> usize {
        self.binning.affiliation(a)
    }

    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            s: self.s(),
            boundaries: self.boundaries().to_vec(),
            cond_means: self.cond_means.clone(),
            bin_counts: self.bin_counts(),
            ties_split: self.ties_split,
        }
    }
}

/// Sort indices by `(h, index)` and cut into `S` consecutive blocks whose
/// sizes differ by at most one, larger blocks first.
pub fn build_partition(h_values: &[f64], s: usize) -> Result<QuantilePartition> {
    if s == 0 {
        return Err(Error::param("partition needs at least one bin"));
    }
    if h_values.iter().any(|h| !h.is_finite()) {
        return Err(Error::param("observable values must be finite"));
    }
    let n = h_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| h_values[*a].total_cmp(&h_values[*b]).then(a.cmp(b)));
    let distinct = 1 + order.windows(2).filter(|w| h_values[w[0]] != h_values[w[1]]).count();
    if n == 0 || s > distinct {
        return Err(Error::param(format!(
            "S = {s} exceeds the number of distinct observable values ({})",
            if n == 0 { 0 } else { distinct }
        )));
    }
    let (base, extra) = (n / s, n % s);
    let mut index_sets = Vec::with_capacity(s);
    let mut start = 0;
    for i in 0..s {
        let len = base + usize::from(i < extra);
        index_sets.push(order[start..start + len].to_vec());
        start += len;
    }
    let boundaries: Vec<f64> = index_sets[1..].iter().map(|set| h_values[set[0]]).collect();
    let ties_split = index_sets
        .windows(2)
        .filter(|w| h_values[*w[0].last().unwrap()] == h_values[w[1][0]])
        .count();
    let cond_means = index_sets
        .iter()
        .map(|set| set.iter().map(|i| h_values[*i]).sum::<f64>() / set.len() as f64)
        .collect();
    Ok(QuantilePartition {
        binning: Binning::new(boundaries)?,
        index_sets,
        cond_means,
        ties_split,
    })
}

/// JSON form of a partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub s: usize,
    pub boundaries: Vec<f64>,
    pub cond_means: Vec<f64>,
    pub bin_counts: Vec<usize>,
    #[serde(default)]
    pub ties_split: usize,
}

impl PartitionSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.s == 0 || p.cond_means.len() != p.s || p.bin_counts.len() != p.s {
            return Err(Error::format("partition field lengths do not match S"));
        }
        if p.cond_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::format("partition conditional means must be finite"));
        }
        p.binning()?;
        Ok(p)
    }

    pub fn binning(&self) -> Result<Binning> {
        let b = Binning {
            s: self.s,
            boundaries: self.boundaries.clone(),
        };
        b.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(b)
    }
}

/// Spectral projectors `E_0, ..., E_{S-1}` as `L×L` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorSet<T: Field> {
    mats: Vec<DMatrix<T>>,
}

impl<T: Field> ProjectorSet<T> {
    pub fn new(mats: Vec<DMatrix<T>>) -> Result<Self> {
        let d = mats.first().map(|m| m.nrows()).unwrap_or(0);
        if d == 0 || mats.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::param(
                "projectors must be nonempty square matrices of equal size",
            ));
        }
        Ok(Self { mats })
    }

    pub fn s(&self) -> usize {
        self.mats.len()
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn get(&self, i: usize) -> &DMatrix<T> {
        &self.mats[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<T>> {
        self.mats.iter()
    }

    /// `max |Σ_i E_i − I|`.
    pub fn resolution_error(&self) -> f64 {
        let d = self.dim();
        let mut sum = DMatrix::<T>::zeros(d, d);
        for m in &self.mats {
            sum += m;
        }
        max_abs(&(sum - DMatrix::<T>::identity(d, d)))
    }

    /// `max |E_i − E_i*|` over all projectors.
    pub fn hermiticity_error(&self) -> f64 {
        self.mats
            .iter()
            .map(|m| max_abs(&(m - m.adjoint())))
            .fold(0.0, f64::max)
    }

    /// `max |E_i² − E_i|` for one projector.
    pub fn idempotence_error(&self, i: usize) -> f64 {
        let m = &self.mats[i];
        max_abs(&(m * m - m))
    }

    pub fn traces(&self) -> Vec<f64> {
        self.mats.iter().map(|m| m.trace().real()).collect()
    }
}

pub(crate) fn max_abs<T: Field>(m: &DMatrix<T>) -> f64 {
    m.iter().map(|v| v.modulus()).fold(0.0, f64::max)
}

/// `E_{i,jk} = (1/N) Σ_{n ∈ N_i} φ_j(x_n) φ_k(x_n)`.
pub fn projector_matrices(basis: &EigenBasis, partition: &QuantilePartition) -> Result<ProjectorSet<f64>> {
    let n = basis.n();
    let total: usize = partition.bin_counts().iter().sum();
    if total != n {
        return Err(Error::param(format!(
            "partition covers {total} samples but the basis has {n}"
        )));
    }
    if let Some(bin) = partition.index_sets().iter().position(Vec::is_empty) {
        return Err(Error::DegeneratePartition { bin });
    }
    let phi = basis.values();
    let l = basis.l();
    let mats = partition
        .index_sets()
        .par_iter()
        .map(|set| {
            let rows = DMatrix::from_fn(set.len(), l, |r, c| phi[(set[r], c)]);
            let e = rows.tr_mul(&rows) / n as f64;
            // Exact symmetry.
            (&e + e.transpose()) * 0.5
        })
        .collect();
    ProjectorSet::new(mats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_examples() {
        let h = [1.0, 2.0, 3.0];
        assert_eq!(empirical_cdf(&h, 2.0), 2.0 / 3.0);
        assert_eq!(empirical_cdf(&h, 3.0), 1.0);
        assert_eq!(empirical_cdf(&h, 0.5), 0.0);
    }

    #[test]
    fn singleton_bins() {
        let h: Vec<f64> = (0..32).map(|i| ((i * 7 % 32) as f64).sqrt()).collect();
        let p = build_partition(&h, 32).unwrap();
        let mut sorted = h.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(p.cond_means(), &sorted[..]);
        assert_eq!(p.boundaries(), &sorted[1..]);
        assert!(p.bin_counts().iter().all(|c| *c == 1));
    }

    #[test]
    fn larger_blocks_first() {
        let h: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = build_partition(&h, 3).unwrap();
        assert_eq!(p.bin_counts(), vec![4, 3, 3]);
        assert_eq!(p.boundaries(), &[4.0, 7.0]);
        assert_eq!(p.cond_means(), &[1.5, 5.0, 8.0]);
    }

    #[test]
    fn affiliation_convention() {
        let b = Binning::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(b.affiliation(-5.0), 0);
        assert_eq!(b.affiliation(1.0), 1);
        assert_eq!(b.affiliation(1.5), 1);
        assert_eq!(b.affiliation(2.0), 2);
        assert_eq!(b.affiliation(1e9), 2);
    }

    #[test]
    fn training_samples_affiliate_to_their_bin() {
        let h: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.731).sin()).collect();
        let p = build_partition(&h, 7).unwrap();
        assert_eq!(p.ties_split(), 0);
        for (i, set) in p.index_sets().iter().enumerate() {
            for n in set {
                assert_eq!(p.affiliation(h[*n]), i);
            }
        }
    }

    #[test]
    fn ties_are_split_by_index() {
        let h = [0.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let p = build_partition(&h, 3).unwrap();
        assert_eq!(p.index_sets(), &[vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(p.ties_split(), 1);
        assert!(build_partition(&[1.0, 1.0, 2.0], 3).is_err());
    }

    #[test]
    fn cos_half_means() {
        // Conditional means of cos over the two halves of the circle.
        let n = 20_000;
        let h: Vec<f64> = (0..n)
            .map(|k| (k as f64 * 0.5 * (5f64.sqrt() - 1.0) * std::f64::consts::TAU).cos())
            .collect();
        let p = build_partition(&h, 2).unwrap();
        let m = 2.0 / std::f64::consts::PI;
        assert!((p.cond_means()[0] + m).abs() < 1e-3);
        assert!((p.cond_means()[1] - m).abs() < 1e-3);
        assert!(p.boundaries()[0].abs() < 1e-3);
    }

    #[test]
    fn uniform_histogram_is_flat() {
        let h: Vec<f64> = (0..997).map(|k| (k as f64 * 0.618_033_988_749_895).fract()).collect();
        let p = build_partition(&h, 10).unwrap();
        let probe: Vec<f64> = (0..997).map(|k| (k as f64 * 0.618_033_988_749_895).fract()).collect();
        let mut counts = vec![0usize; 10];
        for a in probe {
            counts[p.affiliation(a)] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn summary_json_round_trip() {
        let h: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let s = build_partition(&h, 4).unwrap().summary();
        let back = PartitionSummary::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(
            PartitionSummary::from_json(r#"{"s":2,"boundaries":[1,0],"cond_means":[0,1],"bin_counts":[1,1]}"#).is_err()
        );
        assert!(
            PartitionSummary::from_json(r#"{"s":3,"boundaries":[0],"cond_means":[0,1,2],"bin_counts":[1,1,1]}"#)
                .is_err()
        );
    }

    fn full_basis(n: usize) -> EigenBasis {
        // Orthonormal columns in the 1/N inner product, first column constant.
        let mut m = DMatrix::from_fn(n, n, |r, c| if c == 0 { 1.0 } else { ((r * c + r) as f64).sin() });
        let qr = m.clone().qr();
        m = qr.q() * (n as f64).sqrt();
        if m[(0, 0)] < 0.0 {
            m.column_mut(0).neg_mut();
        }
        EigenBasis::new(m, (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect()).unwrap()
    }

    #[test]
    fn projectors_at_full_resolution() {
        let n = 12;
        let basis = full_basis(n);
        let h: Vec<f64> = (0..n).map(|i| ((i * 5) % n) as f64).collect();
        let p = build_partition(&h, 3).unwrap();
        let e = projector_matrices(&basis, &p).unwrap();
        assert!(e.resolution_error() < 1e-12);
        for i in 0..3 {
            assert!(e.idempotence_error(i) < 1e-12);
            assert!((e.get(i)[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
            assert!((e.traces()[i] - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_bin_is_identity() {
        let basis = full_basis(6).truncate(3).unwrap();
        let p = build_partition(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1).unwrap();
        let e = projector_matrices(&basis, &p).unwrap();
        assert!(e.resolution_error() < 1e-12);
    }
}
