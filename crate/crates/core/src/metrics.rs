//! Information-theoretic skill metrics over a partition, in bits.

use serde::{Deserialize, Serialize};

use crate::filter::StepRecord;
use crate::{Error, Result};

/// Default floor for the probability inside the ignorance logarithm.
pub const DEFAULT_PROB_FLOOR: f64 = 1.0 / (1u64 << 30) as f64;

/// Relative entropy of `probs` with respect to the uniform distribution:
/// `Σ P_i log2(S P_i)`.
pub fn precision(probs: &[f64]) -> f64 {
    let s = probs.len() as f64;
    probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * (s * p).log2())
        .sum::<f64>()
        .max(0.0)
}

/// `-log2 max(P_bin, floor)`, and whether the floor was used.
pub fn ignorance(probs: &[f64], true_bin: usize, floor: f64) -> (f64, bool) {
    let p = probs[true_bin];
    if p < floor {
        (-floor.log2(), true)
    } else {
        (-p.log2(), false)
    }
}

/// Post-burn-in averages of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub s: usize,
    pub burn_in: f64,
    pub reports: usize,
    pub mean_precision: f64,
    pub mean_ignorance: f64,
    /// Share of reports with `E < log2 S`.
    pub useful_fraction: f64,
    /// Maximal runs of consecutive reports with `E >= log2 S`.
    pub excursions: usize,
    pub clamped: usize,
    pub resets: usize,
}

/// Summarize reports with `time > burn_in`.
pub fn summarize(records: &[StepRecord], s: usize, burn_in: f64) -> Result<MetricsSummary> {
    let kept: Vec<&StepRecord> = records.iter().filter(|r| r.time > burn_in).collect();
    if kept.is_empty() {
        return Err(Error::param(format!("burn-in {burn_in} leaves no reports")));
    }
    let bound = (s as f64).log2();
    let k = kept.len() as f64;
    let mut excursions = 0;
    let mut inside = false;
    for r in &kept {
        let bad = r.ignorance >= bound;
        if bad && !inside {
            excursions += 1;
        }
        inside = bad;
    }
    Ok(MetricsSummary {
        s,
        burn_in,
        reports: kept.len(),
        mean_precision: kept.iter().map(|r| r.precision).sum::<f64>() / k,
        mean_ignorance: kept.iter().map(|r| r.ignorance).sum::<f64>() / k,
        useful_fraction: kept.iter().filter(|r| r.ignorance < bound).count() as f64 / k,
        excursions,
        clamped: kept.iter().filter(|r| r.ignorance_clamped).count(),
        resets: kept.iter().filter(|r| r.reset).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(time: f64, probs: Vec<f64>, true_bin: usize) -> StepRecord {
        let (e, clamped) = ignorance(&probs, true_bin, DEFAULT_PROB_FLOOR);
        StepRecord {
            step: 0,
            time,
            precision: precision(&probs),
            ignorance: e,
            ignorance_clamped: clamped,
            probs,
            measurement: None,
            true_bin,
            reset: false,
        }
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision(&[1.0 / 32.0; 32]), 0.0);
        let mut dirac = vec![0.0; 32];
        dirac[7] = 1.0;
        assert_eq!(precision(&dirac), 5.0);
        let d = precision(&[0.25, 0.75]);
        let want = 0.25 * 0.5f64.log2() + 0.75 * 1.5f64.log2();
        assert!((d - want).abs() < 1e-15);
        assert!((d - 0.18872).abs() < 1e-5);
    }

    #[test]
    fn precision_is_entropy_deficit() {
        let p: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
        let h: f64 = -p.iter().map(|x| x * x.log2()).sum::<f64>();
        assert!((precision(&p) - (2.0 - h)).abs() < 1e-15);
        let q = [0.4, 0.1, 0.3, 0.2];
        assert!((precision(&p) - precision(&q)).abs() < 1e-15);
    }

    #[test]
    fn ignorance_examples() {
        assert_eq!(ignorance(&[0.0, 1.0], 1, DEFAULT_PROB_FLOOR), (0.0, false));
        assert_eq!(ignorance(&[1.0 / 32.0; 32], 3, DEFAULT_PROB_FLOOR), (5.0, false));
        assert_eq!(ignorance(&[0.0, 1.0], 0, 2f64.powi(-20)), (20.0, true));
    }

    #[test]
    fn summaries() {
        let uniform: Vec<StepRecord> = (0..10).map(|i| record(i as f64, vec![0.25; 4], i % 4)).collect();
        let s = summarize(&uniform, 4, -1.0).unwrap();
        assert_eq!(s.mean_precision, 0.0);
        assert_eq!(s.useful_fraction, 0.0);
        assert_eq!(s.excursions, 1);

        let dirac: Vec<StepRecord> = (0..10).map(|i| record(i as f64, vec![0.0, 1.0], 1)).collect();
        let s = summarize(&dirac, 2, 4.5).unwrap();
        assert_eq!(s.reports, 5);
        assert_eq!(s.mean_ignorance, 0.0);
        assert_eq!(s.useful_fraction, 1.0);
        assert_eq!(s.excursions, 0);
        assert!(summarize(&dirac, 2, 100.0).is_err());
    }
}
