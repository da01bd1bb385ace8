//! Scoring helpers for the acceptance suite, and a dense oracle that runs the
//! filter cycle directly on the training samples.

use nalgebra::DMatrix;
use qmda::filter::StepRecord;

/// Whether the thresholded prediction `P_1 > 1/2` of a two-bin run agrees
/// with the truth.
pub fn binary_hit(r: &StepRecord) -> bool {
    (r.probs[1] > 0.5) == (r.true_bin == 1)
}

/// Share of reports in `[t0, t1]` with a binary hit.
pub fn tracking_fraction(records: &[StepRecord], t0: f64, t1: f64) -> Option<f64> {
    let kept: Vec<&StepRecord> = records.iter().filter(|r| r.time >= t0 && r.time <= t1).collect();
    if kept.is_empty() {
        return None;
    }
    Some(kept.iter().filter(|r| binary_hit(r)).count() as f64 / kept.len() as f64)
}

/// End time of the first window `[t - width, t]` (starting no earlier than
/// the first report) whose hit rate reaches `threshold`.
pub fn first_tracking_window(records: &[StepRecord], width: f64, threshold: f64) -> Option<f64> {
    let start = records.first()?.time;
    let mut hits = vec![0usize; records.len() + 1];
    for (i, r) in records.iter().enumerate() {
        hits[i + 1] = hits[i] + binary_hit(r) as usize;
    }
    let mut lo = 0;
    for (hi, r) in records.iter().enumerate() {
        if r.time < start + width {
            continue;
        }
        while records[lo].time < r.time - width {
            lo += 1;
        }
        let count = hi + 1 - lo;
        if (hits[hi + 1] - hits[lo]) as f64 >= threshold * count as f64 {
            return Some(r.time);
        }
    }
    None
}

/// Mean of `f` over reports with `t0 <= time <= t1`.
pub fn mean_over(records: &[StepRecord], t0: f64, t1: f64, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter(|r| r.time >= t0 && r.time <= t1).map(f).collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Steps at which a sequence goes up.
pub fn increases(series: &[f64]) -> usize {
    series.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Local maxima of a bin distribution above `floor`.
pub fn peaks(probs: &[f64], floor: f64) -> usize {
    let s = probs.len();
    (0..s)
        .filter(|&i| {
            probs[i] > floor && (i == 0 || probs[i] > probs[i - 1]) && (i + 1 == s || probs[i] >= probs[i + 1])
        })
        .count()
}

/// Bin membership by rank: the `k`-th smallest value goes to bin
/// `k * S / N`. Assumes distinct values and `S` dividing `N`.
pub fn rank_partition(h: &[f64], s: usize) -> Vec<Vec<usize>> {
    let n = h.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| h[*a].total_cmp(&h[*b]));
    let mut sets = vec![Vec::new(); s];
    for (rank, idx) in order.into_iter().enumerate() {
        sets[rank * s / n].push(idx);
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    sets
}

/// The filter written on `ℓ²` of the training samples: states are `N×N`
/// matrices, the `q`-step shift moves mass from sample `n` to `n + q` and
/// drops what falls off the end, and bin projectors are diagonal masks.
pub struct SampleSpaceFilter {
    sets: Vec<Vec<usize>>,
    n: usize,
}

impl SampleSpaceFilter {
    pub fn new(n: usize, sets: Vec<Vec<usize>>) -> Self {
        Self { sets, n }
    }

    /// Uniform pure state `1 1ᵀ / N`.
    pub fn stationary(&self) -> DMatrix<f64> {
        DMatrix::from_element(self.n, self.n, 1.0 / self.n as f64)
    }

    pub fn forecast(&self, rho: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for a in q..n {
            for b in q..n {
                out[(a, b)] = rho[(a - q, b - q)];
            }
        }
        let tr = out.trace();
        out / tr
    }

    pub fn probs(&self, rho: &DMatrix<f64>) -> Vec<f64> {
        let tr = rho.trace();
        self.sets
            .iter()
            .map(|set| set.iter().map(|i| rho[(*i, *i)]).sum::<f64>() / tr)
            .collect()
    }

    pub fn analyze(&self, rho: &DMatrix<f64>, bin: usize) -> DMatrix<f64> {
        let mut mask = vec![false; self.n];
        for i in &self.sets[bin] {
            mask[*i] = true;
        }
        let out = DMatrix::from_fn(
            self.n,
            self.n,
            |a, b| if mask[a] && mask[b] { rho[(a, b)] } else { 0.0 },
        );
        let tr = out.trace();
        out / tr
    }

    /// Same schedule as the production cycle: forecast from the last
    /// posterior, measure at positive multiples of `obs`, report every
    /// `stride` steps and at measurements. Returns `(step, probs)`.
    pub fn run(&self, bins: &[usize], obs: usize, stride: usize) -> Vec<(usize, Vec<f64>)> {
        let mut post = self.stationary();
        let mut last = 0;
        let mut out = Vec::new();
        for (step, bin) in bins.iter().enumerate() {
            let measuring = step > 0 && step % obs == 0;
            if !measuring && step % stride != 0 {
                continue;
            }
            let prior = self.forecast(&post, step - last);
            if measuring {
                post = self.analyze(&prior, *bin);
                last = step;
                out.push((step, self.probs(&post)));
            } else {
                out.push((step, self.probs(&prior)));
            }
        }
        out
    }
}

/// Outcome of running the production filter at full resolution (`L = N`)
/// against [`SampleSpaceFilter`].
#[derive(Clone, Debug)]
pub struct BruteForceReport {
    pub n: usize,
    pub reports: usize,
    /// Largest probability difference over all reports and bins.
    pub max_prob_error: f64,
    /// Whether the quantile partition equals the rank partition.
    pub partition_matches: bool,
    /// `max |analyze(analyze(ρ, i), i) − analyze(ρ, i)|` over bins.
    pub idempotence_error: f64,
    /// `max ‖E_i² − E_i‖` over bins.
    pub projector_idempotence_error: f64,
    /// Smallest purity of a posterior on a one-sample bin (`S = N`).
    pub min_rank_one_purity: f64,
}

/// Train the data-driven pipeline on `n` circle samples with `L = N`, run
/// the cycle with `S` bins and compare with the sample-space oracle.
pub fn brute_force_comparison(n: usize, s: usize, obs: usize, steps: usize) -> qmda::Result<BruteForceReport> {
    use qmda::bundle::DataDrivenBundle;
    use qmda::dynamics::{circle_trajectory, CircleParams, Observable};
    use qmda::filter::{analyze, run_filter, FilterConfig, FilterModel};
    use qmda::kernel::{build_basis, KernelParams};
    use qmda::operators::{shift_matrices, EvolutionMode};
    use qmda::quantizer::{build_partition, projector_matrices};

    let circle = CircleParams::new(1.0)?;
    // Unit steps spread the samples over the whole circle.
    let ds = circle_trajectory(0.4, &circle, 1.0, n, Observable::Cos)?;
    let (basis, _) = build_basis(ds.points(), 2, n, &KernelParams::default())?;
    let bundle_for = |s: usize| -> qmda::Result<(DataDrivenBundle, Vec<Vec<usize>>)> {
        let partition = build_partition(ds.h_values(), s)?;
        let projectors = projector_matrices(&basis, &partition)?;
        let qs: Vec<usize> = (0..=obs).collect();
        let bundle = DataDrivenBundle {
            delta_t: 1.0,
            q_delays: 0,
            mode: EvolutionMode::Direct,
            eigenvalues: basis.eigenvalues().to_vec(),
            binning: partition.binning().clone(),
            cond_means: partition.cond_means().to_vec(),
            shifts: shift_matrices(&basis, &qs, EvolutionMode::Direct)?,
            projectors,
        };
        let mut sets = partition.index_sets().to_vec();
        sets.iter_mut().for_each(|set| set.sort_unstable());
        Ok((bundle, sets))
    };

    let (bundle, sets) = bundle_for(s)?;
    let partition_matches = sets == rank_partition(ds.h_values(), s);
    // At full resolution the model is exact for the training trajectory and
    // gives other sequences zero probability.
    if steps >= n {
        return Err(qmda::Error::Parameter(
            "the run must stay within the training trajectory".into(),
        ));
    }
    let truth = ds.h_values()[..=steps].to_vec();
    let mut cfg = FilterConfig::new(obs, 1);
    cfg.check_invariants = true;
    let records = run_filter(&bundle, &truth, &cfg)?;
    let bins: Vec<usize> = records.iter().map(|r| r.true_bin).collect();
    let oracle = SampleSpaceFilter::new(n, sets).run(&bins, obs, 1);
    let mut max_prob_error: f64 = 0.0;
    for (r, (step, p)) in records.iter().zip(&oracle) {
        if r.step != *step {
            return Err(qmda::Error::Consistency("report schedules differ".into()));
        }
        for (a, b) in r.probs.iter().zip(p) {
            max_prob_error = max_prob_error.max((a - b).abs());
        }
    }

    let mut idempotence_error: f64 = 0.0;
    let rho = bundle.stationary();
    for i in 0..s {
        let once = analyze(&rho, i, bundle.projectors())?;
        let twice = analyze(&once, i, bundle.projectors())?;
        idempotence_error = idempotence_error.max((twice.matrix() - once.matrix()).amax());
    }

    let projector_idempotence_error = (0..s)
        .map(|i| bundle.projectors().idempotence_error(i))
        .fold(0.0, f64::max);

    let (single, _) = bundle_for(n)?;
    let mut min_rank_one_purity = f64::INFINITY;
    let rho = single.stationary();
    for i in 0..n {
        let post = analyze(&rho, i, single.projectors())?;
        min_rank_one_purity = min_rank_one_purity.min(post.purity());
    }

    Ok(BruteForceReport {
        n,
        reports: records.len(),
        max_prob_error,
        partition_matches,
        idempotence_error,
        projector_idempotence_error,
        min_rank_one_purity,
    })
}
