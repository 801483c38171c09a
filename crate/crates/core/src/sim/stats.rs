use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use super::{RunSeries, SimError, SimSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u32,
}

/// Across-run distribution of one component's time-averaged level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAggregate {
    pub target: String,
    pub target_name: String,
    pub summaries: Vec<f64>,
    pub bins: Vec<HistogramBin>,
    pub peak: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakShiftReport {
    pub delta_mean: f64,
    pub delta_peak: f64,
    pub shifted_right: bool,
    /// 95% bootstrap interval of `delta_mean`.
    pub ci: (f64, f64),
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Summaries, histogram, modal-bin peak and mean for `target`.
pub fn aggregate(
    spec: &SimSpec,
    batch: &[RunSeries],
    target: &str,
    bins: u32,
) -> Result<BatchAggregate, SimError> {
    let name = spec
        .component_name(target)
        .ok_or_else(|| SimError::UnknownTarget(target.to_string()))?
        .to_string();
    if batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let summaries = batch
        .iter()
        .map(|r| {
            let xs = r
                .series
                .get(target)
                .ok_or_else(|| SimError::UnknownTarget(target.to_string()))?;
            Ok(xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(summarize(target.to_string(), name, summaries, bins))
}

pub(crate) fn summarize(
    target: String,
    target_name: String,
    summaries: Vec<f64>,
    bins: u32,
) -> BatchAggregate {
    let lo = summaries.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = summaries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = if lo == hi { 1 } else { bins.max(1) as usize };
    let width = (hi - lo) / k as f64;
    let mut counts = vec![0u32; k];
    for &x in &summaries {
        let idx = if width > 0.0 {
            ((x - lo) / width).floor() as usize
        } else {
            0
        };
        counts[idx.min(k - 1)] += 1;
    }
    let bins: Vec<HistogramBin> = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == k {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count,
        })
        .collect();
    // first bin wins ties
    let modal = bins
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.count.cmp(&b.count).then(j.cmp(i)))
        .map(|(_, b)| b)
        .expect("at least one bin");
    let peak = ((modal.lo + modal.hi) / 2.0).clamp(lo, hi);
    let mean = summaries.iter().sum::<f64>() / summaries.len() as f64;
    BatchAggregate {
        target,
        target_name,
        summaries,
        bins,
        peak,
        mean,
    }
}

pub fn peak_shift(
    baseline: &BatchAggregate,
    treatment: &BatchAggregate,
) -> Result<PeakShiftReport, SimError> {
    peak_shift_with(baseline, treatment, BOOTSTRAP_RESAMPLES, 0)
}

/// Treatment minus baseline. Equal-length summaries are resampled as pairs
/// (runs with the same index share random streams); otherwise each side is
/// resampled independently.
pub fn peak_shift_with(
    baseline: &BatchAggregate,
    treatment: &BatchAggregate,
    resamples: usize,
    seed: u64,
) -> Result<PeakShiftReport, SimError> {
    if baseline.target_name != treatment.target_name {
        return Err(SimError::MismatchedTargets(
            baseline.target_name.clone(),
            treatment.target_name.clone(),
        ));
    }
    if baseline.summaries.is_empty() || treatment.summaries.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let delta_mean = treatment.mean - baseline.mean;
    let delta_peak = treatment.peak - baseline.peak;
    let mut rng = CounterRng::keyed(&[seed, 0xB007]);
    let mut pick = |n: usize| ((rng.next_f64() * n as f64) as usize).min(n - 1);
    let (b, t) = (&baseline.summaries, &treatment.summaries);
    let mut deltas: Vec<f64> = (0..resamples.max(1))
        .map(|_| {
            if b.len() == t.len() {
                let n = b.len();
                (0..n).map(|_| pick(n)).map(|i| t[i] - b[i]).sum::<f64>() / n as f64
            } else {
                let mt = (0..t.len()).map(|_| t[pick(t.len())]).sum::<f64>() / t.len() as f64;
                let mb = (0..b.len()).map(|_| b[pick(b.len())]).sum::<f64>() / b.len() as f64;
                mt - mb
            }
        })
        .collect();
    deltas.sort_by(f64::total_cmp);
    let ci = (percentile(&deltas, 0.025), percentile(&deltas, 0.975));
    Ok(PeakShiftReport {
        delta_mean,
        delta_peak,
        shifted_right: delta_mean > 0.0 && ci.0 > 0.0,
        ci,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}
