//! Evaluation statistics: average run lengths, watermark energy, control
//! degradation, inter-alarm intervals, and trade-off sweep aggregation.
//!
//! Pure aggregation over traces; censored runs are counted and reported,
//! never silently dropped or zero-filled.

use alloc::vec::Vec;

use crate::env::Trace;
use crate::math;

/// Mean of uncensored values plus how many runs were censored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArlResult {
    pub mean: Option<f64>,
    pub censored: usize,
    pub n: usize,
}

/// In-control average run length: mean 1-based index of the first alarm
/// over nominal runs. Runs with no alarm are right-censored.
pub fn arl0(alarm_traces: &[Vec<bool>]) -> ArlResult {
    let mut sum = 0.0;
    let mut hits = 0usize;
    let mut censored = 0usize;
    for trace in alarm_traces {
        match trace.iter().position(|a| *a) {
            Some(idx) => {
                sum += (idx + 1) as f64;
                hits += 1;
            }
            None => censored += 1,
        }
    }
    ArlResult {
        mean: (hits > 0).then(|| sum / hits as f64),
        censored,
        n: alarm_traces.len(),
    }
}

/// Detection delay of one run: T_d - tau with T_d the first alarm index at
/// or after tau (an alarm exactly at tau scores 0; the next sample scores 1).
pub fn detection_delay(alarms: &[(usize, bool)], tau: usize) -> Option<usize> {
    alarms.iter().find(|(t, a)| *t >= tau && *a).map(|(t, _)| t - tau)
}

/// Average detection delay over runs; censored runs counted separately.
pub fn arl1(delays: &[Option<usize>]) -> ArlResult {
    let mut sum = 0.0;
    let mut hits = 0usize;
    let mut censored = 0usize;
    for d in delays {
        match d {
            Some(v) => {
                sum += *v as f64;
                hits += 1;
            }
            None => censored += 1,
        }
    }
    ArlResult { mean: (hits > 0).then(|| sum / hits as f64), censored, n: delays.len() }
}

/// Gaps (in sample counts) between consecutive alarms at or after tau.
pub fn inter_alarm_intervals(alarm_times: &[usize], tau: usize) -> Vec<usize> {
    let after: Vec<usize> = alarm_times.iter().copied().filter(|t| *t >= tau).collect();
    after.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Per-episode evaluation summary.
#[derive(Clone, Debug)]
pub struct RunSummary {
    /// Total watermark energy sum_t ||phi_t||_1.
    pub energy: f64,
    /// Mean per-step ||y_wom - y||_2.
    pub degradation: f64,
    /// Fast-time indices of processed alarms.
    pub alarm_times: Vec<usize>,
    /// Detection delay in processed samples (None = censored).
    pub detection_delay: Option<usize>,
    /// Inter-alarm gaps in processed samples after the onset.
    pub inter_alarm: Vec<usize>,
    /// Belief at the final processed sample.
    pub final_belief: f64,
    /// Mean belief over processed samples at/after onset (attacked runs).
    pub mean_belief_after_onset: Option<f64>,
}

/// Aggregate one episode trace; `onset` is the attack onset in fast time
/// (None for nominal runs).
pub fn summarize(trace: &Trace, onset: Option<usize>) -> RunSummary {
    let energy = trace.phi_l1.iter().sum();
    let degradation = if trace.deviation.is_empty() {
        0.0
    } else {
        trace.deviation.iter().sum::<f64>() / trace.deviation.len() as f64
    };
    let mut alarm_times = Vec::new();
    let mut processed_seq = Vec::new(); // (processed index, fast t, alarm)
    let mut k = 0usize;
    let mut final_belief = f64::NAN;
    for i in 0..trace.len() {
        if trace.processed[i] {
            k += 1;
            processed_seq.push((k, trace.t[i], trace.alarm[i]));
            if trace.alarm[i] {
                alarm_times.push(trace.t[i]);
            }
            final_belief = trace.d[i];
        }
    }
    let (detection_delay, inter_alarm, mean_belief_after_onset) = match onset {
        Some(tau) => {
            // delays and gaps in processed-sample counts
            let tau_k = processed_seq.iter().find(|(_, t, _)| *t >= tau).map(|(k, _, _)| *k);
            let delay = tau_k.and_then(|tk| {
                processed_seq
                    .iter()
                    .find(|(k, _, a)| *k >= tk && *a)
                    .map(|(k, _, _)| k - tk)
            });
            let alarm_ks: Vec<usize> = processed_seq
                .iter()
                .filter(|(_, t, a)| *t >= tau && *a)
                .map(|(k, _, _)| *k)
                .collect();
            let gaps = alarm_ks.windows(2).map(|w| w[1] - w[0]).collect();
            let beliefs: Vec<f64> = trace
                .t
                .iter()
                .zip(&trace.processed)
                .zip(&trace.d)
                .filter(|((t, p), _)| **t >= tau && **p)
                .map(|(_, d)| *d)
                .collect();
            let mean_b = (!beliefs.is_empty())
                .then(|| beliefs.iter().sum::<f64>() / beliefs.len() as f64);
            (delay, gaps, mean_b)
        }
        None => (None, Vec::new(), None),
    };
    RunSummary {
        energy,
        degradation,
        alarm_times,
        detection_delay,
        inter_alarm,
        final_belief,
        mean_belief_after_onset,
    }
}

/// One row of the variance/detectability trade-off sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub u: f64,
    pub detection_mean: f64,
    pub detection_se: f64,
    pub degradation_mean: f64,
    pub degradation_se: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var / n))
}

/// Aggregate per-variance samples into a table sorted ascending in U.
/// `detection` holds the mean attacked-phase beliefs, `degradation` the
/// nominal per-episode degradations.
pub fn sweep_rows(per_u: &[(f64, Vec<f64>, Vec<f64>)]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = per_u
        .iter()
        .map(|(u, detection, degradation)| {
            let (dm, dse) = mean_se(detection);
            let (gm, gse) = mean_se(degradation);
            SweepRow {
                u: *u,
                detection_mean: dm,
                detection_se: dse,
                degradation_mean: gm,
                degradation_se: gse,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.u.partial_cmp(&b.u).unwrap());
    rows
}

/// Kolmogorov-Smirnov statistic of `samples` against a reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in samples.iter().enumerate() {
        let f = cdf(*x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic KS critical value at significance alpha.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    // c(alpha) = sqrt(-ln(alpha/2)/2)
    math::sqrt(-math::ln(alpha / 2.0) / 2.0) / math::sqrt(n as f64)
}
