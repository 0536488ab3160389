//! Order statistics, least-squares slopes and the stratified bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};
use vpme_core::lln::loglog_fit;
use vpme_core::rng::stream_rng;

/// Linear-interpolation quantile of unsorted data; `None` when empty.
pub fn quantile(data: &[f64], q: f64) -> Option<f64> {
    if data.is_empty() {
        return None;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(data: &[f64]) -> Option<f64> {
    quantile(data, 0.5)
}

/// Log-log slope with a percentile bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Least-squares slope of `log median(samples[k])` against `log x[k]`, with a
/// bootstrap that resamples each rung independently. `None` with fewer than two rungs.
pub fn median_slope_bootstrap(x: &[f64], samples: &[Vec<f64>], resamples: usize, seed: u64) -> Option<SlopeFit> {
    let rungs: Vec<(f64, &Vec<f64>)> = x.iter().copied().zip(samples).filter(|(_, s)| !s.is_empty()).collect();
    if rungs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = rungs.iter().map(|(v, _)| v.ln()).collect();
    let fit = |medians: &[f64]| loglog_fit(&lx, &medians.iter().map(|m| m.ln()).collect::<Vec<_>>());
    let medians: Vec<f64> = rungs.iter().map(|(_, s)| median(s).unwrap()).collect();
    let (slope, intercept) = fit(&medians);
    let mut slopes: Vec<f64> = (0..resamples)
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let meds: Vec<f64> = rungs
                .iter()
                .map(|(_, s)| {
                    let draw: Vec<f64> = (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).collect();
                    median(&draw).unwrap()
                })
                .collect();
            fit(&meds).0
        })
        .filter(|s| s.is_finite())
        .collect();
    slopes.sort_by(f64::total_cmp);
    let level = 0.95;
    let (ci_low, ci_high) = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (quantile_sorted(&slopes, (1.0 - level) / 2.0), quantile_sorted(&slopes, (1.0 + level) / 2.0))
    };
    Some(SlopeFit { slope, intercept, ci_low, ci_high, level, resamples })
}

/// Binomial standard error `√(p(1-p)/n)`.
pub fn frequency_sigma(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Whether `p[k+1] ≤ p[k] + 3√(σ_k² + σ_{k+1}²)` along the sequence.
pub fn non_increasing_within_3sigma(p: &[f64], n: &[usize]) -> bool {
    (1..p.len()).all(|k| {
        let s = (frequency_sigma(p[k - 1], n[k - 1]).powi(2) + frequency_sigma(p[k], n[k]).powi(2)).sqrt();
        p[k] <= p[k - 1] + 3.0 * s
    })
}
