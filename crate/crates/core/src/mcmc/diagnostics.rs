//! Convergence and interval diagnostics on retained draws.

use serde::{Deserialize, Serialize};

/// Minimum per-chain length for the potential scale reduction factor.
pub const MIN_RHAT_LENGTH: usize = 10;
/// Minimum pooled draws for an HPD interval.
pub const MIN_HPD_DRAWS: usize = 20;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Potential scale reduction factor of one scalar across chains.
///
/// `None` when it is unavailable: fewer than two chains, unequal lengths,
/// fewer than [`MIN_RHAT_LENGTH`] draws, or zero within-chain variance.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    if m < 2 {
        return None;
    }
    let n = chains[0].len();
    if n < MIN_RHAT_LENGTH || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return None;
    }
    // B/n is the variance of the chain means
    let b_over_n = variance(&means);
    let nf = n as f64;
    let v = (nf - 1.0) / nf * w + b_over_n;
    Some((v / w).sqrt())
}

/// Highest-posterior-density interval estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hpd {
    pub lo: f64,
    pub hi: f64,
    /// The window has zero width (constant draws).
    pub degenerate: bool,
}

impl Hpd {
    /// The interval does not contain zero.
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Shortest window of `⌈mass·n⌉` consecutive sorted draws.
///
/// `None` below [`MIN_HPD_DRAWS`] draws or if any draw is NaN. Ties between
/// equally short windows go to the lowest one.
pub fn hpd(draws: &[f64], mass: f64) -> Option<Hpd> {
    let n = draws.len();
    if n < MIN_HPD_DRAWS || draws.iter().any(|x| x.is_nan()) {
        return None;
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let (mut best, mut width) = (0, f64::INFINITY);
    for i in 0..=n - k {
        let w = sorted[i + k - 1] - sorted[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Some(Hpd {
        lo: sorted[best],
        hi: sorted[best + k - 1],
        degenerate: width == 0.0,
    })
}

/// Mean and (n−1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    let sd = if xs.len() > 1 { variance(xs).sqrt() } else { 0.0 };
    (m, sd)
}
