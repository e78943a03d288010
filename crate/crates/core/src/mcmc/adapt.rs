//! Random-walk Metropolis updates with adaptive proposal scale and shape.
//!
//! Each parameter block proposes from `Normal(current, λ Σ̃)`. While
//! adaptation is on, `ln λ` follows a Robbins-Monro recursion toward the
//! target acceptance rate and `Σ̃` tracks a running covariance of the block's
//! draws with the same decaying step size. Both are frozen at the end of
//! burn-in.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Diagonal jitter added to `Σ̃` before factorization.
pub const SHAPE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptSettings {
    pub target_acceptance: f64,
    /// Decay exponent `κ` of the step size `γ_n = n^{-κ}`.
    pub exponent: f64,
    /// Pseudo-count that damps the first covariance updates:
    /// the shape uses `γ_n = (n + offset)^{-κ}`.
    pub shape_offset: f64,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings {
            target_acceptance: 0.234,
            exponent: 0.6,
            shape_offset: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    log_scale: f64,
    shape: DMatrix<f64>,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    n_updates: u64,
    frozen: bool,
    settings: AdaptSettings,
    pub accepted: u64,
    pub proposed: u64,
}

impl AdaptState {
    /// Starts from `Σ̃ = initial_sd² I` and `λ = 2.38² / d`, centered at
    /// `initial`.
    pub fn new(initial: &[f64], initial_sd: f64, settings: AdaptSettings) -> Self {
        let d = initial.len().max(1);
        let shape = DMatrix::identity(d, d) * (initial_sd * initial_sd);
        let mut state = AdaptState {
            log_scale: (2.38f64.powi(2) / d as f64).ln(),
            chol: DMatrix::zeros(d, d),
            shape,
            mean: DVector::from_column_slice(initial),
            n_updates: 0,
            frozen: false,
            settings,
            accepted: 0,
            proposed: 0,
        };
        state.refactor();
        state
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    fn refactor(&mut self) {
        let d = self.dim();
        let cov = (&self.shape + DMatrix::identity(d, d) * SHAPE_JITTER) * self.scale();
        if let Some(c) = cov.cholesky() {
            self.chol = c.l();
        }
    }

    /// Writes a draw from `Normal(current, λ Σ̃)` into `out`.
    pub fn propose<R: Rng + ?Sized>(&self, current: &[f64], rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut step = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                step += self.chol[(i, j)] * zj;
            }
            out[i] = current[i] + step;
        }
    }

    /// One adaptation step after a Metropolis decision.
    pub fn update(&mut self, x: &[f64], accept_prob: f64) {
        if self.frozen {
            return;
        }
        self.n_updates += 1;
        let n = self.n_updates as f64;
        let s = &self.settings;
        let gamma = n.powf(-s.exponent);
        self.log_scale += gamma * (accept_prob - s.target_acceptance);

        let gamma_shape = (n + s.shape_offset).powf(-s.exponent);
        let x = DVector::from_column_slice(x);
        let dev = &x - &self.mean;
        self.shape = &self.shape * (1.0 - gamma_shape) + (&dev * dev.transpose()) * gamma_shape;
        self.mean += dev * gamma_shape;
        self.refactor();
    }
}

/// Result of one Metropolis step.
#[derive(Debug, Clone, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub value: Vec<f64>,
    pub log_post: f64,
    pub accept_prob: f64,
}

/// Acceptance probability `min{1, exp(Δ)}`; NaN counts as an invalid
/// candidate.
#[inline]
pub fn acceptance_probability(delta_log_post: f64) -> f64 {
    if delta_log_post.is_nan() {
        0.0
    } else if delta_log_post >= 0.0 {
        1.0
    } else {
        delta_log_post.exp()
    }
}

/// Accepts with probability `accept_prob` using one uniform draw.
#[inline]
pub fn accept<R: Rng + ?Sized>(accept_prob: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < accept_prob
}

/// Random-walk Metropolis step for one block.
///
/// `log_post` evaluates the block's unnormalized log posterior at a
/// candidate; non-finite values are rejected. Tallies and (unless frozen)
/// adapts `adapt`.
pub fn mh_step<R: Rng + ?Sized>(
    current: &[f64],
    current_log_post: f64,
    mut log_post: impl FnMut(&[f64]) -> f64,
    adapt: &mut AdaptState,
    rng: &mut R,
) -> MhOutcome {
    let mut candidate = vec![0.0; current.len()];
    adapt.propose(current, rng, &mut candidate);
    let cand_lp = log_post(&candidate);
    let cand_lp = if cand_lp.is_nan() { f64::NEG_INFINITY } else { cand_lp };
    let accept_prob = acceptance_probability(cand_lp - current_log_post);
    let accepted = accept(accept_prob, rng);
    adapt.proposed += 1;
    if accepted {
        adapt.accepted += 1;
    }
    let outcome = if accepted {
        MhOutcome {
            accepted,
            value: candidate,
            log_post: cand_lp,
            accept_prob,
        }
    } else {
        MhOutcome {
            accepted,
            value: current.to_vec(),
            log_post: current_log_post,
            accept_prob,
        }
    };
    adapt.update(&outcome.value, accept_prob);
    outcome
}
