//! Hierarchical Bayes estimation by adaptive Metropolis-within-Gibbs.

pub mod adapt;
pub mod diagnostics;
pub mod likelihood;
pub mod sampler;
pub mod summary;
pub mod trace_io;
pub mod wishart;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{full_log_likelihood, CommonParams, ModelSpec, RandomEffects};
use crate::panel::PanelData;

pub use adapt::{mh_step, AdaptSettings, AdaptState, MhOutcome};
pub use diagnostics::{gelman_rubin, hpd, Hpd};
pub use sampler::{run_chain, run_chains_parallel, ChainTrace};
pub use summary::{summarize, FitMeasures, ParamSummary, PosteriorSummary};
pub use wishart::gibbs_sigma_theta;

/// Number of random effects per analyst.
pub const N_THETA: usize = 2;

/// Priors: `Ψ ~ Normal(0, psi_variance·I)` and
/// `Σ_Θ ~ IW(N_Θ + 5 + N_ind, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub psi_variance: f64,
    /// Added to `N_Θ + N_ind` to form the inverse-Wishart degrees of freedom.
    pub sigma_theta_extra_dof: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            psi_variance: 30.0,
            sigma_theta_extra_dof: 5.0,
        }
    }
}

impl PriorSpec {
    pub fn sigma_theta_dof(&self, n_ind: usize) -> f64 {
        N_THETA as f64 + self.sigma_theta_extra_dof + n_ind as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi_variance > 0.0) || !self.psi_variance.is_finite() {
            return Err(Error::Config("prior psi_variance must be positive".into()));
        }
        if !(self.sigma_theta_extra_dof > -1.0) {
            return Err(Error::Config(
                "inverse-Wishart degrees of freedom must exceed N_theta + 1".into(),
            ));
        }
        Ok(())
    }

    /// `ln Normal(ψ; 0, v·I)` up to the normalizing constant.
    pub fn log_prior_psi(&self, psi: &[f64]) -> f64 {
        -0.5 * psi.iter().map(|x| x * x).sum::<f64>() / self.psi_variance
    }
}

/// How the common parameters are split into Metropolis blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsiBlocking {
    /// One joint proposal for the whole vector.
    #[default]
    Joint,
    /// Thresholds, dispersions, activity coefficients and each state's
    /// emission coefficients as separate blocks.
    Grouped,
    /// One block per state holding its cut points, dispersion, activity and
    /// emission coefficients.
    ByState,
}

/// Where chains start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Every common parameter drawn from its prior.
    Prior,
    /// Emission intercepts and dispersions jittered around moment estimates
    /// of the completion times, intercepts in descending order; the other
    /// common parameters drawn from Normal(0, 1). Falls back to `Prior`
    /// when the panel has no queries.
    #[default]
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iterations: u64,
    pub burn_in: u64,
    pub n_chains: usize,
    pub thinning: u64,
    pub target_acceptance: f64,
    pub adapt_exponent: f64,
    /// Iteration after which proposal adaptation stops; defaults to `burn_in`.
    pub freeze_at: Option<u64>,
    pub seed: u64,
    pub psi_blocking: PsiBlocking,
    /// Initial proposal standard deviation for the common parameters.
    pub psi_initial_sd: f64,
    /// Initial proposal standard deviation for each analyst's random effects.
    pub theta_initial_sd: f64,
    /// Keep every retained draw of every analyst's random effects.
    pub store_theta: bool,
    /// Worker threads for callers that build a thread pool; 0 means all
    /// cores. Results do not depend on it.
    pub workers: usize,
    pub init: InitStrategy,
    /// After the Σ_Θ draw, Gibbs-sample the two translations that leave the
    /// likelihood unchanged: all emission intercepts against every `eta_i`,
    /// and all cut points together with every `zeta_i`.
    pub shift_moves: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iterations: 100_000,
            burn_in: 85_000,
            n_chains: 2,
            thinning: 1,
            target_acceptance: 0.234,
            adapt_exponent: 0.6,
            freeze_at: None,
            seed: 1,
            psi_blocking: PsiBlocking::Joint,
            psi_initial_sd: 0.1,
            theta_initial_sd: 0.3,
            store_theta: false,
            workers: 0,
            init: InitStrategy::Data,
            shift_moves: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        if !(self.adapt_exponent > 0.5 && self.adapt_exponent <= 1.0) {
            return Err(Error::Config("adapt_exponent must lie in (0.5, 1]".into()));
        }
        if !(self.psi_initial_sd > 0.0 && self.theta_initial_sd > 0.0) {
            return Err(Error::Config("initial proposal sds must be positive".into()));
        }
        Ok(())
    }

    pub fn freeze_iteration(&self) -> u64 {
        self.freeze_at.unwrap_or(self.burn_in)
    }

    /// Number of draws each chain retains.
    pub fn n_retained(&self) -> usize {
        ((self.n_iterations - self.burn_in) / self.thinning) as usize
    }

    pub fn adapt_settings(&self) -> AdaptSettings {
        AdaptSettings {
            target_acceptance: self.target_acceptance,
            exponent: self.adapt_exponent,
            ..AdaptSettings::default()
        }
    }
}

/// `ln p(Ψ | Θ, Σ_Θ, data)` up to terms constant in Ψ: the full
/// log-likelihood plus the Gaussian prior on the flattened Ψ.
pub fn log_posterior_common(
    spec: &ModelSpec,
    psi: &CommonParams,
    all_re: &[RandomEffects],
    panel: &PanelData,
    prior: &PriorSpec,
) -> Result<f64> {
    let ll = full_log_likelihood(spec, psi, all_re, panel)?;
    let lp = ll + prior.log_prior_psi(&psi.to_vec());
    if !lp.is_finite() {
        return Err(Error::Numerical("non-finite log posterior".into()));
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;
    use crate::simulate::tests::three_state_config;

    #[test]
    fn zero_psi_adds_no_prior_mass() {
        let cfg = three_state_config(1);
        let out = simulate(&cfg).unwrap();
        let zero = CommonParams::zeros(&cfg.spec);
        let lp = log_posterior_common(&cfg.spec, &zero, &out.true_re, &out.panel, &PriorSpec::default()).unwrap();
        let ll = full_log_likelihood(&cfg.spec, &zero, &out.true_re, &out.panel).unwrap();
        assert_eq!(lp, ll);
    }

    #[test]
    fn doubling_an_entry_changes_prior_by_gaussian_amount() {
        let cfg = three_state_config(1);
        let out = simulate(&cfg).unwrap();
        let prior = PriorSpec::default();
        let base = cfg.params.clone();
        let mut v = base.to_vec();
        let i = CommonParams::intercept_index(&cfg.spec, 0);
        let x = v[i];
        v[i] = 2.0 * x;
        let doubled = CommonParams::from_vec(&cfg.spec, &v).unwrap();
        let lp0 = log_posterior_common(&cfg.spec, &base, &out.true_re, &out.panel, &prior).unwrap();
        let lp1 = log_posterior_common(&cfg.spec, &doubled, &out.true_re, &out.panel, &prior).unwrap();
        let ll0 = full_log_likelihood(&cfg.spec, &base, &out.true_re, &out.panel).unwrap();
        let ll1 = full_log_likelihood(&cfg.spec, &doubled, &out.true_re, &out.panel).unwrap();
        let expected = -0.5 * (4.0 * x * x - x * x) / 30.0;
        assert!(((lp1 - ll1) - (lp0 - ll0) - expected).abs() < 1e-9);
    }

    #[test]
    fn flat_prior_limit_recovers_likelihood_differences() {
        let cfg = three_state_config(2);
        let out = simulate(&cfg).unwrap();
        let prior = PriorSpec {
            psi_variance: 1e6,
            ..PriorSpec::default()
        };
        let a = cfg.params.clone();
        let mut v = a.to_vec();
        v.iter_mut().for_each(|x| *x *= 1.1);
        let b = CommonParams::from_vec(&cfg.spec, &v).unwrap();
        let dpost = log_posterior_common(&cfg.spec, &b, &out.true_re, &out.panel, &prior).unwrap()
            - log_posterior_common(&cfg.spec, &a, &out.true_re, &out.panel, &prior).unwrap();
        let dll = full_log_likelihood(&cfg.spec, &b, &out.true_re, &out.panel).unwrap()
            - full_log_likelihood(&cfg.spec, &a, &out.true_re, &out.panel).unwrap();
        assert!((dpost - dll).abs() < 1e-6 * dll.abs().max(1.0));
    }

    #[test]
    fn config_rejects_burn_in_past_end() {
        let cfg = McmcConfig {
            n_iterations: 10,
            burn_in: 10,
            ..McmcConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(McmcConfig::default().n_retained(), 15_000);
    }
}
