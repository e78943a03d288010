//! Posterior summaries: relabeling, moments, HPD intervals, R̂ and fit
//! measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::diagnostics::{gelman_rubin, hpd, mean_std};
use super::sampler::{AcceptanceRates, ChainTrace};
use crate::baseline::information_criteria;
use crate::error::{Error, Result};
use crate::hmm::{full_log_likelihood, CommonParams, ModelSpec, RandomEffects};
use crate::panel::PanelData;

pub const HPD_MASS: f64 = 0.95;
pub const SIGMA_THETA_NAMES: [&str; 3] = ["sigma_theta[1,1]", "sigma_theta[1,2]", "sigma_theta[2,2]"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub hpd_lo: Option<f64>,
    pub hpd_hi: Option<f64>,
    /// The HPD window has zero width.
    pub degenerate: bool,
    /// The 95% HPD interval excludes zero.
    pub significant: bool,
    pub rhat: Option<f64>,
}

impl ParamSummary {
    /// Summary of one scalar from per-chain series; draws are pooled.
    pub fn from_chains(name: impl Into<String>, chains: &[Vec<f64>]) -> Self {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&pooled);
        let h = hpd(&pooled, HPD_MASS);
        ParamSummary {
            name: name.into(),
            mean,
            std,
            hpd_lo: h.map(|h| h.lo),
            hpd_hi: h.map(|h| h.hi),
            degenerate: h.is_some_and(|h| h.degenerate),
            significant: h.is_some_and(|h| h.excludes_zero()),
            rhat: gelman_rubin(chains),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        matches!((self.hpd_lo, self.hpd_hi), (Some(lo), Some(hi)) if lo <= value && value <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeasures {
    pub neg2_loglik: f64,
    pub k: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    /// Where the likelihood was evaluated.
    pub evaluated_at: String,
    pub k_rule: String,
}

/// How a chain's state labels were mapped onto the reported order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelKind {
    Identity,
    /// Full reversal, an exact symmetry of the model: thresholds, activity
    /// coefficients and the transition random effect change sign.
    Reversal,
    /// Any other permutation; only emission coefficients and dispersions are
    /// permuted because the ordered transition structure has no matching
    /// symmetry.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relabeling {
    /// `permutation[new] = old`, zero-based.
    pub permutation: Vec<usize>,
    pub kind: RelabelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub spec: ModelSpec,
    pub n_chains: usize,
    pub draws_per_chain: Vec<usize>,
    /// Ψ entries in storage order, then the unique Σ_Θ entries.
    pub parameters: Vec<ParamSummary>,
    /// Up-thresholds of interior states on the raw scale.
    pub derived: Vec<ParamSummary>,
    pub fit: Option<FitMeasures>,
    pub acceptance: Vec<AcceptanceRates>,
    pub relabeling: Vec<Relabeling>,
    pub psi_mean: Vec<f64>,
    pub theta_mean: BTreeMap<String, RandomEffects>,
}

impl PosteriorSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().chain(&self.derived).find(|p| p.name == name)
    }

    pub fn psi_params(&self) -> &[ParamSummary] {
        &self.parameters[..self.spec.n_psi()]
    }

    pub fn posterior_mean_params(&self) -> Result<CommonParams> {
        CommonParams::from_vec(&self.spec, &self.psi_mean)
    }

    /// Posterior-mean random effects in the panel's analyst order; analysts
    /// missing from the summary get zero effects.
    pub fn theta_for(&self, panel: &PanelData) -> Vec<RandomEffects> {
        panel
            .analysts
            .iter()
            .map(|a| self.theta_mean.get(&a.analyst_id).copied().unwrap_or_default())
            .collect()
    }
}

/// `permutation[new] = old` sorting states by descending intercept.
pub fn intercept_order(intercepts: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..intercepts.len()).collect();
    idx.sort_by(|&a, &b| intercepts[b].total_cmp(&intercepts[a]).then(a.cmp(&b)));
    idx
}

fn classify(spec: &ModelSpec, perm: &[usize]) -> RelabelKind {
    let n = perm.len();
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return RelabelKind::Identity;
    }
    let reversal = perm.iter().enumerate().all(|(i, &p)| p == n - 1 - i);
    let symmetric_initial = (0..n).all(|s| spec.initial[s] == spec.initial[n - 1 - s]);
    if reversal && symmetric_initial {
        RelabelKind::Reversal
    } else {
        RelabelKind::Partial
    }
}

/// Applies a relabeling to one flattened Ψ draw.
pub fn relabel_psi(spec: &ModelSpec, psi: &[f64], relabel: &Relabeling) -> Vec<f64> {
    let n = spec.n_states;
    let perm = &relabel.permutation;
    let mut out = psi.to_vec();
    if relabel.kind == RelabelKind::Identity {
        return out;
    }
    let nt = spec.n_thresholds();
    let beta_at = nt + n;
    let rho_at = beta_at + spec.n_beta_states() * spec.n_activities;
    for (new, &old) in perm.iter().enumerate() {
        out[nt + new] = psi[nt + old];
        let nc = spec.n_covariates;
        out[rho_at + new * nc..rho_at + (new + 1) * nc]
            .copy_from_slice(&psi[rho_at + old * nc..rho_at + (old + 1) * nc]);
    }
    if relabel.kind == RelabelKind::Reversal {
        let raw = &psi[..nt];
        let offset = |s: usize| if s == 0 { 0 } else { 2 * s - 1 };
        for new in 0..n {
            let old = n - 1 - new;
            let o_new = offset(new);
            if new == 0 {
                // new up = −(old last state's down)
                out[0] = -raw[offset(old)];
            } else if new == n - 1 {
                // new down = −(old first state's up)
                out[o_new] = -raw[0];
            } else {
                let (d, g) = (raw[offset(old)], raw[offset(old) + 1]);
                out[o_new] = -(d + g.exp());
                out[o_new + 1] = g;
            }
        }
        let na = spec.n_activities;
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..na {
                out[beta_at + new * na + k] = -psi[beta_at + old * na + k];
            }
        }
    }
    out
}

/// Relabeling of one chain from its mean emission intercepts.
pub fn chain_relabeling(spec: &ModelSpec, trace: &ChainTrace) -> Relabeling {
    let n = spec.n_states;
    let intercepts: Vec<f64> = (0..n)
        .map(|s| {
            let j = CommonParams::intercept_index(spec, s);
            mean_std(&trace.column(j)).0
        })
        .collect();
    let permutation = intercept_order(&intercepts);
    let kind = classify(spec, &permutation);
    Relabeling { permutation, kind }
}

struct RelabeledChain {
    psi: Vec<Vec<f64>>,
    sigma: Vec<[f64; 3]>,
    theta_mean: Vec<RandomEffects>,
}

fn relabel_chain(spec: &ModelSpec, trace: &ChainTrace, r: &Relabeling) -> RelabeledChain {
    let flip = r.kind == RelabelKind::Reversal;
    RelabeledChain {
        psi: trace.psi.iter().map(|d| relabel_psi(spec, d, r)).collect(),
        sigma: trace
            .sigma_theta
            .iter()
            .map(|s| if flip { [s[0], -s[1], s[2]] } else { *s })
            .collect(),
        theta_mean: trace
            .theta_mean
            .iter()
            .map(|t| RandomEffects {
                zeta: if flip { -t.zeta } else { t.zeta },
                eta: t.eta,
            })
            .collect(),
    }
}

/// `k = |Ψ| + N_Θ·N_ind + N_Θ(N_Θ+1)/2`.
pub fn parameter_count(spec: &ModelSpec, n_ind: usize) -> usize {
    spec.n_psi() + 2 * n_ind + 3
}

/// Pools relabeled chains into a posterior summary. With a panel, the fit
/// block holds −2 ln L at the posterior mean of Ψ and of each `Θ_i`.
pub fn summarize(traces: &[ChainTrace], spec: &ModelSpec, panel: Option<&PanelData>) -> Result<PosteriorSummary> {
    if traces.is_empty() || traces.iter().all(|t| t.is_empty()) {
        return Err(Error::InsufficientSample("no retained draws to summarize".into()));
    }
    let names = &traces[0].psi_names;
    if names.len() != spec.n_psi() || traces.iter().any(|t| &t.psi_names != names) {
        return Err(Error::Shape("trace columns do not match the model".into()));
    }
    let relabeling: Vec<Relabeling> = traces.iter().map(|t| chain_relabeling(spec, t)).collect();
    let chains: Vec<RelabeledChain> = traces
        .iter()
        .zip(&relabeling)
        .map(|(t, r)| relabel_chain(spec, t, r))
        .collect();

    let mut parameters = Vec::with_capacity(names.len() + 3);
    for (j, name) in names.iter().enumerate() {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.psi.iter().map(|d| d[j]).collect()).collect();
        parameters.push(ParamSummary::from_chains(name.clone(), &cols));
    }
    for (j, name) in SIGMA_THETA_NAMES.iter().enumerate() {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.sigma.iter().map(|s| s[j]).collect()).collect();
        parameters.push(ParamSummary::from_chains(*name, &cols));
    }

    let mut derived = Vec::new();
    for s in 1..spec.n_states.saturating_sub(1) {
        let o = 2 * s - 1;
        let cols: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.psi.iter().map(|d| d[o] + d[o + 1].exp()).collect())
            .collect();
        derived.push(ParamSummary::from_chains(format!("mu({},{})", s + 2, s + 1), &cols));
    }

    let psi_mean: Vec<f64> = parameters[..spec.n_psi()].iter().map(|p| p.mean).collect();
    let mut theta_mean = BTreeMap::new();
    let n_with = chains.iter().filter(|c| !c.psi.is_empty()).count().max(1) as f64;
    for (i, id) in traces[0].analyst_ids.iter().enumerate() {
        let mut acc = RandomEffects::default();
        for (c, t) in chains.iter().zip(traces) {
            if t.analyst_ids.get(i) != Some(id) {
                return Err(Error::Shape("chains were run on different panels".into()));
            }
            if !t.is_empty() {
                acc.zeta += c.theta_mean[i].zeta;
                acc.eta += c.theta_mean[i].eta;
            }
        }
        theta_mean.insert(
            id.clone(),
            RandomEffects {
                zeta: acc.zeta / n_with,
                eta: acc.eta / n_with,
            },
        );
    }

    let mut summary = PosteriorSummary {
        spec: spec.clone(),
        n_chains: traces.len(),
        draws_per_chain: traces.iter().map(ChainTrace::len).collect(),
        parameters,
        derived,
        fit: None,
        acceptance: traces.iter().map(|t| t.acceptance.clone()).collect(),
        relabeling,
        psi_mean,
        theta_mean,
    };
    if let Some(panel) = panel {
        let params = summary.posterior_mean_params()?;
        let re = summary.theta_for(panel);
        let ll = full_log_likelihood(spec, &params, &re, panel)?;
        let neg2 = -2.0 * ll;
        let k = parameter_count(spec, panel.n_analysts());
        let n = panel.n_queries();
        let (aic, bic) = information_criteria(neg2, k, n)?;
        summary.fit = Some(FitMeasures {
            neg2_loglik: neg2,
            k,
            n,
            aic,
            bic,
            evaluated_at: "posterior mean of common parameters and of each analyst's random effects".into(),
            k_rule: "k = |Psi| + 2*N_ind + 3 (common parameters, random effects, unique covariance entries)".into(),
        });
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_transition_matrix, ThresholdSet};

    fn three_state_params() -> (ModelSpec, CommonParams) {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let mut p = CommonParams::zeros(&spec);
        p.thresholds =
            ThresholdSet::from_cutpoints(&[(None, Some(0.7)), (Some(-1.3), Some(2.1)), (Some(-0.4), None)]).unwrap();
        p.beta = vec![vec![0.8, -0.5], vec![0.6, 0.3], vec![0.4, -0.2]];
        p.rho = vec![vec![1.0, 0.3], vec![2.0, 0.2], vec![3.0, 0.1]];
        p.log_delta = vec![0.5, 1.0, 1.5];
        (spec, p)
    }

    #[test]
    fn reversal_is_an_exact_symmetry() {
        let (spec, p) = three_state_params();
        let r = Relabeling {
            permutation: intercept_order(&[1.0, 2.0, 3.0]),
            kind: RelabelKind::Reversal,
        };
        assert_eq!(r.permutation, vec![2, 1, 0]);
        assert_eq!(classify(&spec, &r.permutation), RelabelKind::Reversal);
        let q = CommonParams::from_vec(&spec, &relabel_psi(&spec, &p.to_vec(), &r)).unwrap();
        assert_eq!(q.rho[0], p.rho[2]);
        for zeta in [-0.7, 0.0, 1.1] {
            let act = [1.0, 2.0];
            let a = build_transition_matrix(&p, zeta, &act).unwrap();
            let b = build_transition_matrix(&q, -zeta, &act).unwrap();
            for from in 0..3 {
                for to in 0..3 {
                    assert!((a.get(from, to) - b.get(2 - from, 2 - to)).abs() < 1e-12);
                }
            }
        }
        // applying it twice returns the original draw
        let twice = relabel_psi(&spec, &q.to_vec(), &r);
        for (x, y) in twice.iter().zip(p.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_swap_is_a_reversal() {
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        assert_eq!(classify(&spec, &[1, 0]), RelabelKind::Reversal);
        assert_eq!(classify(&spec, &[0, 1]), RelabelKind::Identity);
        let three = ModelSpec::new(3, 1, 1).unwrap();
        assert_eq!(classify(&three, &[1, 0, 2]), RelabelKind::Partial);
    }

    #[test]
    fn partial_relabel_moves_only_emissions() {
        let (spec, p) = three_state_params();
        let r = Relabeling {
            permutation: vec![1, 0, 2],
            kind: RelabelKind::Partial,
        };
        let q = CommonParams::from_vec(&spec, &relabel_psi(&spec, &p.to_vec(), &r)).unwrap();
        assert_eq!(q.thresholds, p.thresholds);
        assert_eq!(q.beta, p.beta);
        assert_eq!(q.rho, vec![p.rho[1].clone(), p.rho[0].clone(), p.rho[2].clone()]);
        assert_eq!(q.log_delta, vec![1.0, 0.5, 1.5]);
    }

    #[test]
    fn flag_iff_interval_excludes_zero() {
        let pos: Vec<f64> = (0..100).map(|i| 1.0 + i as f64 * 0.01).collect();
        let straddle: Vec<f64> = (0..100).map(|i| -0.5 + i as f64 * 0.01).collect();
        assert!(ParamSummary::from_chains("a", &[pos]).significant);
        assert!(!ParamSummary::from_chains("b", &[straddle]).significant);
        let constant = ParamSummary::from_chains("c", &[vec![0.0; 50]]);
        assert!(constant.degenerate && !constant.significant);
        assert_eq!(constant.rhat, None);
    }
}
