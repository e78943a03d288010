//! Cached likelihood evaluation for the sampler.
//!
//! The Θ-step evaluates one analyst's likelihood many times with the common
//! parameters fixed, so everything that depends on Ψ alone is computed once
//! per Ψ value: the emission linear predictors without `η`, the
//! `ln Γ(δ+τ) − ln Γ(δ) − ln τ!` terms summed per period, and `β_s·a_t`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hmm::{forward_with, transition_row, CommonParams, ModelSpec, RandomEffects};
use crate::math::{ln_factorial, ln_rising, log_add_exp};
use crate::panel::{AnalystPanel, PanelData};

/// One analyst's observations in flat arrays.
#[derive(Debug, Clone)]
pub struct PreparedAnalyst {
    pub analyst_id: String,
    horizon: usize,
    /// Query offsets per period: queries of period `t` are
    /// `period_start[t]..period_start[t+1]`.
    period_start: Vec<usize>,
    tau: Vec<u64>,
    ln_tau_fact: Vec<f64>,
    /// Row-major `n_queries × n_covariates`.
    z: Vec<f64>,
    /// Row-major `horizon × n_activities`.
    activities: Vec<f64>,
}

impl PreparedAnalyst {
    pub fn new(analyst: &AnalystPanel) -> Result<Self> {
        let mut period_start = vec![0];
        let mut tau = Vec::new();
        let mut z = Vec::new();
        let mut activities = Vec::new();
        for p in &analyst.periods {
            for q in &p.queries {
                if q.completion_time < 0 {
                    return Err(Error::InvalidData(format!(
                        "query {} has negative completion time",
                        q.query_id
                    )));
                }
                tau.push(q.completion_time as u64);
                z.extend_from_slice(&q.covariates);
            }
            period_start.push(tau.len());
            activities.extend_from_slice(&p.activities);
        }
        Ok(PreparedAnalyst {
            analyst_id: analyst.analyst_id.clone(),
            horizon: analyst.periods.len(),
            ln_tau_fact: tau.iter().map(|&t| ln_factorial(t)).collect(),
            period_start,
            tau,
            z,
            activities,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.tau.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// A whole panel in prepared form, analysts in panel order.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub spec: ModelSpec,
    pub analysts: Vec<PreparedAnalyst>,
}

impl PreparedPanel {
    pub fn new(spec: &ModelSpec, panel: &PanelData) -> Result<Self> {
        spec.check_panel(panel)?;
        let analysts = panel
            .analysts
            .iter()
            .map(PreparedAnalyst::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedPanel {
            spec: spec.clone(),
            analysts,
        })
    }

    pub fn n_analysts(&self) -> usize {
        self.analysts.len()
    }

    pub fn n_queries(&self) -> usize {
        self.analysts.iter().map(|a| a.n_queries()).sum()
    }

    /// Ψ-dependent terms for every analyst, computed in parallel.
    pub fn terms(&self, params: &CommonParams) -> Vec<AnalystTerms> {
        self.analysts
            .par_iter()
            .map(|a| AnalystTerms::new(&self.spec, params, a))
            .collect()
    }

    /// Terms after a change to the parts of Ψ named in `parts`, reusing the
    /// rest from `old`.
    pub fn update_terms(&self, params: &CommonParams, old: &[AnalystTerms], parts: TermParts) -> Vec<AnalystTerms> {
        self.analysts
            .par_iter()
            .zip(old.par_iter())
            .map(|(a, o)| {
                let mut t = o.clone();
                t.recompute(&self.spec, params, a, parts);
                t
            })
            .collect()
    }
}

/// Which cached pieces a change of Ψ invalidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermParts {
    /// Emission coefficients changed.
    pub lin: bool,
    /// Dispersions changed.
    pub cst: bool,
    /// Activity coefficients changed.
    pub stock: bool,
}

impl TermParts {
    pub const ALL: TermParts = TermParts {
        lin: true,
        cst: true,
        stock: true,
    };

    /// Parts touched by the Ψ entries in `range`.
    pub fn for_range(spec: &ModelSpec, range: std::ops::Range<usize>) -> Self {
        Self::for_indices(spec, &range.collect::<Vec<_>>())
    }

    /// Parts touched by the Ψ entries at `indices`.
    pub fn for_indices(spec: &ModelSpec, indices: &[usize]) -> Self {
        let d0 = spec.n_thresholds();
        let b0 = d0 + spec.n_states;
        let r0 = b0 + spec.n_beta_states() * spec.n_activities;
        let hits = |lo: usize, hi: usize| indices.iter().any(|&i| lo <= i && i < hi);
        TermParts {
            cst: hits(d0, b0),
            stock: hits(b0, r0),
            lin: hits(r0, spec.n_psi()),
        }
    }
}

/// Ψ-dependent pieces of one analyst's likelihood.
#[derive(Debug, Clone)]
pub struct AnalystTerms {
    n_states: usize,
    /// `[q * n_states + s]`: `ρ_s · Z_q`.
    lin: Vec<f64>,
    /// `[t * n_states + s]`: Σ over the period's queries of
    /// `ln Γ(δ_s+τ) − ln Γ(δ_s) − ln τ!`.
    cst: Vec<f64>,
    /// `[t * n_states + s]`: `β_s · a_t`.
    stock: Vec<f64>,
}

impl AnalystTerms {
    pub fn new(spec: &ModelSpec, params: &CommonParams, a: &PreparedAnalyst) -> Self {
        let n = spec.n_states;
        let mut t = AnalystTerms {
            n_states: n,
            lin: vec![0.0; a.n_queries() * n],
            cst: vec![0.0; a.horizon * n],
            stock: vec![0.0; a.horizon * n],
        };
        t.recompute(spec, params, a, TermParts::ALL);
        t
    }

    fn recompute(&mut self, spec: &ModelSpec, params: &CommonParams, a: &PreparedAnalyst, parts: TermParts) {
        let n = spec.n_states;
        let nc = spec.n_covariates;
        let na = spec.n_activities;
        if parts.lin {
            for q in 0..a.n_queries() {
                let z = &a.z[q * nc..(q + 1) * nc];
                for s in 0..n {
                    self.lin[q * n + s] = params.rho[s].iter().zip(z).map(|(r, z)| r * z).sum();
                }
            }
        }
        if parts.cst {
            let delta: Vec<f64> = (0..n).map(|s| params.delta(s)).collect();
            self.cst.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..a.horizon {
                for q in a.period_start[t]..a.period_start[t + 1] {
                    for s in 0..n {
                        self.cst[t * n + s] += ln_rising(delta[s], a.tau[q]) - a.ln_tau_fact[q];
                    }
                }
            }
        }
        if parts.stock && spec.has_transitions() {
            for t in 0..a.horizon {
                let act = &a.activities[t * na..(t + 1) * na];
                for s in 0..n {
                    self.stock[t * n + s] = params.beta[s].iter().zip(act).map(|(b, x)| b * x).sum();
                }
            }
        }
    }
}

/// `ln L(O^i)` from cached terms. Returns `-∞` for parameter values where
/// the likelihood is not finite, which the sampler treats as a rejection.
pub fn analyst_log_likelihood(
    spec: &ModelSpec,
    params: &CommonParams,
    a: &PreparedAnalyst,
    terms: &AnalystTerms,
    re: &RandomEffects,
) -> f64 {
    let n = terms.n_states;
    let horizon = a.horizon;
    if horizon == 0 {
        return 0.0;
    }
    let mut table = terms.cst.clone();
    for s in 0..n {
        let log_delta = params.log_delta[s];
        let delta = params.delta(s);
        for t in 0..horizon {
            let mut acc = 0.0;
            for q in a.period_start[t]..a.period_start[t + 1] {
                let lm = terms.lin[q * n + s] + re.eta;
                let denom = log_add_exp(lm, log_delta);
                acc += delta * (log_delta - denom);
                if a.tau[q] > 0 {
                    acc += a.tau[q] as f64 * (lm - denom);
                }
            }
            table[t * n + s] += acc;
        }
    }
    if !table.iter().all(|v| v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    // (down, stay, up) per (t, s)
    let mut trans = vec![(0.0, 1.0, 0.0); horizon.saturating_sub(1) * n];
    if spec.has_transitions() {
        for t in 0..horizon.saturating_sub(1) {
            for s in 0..n {
                let ls = terms.stock[t * n + s] + re.zeta;
                if !ls.is_finite() {
                    return f64::NEG_INFINITY;
                }
                trans[t * n + s] = transition_row(&params.thresholds, s, ls);
            }
        }
    }
    let ll = forward_with(
        &spec.initial,
        horizon,
        |t, s| table[t * n + s],
        |t, from, to| {
            let (down, stay, up) = trans[t * n + from];
            if to == from {
                stay
            } else if to + 1 == from {
                down
            } else {
                up
            }
        },
        |_| 1.0,
    );
    match ll {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Per-analyst log-likelihoods for a panel, in panel order.
pub fn panel_log_likelihoods(
    panel: &PreparedPanel,
    params: &CommonParams,
    terms: &[AnalystTerms],
    all_re: &[RandomEffects],
) -> Vec<f64> {
    panel
        .analysts
        .par_iter()
        .zip(terms.par_iter())
        .zip(all_re.par_iter())
        .map(|((a, tm), re)| analyst_log_likelihood(&panel.spec, params, a, tm, re))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{full_log_likelihood, sequence_log_likelihood};
    use crate::simulate::simulate;
    use crate::simulate::tests::three_state_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn part_ranges() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        assert_eq!(TermParts::for_range(&spec, 0..4), TermParts::default());
        assert_eq!(TermParts::for_range(&spec, 0..19), TermParts::ALL);
        assert_eq!(
            TermParts::for_range(&spec, 13..15),
            TermParts {
                lin: true,
                ..TermParts::default()
            }
        );
    }

    #[test]
    fn cached_path_matches_reference() {
        let cfg = three_state_config(11);
        let out = simulate(&cfg).unwrap();
        let panel = &out.panel;
        let prepared = PreparedPanel::new(&cfg.spec, panel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut v = cfg.params.to_vec();
            v.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
            let params = CommonParams::from_vec(&cfg.spec, &v).unwrap();
            let terms = prepared.terms(&params);
            let res: Vec<RandomEffects> = (0..panel.n_analysts())
                .map(|_| RandomEffects {
                    zeta: rng.random_range(-1.0..1.0),
                    eta: rng.random_range(-1.0..1.0),
                })
                .collect();
            let fast = panel_log_likelihoods(&prepared, &params, &terms, &res);
            for (i, a) in panel.analysts.iter().enumerate() {
                let slow = sequence_log_likelihood(&cfg.spec, &params, &res[i], &a.periods).unwrap();
                assert!(
                    (fast[i] - slow).abs() <= 1e-9 * slow.abs().max(1.0),
                    "{} vs {}",
                    fast[i],
                    slow
                );
            }
            let base = prepared.terms(&cfg.params);
            for range in [0..4, 4..7, 7..13, 13..19, 2..9] {
                let parts = TermParts::for_range(&cfg.spec, range.clone());
                let mut w = cfg.params.to_vec();
                w[range.clone()].copy_from_slice(&v[range]);
                let p2 = CommonParams::from_vec(&cfg.spec, &w).unwrap();
                let upd = prepared.update_terms(&p2, &base, parts);
                let full = prepared.terms(&p2);
                let a = panel_log_likelihoods(&prepared, &p2, &upd, &res);
                let b = panel_log_likelihoods(&prepared, &p2, &full, &res);
                assert_eq!(a, b);
            }
            let total = full_log_likelihood(&cfg.spec, &params, &res, panel).unwrap();
            let sum: f64 = fast.iter().sum();
            assert!((total - sum).abs() <= 1e-8 * total.abs());
        }
    }
}
