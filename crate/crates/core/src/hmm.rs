//! Model mathematics: ordered-logit transitions, negative-binomial emissions
//! and the sequence likelihood.
//!
//! States are indexed from zero in code (`0..n_states`) and from one in
//! parameter names and reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_factorial, ln_rising, log_add_exp, log_sum_exp, logistic};
use crate::panel::{PanelData, PeriodObservation, QueryObservation};

/// Dimensions of the model plus the fixed initial state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_states: usize,
    pub n_activities: usize,
    pub n_covariates: usize,
    pub initial: Vec<f64>,
}

impl ModelSpec {
    /// Model with a uniform initial distribution.
    pub fn new(n_states: usize, n_activities: usize, n_covariates: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Config("n_states must be at least 1".into()));
        }
        if n_covariates == 0 {
            return Err(Error::Config("at least the constant covariate is required".into()));
        }
        Ok(ModelSpec {
            n_states,
            n_activities,
            n_covariates,
            initial: vec![1.0 / n_states as f64; n_states],
        })
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.n_states {
            return Err(Error::Shape(format!(
                "initial distribution has {} entries for {} states",
                initial.len(),
                self.n_states
            )));
        }
        if initial.iter().any(|&p| !(p >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(
                "initial distribution must be non-negative and sum to 1".into(),
            ));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn for_panel(n_states: usize, panel: &PanelData) -> Result<Self> {
        ModelSpec::new(n_states, panel.n_activities(), panel.n_covariates())
    }

    pub fn has_transitions(&self) -> bool {
        self.n_states > 1
    }

    pub fn n_thresholds(&self) -> usize {
        2 * (self.n_states - 1)
    }

    /// Number of states that carry learning-activity coefficients.
    pub fn n_beta_states(&self) -> usize {
        if self.has_transitions() {
            self.n_states
        } else {
            0
        }
    }

    /// Length of the flattened common-parameter vector.
    pub fn n_psi(&self) -> usize {
        self.n_thresholds()
            + self.n_states
            + self.n_beta_states() * self.n_activities
            + self.n_states * self.n_covariates
    }

    pub fn check_panel(&self, panel: &PanelData) -> Result<()> {
        if panel.n_activities() != self.n_activities || panel.n_covariates() != self.n_covariates {
            return Err(Error::Shape(format!(
                "model expects {} activities / {} covariates, panel has {} / {}",
                self.n_activities,
                self.n_covariates,
                panel.n_activities(),
                panel.n_covariates()
            )));
        }
        Ok(())
    }
}

/// Ordered-logit cut points, stored on the unconstrained scale.
///
/// Layout, per state in order: the lowest state stores its up-threshold
/// `mu(2,1)`; an interior state `s` stores its down-threshold `mu(s-1,s)`
/// followed by `ln(mu(s+1,s) - mu(s-1,s))`; the highest state stores its
/// down-threshold. The boundary cut points at ±infinity are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    n_states: usize,
    raw: Vec<f64>,
}

impl ThresholdSet {
    pub fn from_raw(n_states: usize, raw: Vec<f64>) -> Result<Self> {
        let want = 2 * n_states.saturating_sub(1);
        if raw.len() != want {
            return Err(Error::Shape(format!(
                "{n_states} states need {want} threshold values, got {}",
                raw.len()
            )));
        }
        Ok(ThresholdSet { n_states, raw })
    }

    /// Builds from `(down, up)` cut points per state (`None` at the ends).
    pub fn from_cutpoints(cuts: &[(Option<f64>, Option<f64>)]) -> Result<Self> {
        let n = cuts.len();
        let mut raw = Vec::new();
        for (s, &(down, up)) in cuts.iter().enumerate() {
            let first = s == 0;
            let last = s + 1 == n;
            match (first, last, down, up) {
                (true, true, None, None) => {}
                (true, false, None, Some(u)) => raw.push(u),
                (false, true, Some(d), None) => raw.push(d),
                (false, false, Some(d), Some(u)) => {
                    if !(u > d) {
                        return Err(Error::Config(format!(
                            "state {}: up-threshold {u} must exceed down-threshold {d}",
                            s + 1
                        )));
                    }
                    raw.push(d);
                    raw.push((u - d).ln());
                }
                _ => {
                    return Err(Error::Config(format!(
                        "state {} has the wrong set of cut points",
                        s + 1
                    )))
                }
            }
        }
        ThresholdSet::from_raw(n, raw)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    fn offset(s: usize) -> usize {
        if s == 0 {
            0
        } else {
            2 * s - 1
        }
    }

    /// Cut point above which a state-`s` analyst moves up.
    pub fn up(&self, s: usize) -> Option<f64> {
        if s + 1 >= self.n_states {
            None
        } else if s == 0 {
            Some(self.raw[0])
        } else {
            let o = Self::offset(s);
            Some(self.raw[o] + self.raw[o + 1].exp())
        }
    }

    /// Cut point below which a state-`s` analyst moves down.
    pub fn down(&self, s: usize) -> Option<f64> {
        if s == 0 {
            None
        } else {
            Some(self.raw[Self::offset(s)])
        }
    }

    /// Parameter names in storage order (one-based state labels).
    pub fn names(n_states: usize) -> Vec<String> {
        let mut out = Vec::new();
        for s in 1..=n_states {
            if n_states == 1 {
                break;
            }
            if s == 1 {
                out.push("mu(2,1)".to_string());
            } else if s == n_states {
                out.push(format!("mu({},{})", s - 1, s));
            } else {
                out.push(format!("mu({},{})", s - 1, s));
                out.push(format!("log(mu({},{})-mu({},{}))", s + 1, s, s - 1, s));
            }
        }
        out
    }
}

/// Parameters shared by all analysts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonParams {
    pub thresholds: ThresholdSet,
    /// Learning-activity coefficients per state (empty for a one-state model).
    pub beta: Vec<Vec<f64>>,
    /// Emission coefficients per state; entry 0 multiplies the constant.
    pub rho: Vec<Vec<f64>>,
    /// Log dispersion per state.
    pub log_delta: Vec<f64>,
}

impl CommonParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        CommonParams {
            thresholds: ThresholdSet::from_raw(spec.n_states, vec![0.0; spec.n_thresholds()]).expect("sized"),
            beta: vec![vec![0.0; spec.n_activities]; spec.n_beta_states()],
            rho: vec![vec![0.0; spec.n_covariates]; spec.n_states],
            log_delta: vec![0.0; spec.n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.rho.len()
    }

    pub fn delta(&self, s: usize) -> f64 {
        self.log_delta[s].exp()
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let ok = self.thresholds.n_states == spec.n_states
            && self.thresholds.raw.len() == spec.n_thresholds()
            && self.beta.len() == spec.n_beta_states()
            && self.beta.iter().all(|b| b.len() == spec.n_activities)
            && self.rho.len() == spec.n_states
            && self.rho.iter().all(|r| r.len() == spec.n_covariates)
            && self.log_delta.len() == spec.n_states;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("common parameters do not match the model spec".into()))
        }
    }

    /// Flattens to the sampler's parameter vector: thresholds, log
    /// dispersions, activity coefficients, emission coefficients.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.thresholds.raw.clone();
        v.extend_from_slice(&self.log_delta);
        for b in &self.beta {
            v.extend_from_slice(b);
        }
        for r in &self.rho {
            v.extend_from_slice(r);
        }
        v
    }

    pub fn from_vec(spec: &ModelSpec, v: &[f64]) -> Result<Self> {
        if v.len() != spec.n_psi() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model needs {}",
                v.len(),
                spec.n_psi()
            )));
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let thresholds = ThresholdSet::from_raw(spec.n_states, take(spec.n_thresholds()))?;
        let log_delta = take(spec.n_states);
        let beta = (0..spec.n_beta_states()).map(|_| take(spec.n_activities)).collect();
        let rho = (0..spec.n_states).map(|_| take(spec.n_covariates)).collect();
        Ok(CommonParams {
            thresholds,
            beta,
            rho,
            log_delta,
        })
    }

    /// Names matching [`CommonParams::to_vec`].
    pub fn names(spec: &ModelSpec, covariates: &[String], activities: &[String]) -> Vec<String> {
        let mut out = ThresholdSet::names(spec.n_states);
        out.extend((1..=spec.n_states).map(|s| format!("log_delta_{s}")));
        for s in 1..=spec.n_beta_states() {
            out.extend(activities.iter().map(|a| format!("beta_{s}[{a}]")));
        }
        for s in 1..=spec.n_states {
            out.extend(covariates.iter().map(|c| format!("rho_{s}[{c}]")));
        }
        out
    }

    /// Index of `rho_s[constant]` in the flattened vector.
    pub fn intercept_index(spec: &ModelSpec, s: usize) -> usize {
        spec.n_thresholds() + spec.n_states + spec.n_beta_states() * spec.n_activities + s * spec.n_covariates
    }
}

/// Per-analyst random effects: `zeta` shifts the learning stock, `eta` the
/// emission mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub zeta: f64,
    pub eta: f64,
}

/// Row-stochastic, tridiagonal transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    q: Vec<f64>,
}

impl TransitionMatrix {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.q[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.q[from * self.n..(from + 1) * self.n]
    }
}

/// Transition probabilities out of `state` for a learning stock `ls`,
/// as `(down, stay, up)`.
#[inline]
pub(crate) fn transition_row(thresholds: &ThresholdSet, state: usize, ls: f64) -> (f64, f64, f64) {
    let down_cut = thresholds.down(state);
    let up_cut = thresholds.up(state);
    let down = down_cut.map_or(0.0, |d| logistic(d - ls));
    let up = up_cut.map_or(0.0, |u| logistic(ls - u));
    let stay = match (down_cut, up_cut) {
        (None, None) => 1.0,
        (None, Some(u)) => logistic(u - ls),
        (Some(d), None) => logistic(ls - d),
        (Some(d), Some(u)) => (logistic(u - ls) - logistic(d - ls)).max(0.0),
    };
    (down, stay, up)
}

/// Learning stock of a state-`s` analyst: `beta_s · activities + zeta`.
#[inline]
pub(crate) fn learning_stock(params: &CommonParams, s: usize, zeta: f64, activities: &[f64]) -> f64 {
    params.beta[s].iter().zip(activities).map(|(b, a)| b * a).sum::<f64>() + zeta
}

pub fn build_transition_matrix(params: &CommonParams, zeta: f64, activities: &[f64]) -> Result<TransitionMatrix> {
    let n = params.n_states();
    let mut q = vec![0.0; n * n];
    if n == 1 {
        q[0] = 1.0;
        return Ok(TransitionMatrix { n, q });
    }
    for s in 0..n {
        if params.beta[s].len() != activities.len() {
            return Err(Error::Shape(format!(
                "expected {} activities, got {}",
                params.beta[s].len(),
                activities.len()
            )));
        }
        let ls = learning_stock(params, s, zeta, activities);
        if !ls.is_finite() {
            return Err(Error::NonFiniteLearningStock { state: s + 1 });
        }
        let (down, stay, up) = transition_row(&params.thresholds, s, ls);
        if s > 0 {
            q[s * n + s - 1] = down;
        }
        q[s * n + s] = stay;
        if s + 1 < n {
            q[s * n + s + 1] = up;
        }
    }
    Ok(TransitionMatrix { n, q })
}

/// `ln P(τ | state)` under the state's negative binomial with mean
/// `exp(rho_s · Z + eta)` and dispersion `delta_s`.
pub fn emission_log_pmf(params: &CommonParams, state: usize, eta: f64, query: &QueryObservation) -> Result<f64> {
    let rho = params
        .rho
        .get(state)
        .ok_or_else(|| Error::Shape(format!("state {} out of range", state + 1)))?;
    if rho.len() != query.covariates.len() {
        return Err(Error::Shape(format!(
            "query {} has {} covariates, model expects {}",
            query.query_id,
            query.covariates.len(),
            rho.len()
        )));
    }
    if query.completion_time < 0 {
        return Err(Error::InvalidData(format!(
            "query {} has negative completion time",
            query.query_id
        )));
    }
    let lin = rho.iter().zip(&query.covariates).map(|(r, z)| r * z).sum::<f64>() + eta;
    if !lin.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite linear predictor for query {}",
            query.query_id
        )));
    }
    let tau = query.completion_time as u64;
    Ok(nb_log_pmf(tau, params.log_delta[state], lin))
}

/// Negative-binomial log pmf in the (log dispersion, log mean) parameterization.
#[inline]
pub fn nb_log_pmf(tau: u64, log_delta: f64, log_mean: f64) -> f64 {
    let delta = log_delta.exp();
    nb_log_pmf_core(tau, delta, log_delta, log_mean, ln_factorial(tau))
}

#[inline]
pub(crate) fn nb_log_pmf_core(tau: u64, delta: f64, log_delta: f64, log_mean: f64, ln_tau_fact: f64) -> f64 {
    // h = delta / (exp(log_mean) + delta)
    let denom = log_add_exp(log_mean, log_delta);
    let log_h = log_delta - denom;
    let log_1mh = log_mean - denom;
    let tail = if tau == 0 { 0.0 } else { tau as f64 * log_1mh };
    ln_rising(delta, tau) - ln_tau_fact + delta * log_h + tail
}

pub fn period_log_prob(params: &CommonParams, state: usize, eta: f64, period: &PeriodObservation) -> Result<f64> {
    period
        .queries
        .iter()
        .try_fold(0.0, |acc, q| Ok(acc + emission_log_pmf(params, state, eta, q)?))
}

/// `[t][s]` table of period log-probabilities.
pub(crate) fn period_log_table(
    spec: &ModelSpec,
    params: &CommonParams,
    eta: f64,
    periods: &[PeriodObservation],
) -> Result<Vec<Vec<f64>>> {
    periods
        .iter()
        .map(|p| {
            (0..spec.n_states)
                .map(|s| period_log_prob(params, s, eta, p))
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Transition matrices `Q_{t→t+1}` for `t = 1..T-1`, built from each
/// period's own activities.
pub(crate) fn transition_sequence(
    params: &CommonParams,
    zeta: f64,
    periods: &[PeriodObservation],
) -> Result<Vec<TransitionMatrix>> {
    periods
        .iter()
        .take(periods.len().saturating_sub(1))
        .map(|p| build_transition_matrix(params, zeta, &p.activities))
        .collect()
}

/// Scaled forward recursion over precomputed components.
///
/// `rescale(t)` multiplies the normalizing constant at step `t`; it must not
/// change the result and exists so tests can probe that.
pub(crate) fn forward_log_likelihood(
    initial: &[f64],
    log_probs: &[Vec<f64>],
    transitions: &[TransitionMatrix],
    rescale: impl Fn(usize) -> f64,
) -> Result<f64> {
    forward_with(
        initial,
        log_probs.len(),
        |t, s| log_probs[t][s],
        |t, from, to| transitions[t].get(from, to),
        rescale,
    )
}

/// Forward recursion over accessor closures: `log_prob(t, s)` is the period
/// log-probability and `transition(t, from, to)` the entry of `Q_{t→t+1}`.
/// Only adjacent `to` are queried.
pub(crate) fn forward_with(
    initial: &[f64],
    horizon: usize,
    log_prob: impl Fn(usize, usize) -> f64,
    transition: impl Fn(usize, usize, usize) -> f64,
    rescale: impl Fn(usize) -> f64,
) -> Result<f64> {
    let n = initial.len();
    let mut alpha = initial.to_vec();
    let mut next = vec![0.0; n];
    let mut lp = vec![0.0; n];
    let mut log_lik = 0.0;
    for t in 0..horizon {
        if t > 0 {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (from, &a) in alpha.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let lo = from.saturating_sub(1);
                let hi = (from + 1).min(n - 1);
                for (to, slot) in next.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    *slot += a * transition(t - 1, from, to);
                }
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        for (s, slot) in lp.iter_mut().enumerate() {
            *slot = log_prob(t, s);
        }
        let shift = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::NonFinite {
                t: t + 1,
                what: "period log-probability".into(),
            });
        }
        for (a, &l) in alpha.iter_mut().zip(&lp) {
            *a *= (l - shift).exp();
        }
        let c: f64 = alpha.iter().sum::<f64>() * rescale(t);
        if c > 0.0 && c.is_finite() {
            alpha.iter_mut().for_each(|a| *a /= c);
            log_lik += c.ln() + shift;
        } else {
            return log_domain_forward(initial, horizon, &log_prob, &transition);
        }
    }
    Ok(log_lik)
}

/// Log-domain forward recursion, used when the scaled recursion underflows.
fn log_domain_forward(
    initial: &[f64],
    horizon: usize,
    log_prob: &impl Fn(usize, usize) -> f64,
    transition: &impl Fn(usize, usize, usize) -> f64,
) -> Result<f64> {
    let n = initial.len();
    let mut la: Vec<f64> = (0..n).map(|s| initial[s].ln() + log_prob(0, s)).collect();
    for t in 1..horizon {
        la = (0..n)
            .map(|to| {
                let lo = to.saturating_sub(1);
                let hi = (to + 1).min(n - 1);
                let terms: Vec<f64> = (lo..=hi)
                    .map(|from| la[from] + transition(t - 1, from, to).ln())
                    .collect();
                log_sum_exp(&terms) + log_prob(t, to)
            })
            .collect();
    }
    let ll = log_sum_exp(&la);
    if ll.is_nan() {
        return Err(Error::NonFinite {
            t: horizon,
            what: "log-likelihood".into(),
        });
    }
    Ok(ll)
}

/// `ln L(O^i)` for one analyst by the scaled forward recursion.
pub fn sequence_log_likelihood(
    spec: &ModelSpec,
    params: &CommonParams,
    re: &RandomEffects,
    periods: &[PeriodObservation],
) -> Result<f64> {
    params.check_shape(spec)?;
    if periods.is_empty() {
        return Ok(0.0);
    }
    let log_probs = period_log_table(spec, params, re.eta, periods)?;
    let transitions = transition_sequence(params, re.zeta, periods)?;
    forward_log_likelihood(&spec.initial, &log_probs, &transitions, |_| 1.0)
}

/// Largest path count the enumeration oracle accepts.
pub const MAX_ENUMERATED_PATHS: usize = 1_000_000;

/// `ln L(O^i)` by summing the joint probability over every state path.
///
/// Exponential in the horizon; a verification oracle only.
pub fn brute_force_log_likelihood(
    spec: &ModelSpec,
    params: &CommonParams,
    re: &RandomEffects,
    periods: &[PeriodObservation],
) -> Result<f64> {
    params.check_shape(spec)?;
    let n = spec.n_states;
    let horizon = periods.len();
    let too_large = Error::StateSpaceTooLarge { n_states: n, horizon };
    let n_paths = (0..horizon).try_fold(1usize, |acc, _| acc.checked_mul(n));
    let n_paths = match n_paths {
        Some(p) if p <= MAX_ENUMERATED_PATHS => p,
        _ => return Err(too_large),
    };
    if horizon == 0 {
        return Ok(0.0);
    }
    let log_probs = period_log_table(spec, params, re.eta, periods)?;
    let transitions = transition_sequence(params, re.zeta, periods)?;

    let mut path = vec![0usize; horizon];
    let mut terms = Vec::with_capacity(n_paths);
    for code in 0..n_paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % n;
            c /= n;
        }
        // P(S_1) · Π q · Π P(O_t | S_t)
        let mut lp = spec.initial[path[0]].ln() + log_probs[0][path[0]];
        for t in 1..horizon {
            lp += transitions[t - 1].get(path[t - 1], path[t]).ln() + log_probs[t][path[t]];
        }
        terms.push(lp);
    }
    Ok(log_sum_exp(&terms))
}

/// Sum of per-analyst log-likelihoods, accumulated in ascending analyst-id
/// order regardless of the panel's ordering.
pub fn full_log_likelihood(
    spec: &ModelSpec,
    params: &CommonParams,
    all_re: &[RandomEffects],
    panel: &PanelData,
) -> Result<f64> {
    if all_re.len() != panel.n_analysts() {
        return Err(Error::Shape(format!(
            "{} random-effect pairs for {} analysts",
            all_re.len(),
            panel.n_analysts()
        )));
    }
    spec.check_panel(panel)?;
    let mut parts: Vec<(&str, f64)> = panel
        .analysts
        .par_iter()
        .zip(all_re.par_iter())
        .map(|(a, re)| {
            Ok((
                a.analyst_id.as_str(),
                sequence_log_likelihood(spec, params, re, &a.periods)?,
            ))
        })
        .collect::<Result<_>>()?;
    parts.sort_by(|a, b| a.0.cmp(b.0));
    Ok(parts.iter().map(|(_, v)| v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn query(tau: i64, covariates: Vec<f64>) -> QueryObservation {
        QueryObservation {
            query_id: format!("q{tau}"),
            completion_time: tau,
            covariates,
        }
    }

    #[test]
    fn one_state_matrix_is_identity() {
        let spec = ModelSpec::new(1, 2, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        let q = build_transition_matrix(&p, 0.3, &[1.0, 2.0]).unwrap();
        assert_eq!(q.row(0), &[1.0]);
    }

    #[test]
    fn two_state_zero_threshold_splits_evenly() {
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        let q = build_transition_matrix(&p, 0.0, &[3.0]).unwrap();
        assert_eq!(q.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn interior_row_matches_scalar_logistic() {
        let spec = ModelSpec::new(3, 1, 1).unwrap();
        let mut p = CommonParams::zeros(&spec);
        p.thresholds =
            ThresholdSet::from_cutpoints(&[(None, Some(1.0)), (Some(-2.0), Some(2.0)), (Some(0.0), None)]).unwrap();
        let q = build_transition_matrix(&p, 0.0, &[0.0]).unwrap();
        // independent evaluation: 1/(1+e^2)
        let s = 1.0 / (1.0 + 2f64.exp());
        assert_relative_eq!(q.get(1, 0), s, epsilon = 1e-15);
        assert_relative_eq!(q.get(1, 2), s, epsilon = 1e-15);
        assert_relative_eq!(q.get(1, 1), 1.0 - 2.0 * s, epsilon = 1e-15);
        assert_relative_eq!(q.get(1, 0), 0.11920292202211755, epsilon = 1e-12);
        assert_relative_eq!(q.get(1, 1), 0.7615941559557649, epsilon = 1e-12);
        assert_eq!(q.get(0, 2), 0.0);
        assert_eq!(q.get(2, 0), 0.0);
    }

    #[test]
    fn non_finite_learning_stock_is_reported() {
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let mut p = CommonParams::zeros(&spec);
        p.beta[1][0] = f64::INFINITY;
        match build_transition_matrix(&p, 0.0, &[1.0]) {
            Err(Error::NonFiniteLearningStock { state }) => assert_eq!(state, 2),
            other => panic!("{other:?}"),
        }
        p.beta[1][0] = 1.0;
        p.beta[0][0] = f64::NAN;
        assert!(matches!(
            build_transition_matrix(&p, 0.0, &[1.0]),
            Err(Error::NonFiniteLearningStock { state: 1 })
        ));
    }

    #[test]
    fn geometric_special_case() {
        let spec = ModelSpec::new(1, 0, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        for tau in 0..20 {
            let lp = emission_log_pmf(&p, 0, 0.0, &query(tau, vec![1.0])).unwrap();
            assert_relative_eq!(lp, (tau as f64 + 1.0) * 0.5f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dispersion_two_hand_value() {
        let spec = ModelSpec::new(1, 0, 1).unwrap();
        let mut p = CommonParams::zeros(&spec);
        p.log_delta[0] = 2f64.ln();
        p.rho[0][0] = 2f64.ln();
        let lp = emission_log_pmf(&p, 0, 0.0, &query(1, vec![1.0])).unwrap();
        assert_relative_eq!(lp.exp(), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn emission_rejects_negative_times() {
        let spec = ModelSpec::new(1, 0, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        assert!(emission_log_pmf(&p, 0, 0.0, &query(-1, vec![1.0])).is_err());
        assert!(emission_log_pmf(&p, 0, f64::NAN, &query(1, vec![1.0])).is_err());
    }

    #[test]
    fn empty_period_has_unit_probability() {
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        let period = PeriodObservation {
            period_index: 1,
            queries: vec![],
            activities: vec![0.0],
        };
        assert_eq!(period_log_prob(&p, 1, 0.0, &period).unwrap(), 0.0);
    }

    #[test]
    fn period_is_sum_of_queries() {
        let spec = ModelSpec::new(2, 1, 2).unwrap();
        let mut p = CommonParams::zeros(&spec);
        p.rho[1] = vec![0.4, -0.2];
        p.log_delta[1] = 0.7;
        let qs = vec![
            query(0, vec![1.0, 2.0]),
            query(5, vec![1.0, 0.5]),
            query(40, vec![1.0, 3.0]),
        ];
        let each: f64 = qs.iter().map(|q| emission_log_pmf(&p, 1, 0.1, q).unwrap()).sum();
        let period = PeriodObservation {
            period_index: 1,
            queries: qs,
            activities: vec![1.0],
        };
        assert_relative_eq!(period_log_prob(&p, 1, 0.1, &period).unwrap(), each, epsilon = 1e-12);
    }

    #[test]
    fn threshold_names_and_roundtrip() {
        assert_eq!(
            ThresholdSet::names(3),
            vec!["mu(2,1)", "mu(1,2)", "log(mu(3,2)-mu(1,2))", "mu(2,3)"]
        );
        let t = ThresholdSet::from_cutpoints(&[(None, Some(1.5)), (Some(-1.0), Some(4.0)), (Some(0.5), None)]).unwrap();
        assert_eq!(t.up(0), Some(1.5));
        assert_eq!(t.down(1), Some(-1.0));
        assert_relative_eq!(t.up(1).unwrap(), 4.0, epsilon = 1e-14);
        assert_eq!(t.down(2), Some(0.5));
        assert_eq!(t.up(2), None);
        assert!(ThresholdSet::from_cutpoints(&[(None, Some(0.0)), (Some(1.0), Some(0.0)), (Some(0.0), None)]).is_err());
    }

    #[test]
    fn psi_vector_roundtrip() {
        let spec = ModelSpec::new(3, 2, 4).unwrap();
        let v: Vec<f64> = (0..spec.n_psi()).map(|i| i as f64 * 0.1).collect();
        let p = CommonParams::from_vec(&spec, &v).unwrap();
        assert_eq!(p.to_vec(), v);
        let names = CommonParams::names(
            &spec,
            &["constant".into(), "a".into(), "b".into(), "c".into()],
            &["w".into(), "v".into()],
        );
        assert_eq!(names.len(), spec.n_psi());
        assert_eq!(names[CommonParams::intercept_index(&spec, 2)], "rho_3[constant]");
        assert_eq!(spec.n_psi(), 4 + 3 + 6 + 12);
    }

    #[test]
    fn oracle_rejects_huge_state_space() {
        let spec = ModelSpec::new(3, 0, 1).unwrap();
        let p = CommonParams::zeros(&spec);
        let periods: Vec<PeriodObservation> = (1..=13)
            .map(|t| PeriodObservation {
                period_index: t,
                queries: vec![],
                activities: vec![],
            })
            .collect();
        assert!(matches!(
            brute_force_log_likelihood(&spec, &p, &RandomEffects::default(), &periods),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }
}
