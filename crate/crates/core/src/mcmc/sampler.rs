//! The Metropolis-within-Gibbs chain.
//!
//! One iteration is: (1) a random-walk update of each analyst's `Θ_i`
//! given Ψ and `Σ_Θ`, run in parallel with one random stream per analyst;
//! (2) a conjugate inverse-Wishart draw of `Σ_Θ`, optionally followed by
//! exact Gibbs draws along the two location ridges; (3) a random-walk
//! update of Ψ against the full likelihood.

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{mh_step, AdaptState};
use super::likelihood::{analyst_log_likelihood, panel_log_likelihoods, AnalystTerms, PreparedPanel, TermParts};
use super::wishart::{gibbs_sigma_theta, sample_inverse_wishart};
use super::{InitStrategy, McmcConfig, PriorSpec, PsiBlocking};
use crate::error::{Error, Result};
use crate::hmm::{CommonParams, ModelSpec, RandomEffects};
use crate::panel::PanelData;
use crate::provenance::derive_seed;

/// Attempts at drawing a starting point with a finite posterior.
pub const MAX_INIT_ATTEMPTS: u32 = 100;

/// Post-freeze acceptance rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcceptanceRates {
    /// One entry per Ψ block.
    pub psi: Vec<f64>,
    pub theta_mean: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub chain_seed: u64,
    pub psi_names: Vec<String>,
    pub iterations: Vec<u64>,
    pub psi: Vec<Vec<f64>>,
    /// `(Σ_ζζ, Σ_ζη, Σ_ηη)` per retained draw.
    pub sigma_theta: Vec<[f64; 3]>,
    pub log_lik: Vec<f64>,
    pub log_post: Vec<f64>,
    /// Analysts in ascending id order; indexes `theta_mean` and `theta`.
    pub analyst_ids: Vec<String>,
    pub theta_mean: Vec<RandomEffects>,
    pub theta: Option<Vec<Vec<RandomEffects>>>,
    pub acceptance: AcceptanceRates,
    pub init_attempts: u32,
    /// Ψ proposal state when adaptation stopped, and at the end.
    #[serde(skip)]
    pub psi_adapt_at_freeze: Option<Vec<AdaptState>>,
    #[serde(skip)]
    pub psi_adapt_final: Vec<AdaptState>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Series of Ψ entry `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.psi.iter().map(|d| d[j]).collect()
    }
}

fn sigma_entries(s: &Matrix2<f64>) -> [f64; 3] {
    [s[(0, 0)], s[(0, 1)], s[(1, 1)]]
}

/// `ln Normal(θ; 0, Σ)` without the `2π` constant.
fn log_normal2(theta: &[f64], inv: &Matrix2<f64>, log_det: f64) -> f64 {
    let (z, e) = (theta[0], theta[1]);
    let q = inv[(0, 0)] * z * z + 2.0 * inv[(0, 1)] * z * e + inv[(1, 1)] * e * e;
    -0.5 * (q + log_det)
}

fn invert2(s: &Matrix2<f64>) -> Result<(Matrix2<f64>, f64)> {
    let det = s.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NotPositiveDefinite("random-effect covariance".into()));
    }
    let inv = s
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("random-effect covariance".into()))?;
    Ok((inv, det.ln()))
}

/// Ψ indices of each proposal block.
fn psi_blocks(spec: &ModelSpec, blocking: PsiBlocking) -> Vec<Vec<usize>> {
    let n = spec.n_states;
    let d0 = spec.n_thresholds();
    let b0 = d0 + n;
    let r0 = b0 + spec.n_beta_states() * spec.n_activities;
    let beta = |s: usize| -> Vec<usize> {
        if spec.n_beta_states() == 0 {
            vec![]
        } else {
            (b0 + s * spec.n_activities..b0 + (s + 1) * spec.n_activities).collect()
        }
    };
    let rho = |s: usize| -> Vec<usize> { (r0 + s * spec.n_covariates..r0 + (s + 1) * spec.n_covariates).collect() };
    let blocks = match blocking {
        PsiBlocking::Joint => vec![(0..spec.n_psi()).collect()],
        PsiBlocking::Grouped => {
            let mut out: Vec<Vec<usize>> = vec![(0..d0).collect(), (d0..b0).collect(), (b0..r0).collect()];
            out.extend((0..n).map(rho));
            out
        }
        PsiBlocking::ByState => (0..n)
            .map(|s| {
                // state 0 stores one cut point, interior states two, the last one
                let cuts = if n == 1 {
                    0..0
                } else if s == 0 {
                    0..1
                } else {
                    2 * s - 1..(2 * s + 1).min(d0)
                };
                let mut idx: Vec<usize> = cuts.collect();
                idx.push(d0 + s);
                idx.extend(beta(s));
                idx.extend(rho(s));
                idx
            })
            .collect(),
    };
    blocks.into_iter().filter(|b| !b.is_empty()).collect()
}

struct ThetaBlock {
    theta: [f64; 2],
    log_lik: f64,
    adapt: AdaptState,
    rng: ChaCha8Rng,
    sum: [f64; 2],
}

/// Ψ entries that move with ζ: the cut points, not the log gaps.
fn cut_positions(spec: &ModelSpec) -> Vec<usize> {
    (0..spec.n_thresholds()).filter(|&i| i == 0 || i % 2 == 1).collect()
}

/// Draws `c` from the Gaussian full conditional of the translation
/// `psi[idx] += c`, `theta_i[k] += sign * c` and moves everything by it.
/// The likelihood is invariant along the ridge, so only the priors enter.
#[allow(clippy::too_many_arguments)]
fn shift_move(
    psi: &mut [f64],
    idx: &[usize],
    thetas: &mut [[f64; 2]],
    k: usize,
    sign: f64,
    inv: &Matrix2<f64>,
    psi_variance: f64,
    rng: &mut ChaCha8Rng,
) {
    let o = 1 - k;
    let prec = idx.len() as f64 / psi_variance + thetas.len() as f64 * inv[(k, k)];
    let lin = -idx.iter().map(|&i| psi[i]).sum::<f64>() / psi_variance
        - sign
            * thetas
                .iter()
                .map(|t| inv[(k, k)] * t[k] + inv[(k, o)] * t[o])
                .sum::<f64>();
    let z: f64 = rng.sample(StandardNormal);
    let c = lin / prec + z / prec.sqrt();
    for &i in idx {
        psi[i] += c;
    }
    for t in thetas.iter_mut() {
        t[k] += sign * c;
    }
}

/// `(ln mean, ln δ)` of a single negative binomial fitted to the completion
/// times by moments; `None` without queries.
fn completion_moments(panel: &PanelData) -> Option<(f64, f64)> {
    let tau: Vec<f64> = panel
        .analysts
        .iter()
        .flat_map(|a| {
            a.periods
                .iter()
                .flat_map(|p| p.queries.iter().map(|q| q.completion_time as f64))
        })
        .collect();
    if tau.is_empty() {
        return None;
    }
    let n = tau.len() as f64;
    let mean = (tau.iter().sum::<f64>() / n).max(0.5);
    let var = tau.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let delta = if var > mean { mean * mean / (var - mean) } else { 100.0 };
    Some((mean.ln(), delta.clamp(1e-3, 1e3).ln()))
}

/// Overdispersed start around the moment estimates. Intercepts are spread
/// over ±1 around the pooled log mean and sorted so state 1 is slowest.
fn data_start(spec: &ModelSpec, (log_mean, log_delta): (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut psi: Vec<f64> = (0..spec.n_psi())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = spec.n_states;
    let mut intercepts: Vec<f64> = (0..n)
        .map(|s| {
            let spread = if n == 1 {
                0.0
            } else {
                1.0 - 2.0 * s as f64 / (n - 1) as f64
            };
            log_mean + spread + 0.25 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    intercepts.sort_by(|a, b| b.total_cmp(a));
    let delta_at = spec.n_thresholds();
    for s in 0..n {
        psi[delta_at + s] = log_delta + 0.25 * rng.sample::<f64, _>(StandardNormal);
        psi[CommonParams::intercept_index(spec, s)] = intercepts[s];
    }
    psi
}

struct Start {
    sigma: Matrix2<f64>,
    thetas: Vec<RandomEffects>,
    psi: Vec<f64>,
    params: CommonParams,
    terms: Vec<AnalystTerms>,
    lls: Vec<f64>,
    attempts: u32,
}

fn initialize(
    spec: &ModelSpec,
    prepared: &PreparedPanel,
    prior: &PriorSpec,
    moments: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<Start> {
    let n_ind = prepared.n_analysts();
    let sd = prior.psi_variance.sqrt();
    for attempt in 1..=MAX_INIT_ATTEMPTS {
        let s0 = sample_inverse_wishart(prior.sigma_theta_dof(n_ind), &DMatrix::identity(2, 2), rng)?;
        let sigma = Matrix2::new(s0[(0, 0)], s0[(0, 1)], s0[(1, 0)], s0[(1, 1)]);
        let l = sigma
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("initial random-effect covariance".into()))?
            .l();
        let thetas: Vec<RandomEffects> = (0..n_ind)
            .map(|_| {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                RandomEffects {
                    zeta: l[(0, 0)] * z0,
                    eta: l[(1, 0)] * z0 + l[(1, 1)] * z1,
                }
            })
            .collect();
        let psi = match moments {
            Some(m) => data_start(spec, m, rng),
            None => (0..spec.n_psi())
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let params = CommonParams::from_vec(spec, &psi)?;
        let terms = prepared.terms(&params);
        let lls = panel_log_likelihoods(prepared, &params, &terms, &thetas);
        if lls.iter().all(|v| v.is_finite()) && lls.iter().sum::<f64>().is_finite() {
            return Ok(Start {
                sigma,
                thetas,
                psi,
                params,
                terms,
                lls,
                attempts: attempt,
            });
        }
    }
    Err(Error::Numerical(format!(
        "no starting point with a finite posterior after {MAX_INIT_ATTEMPTS} attempts"
    )))
}

/// `ln IW(Σ; ν, I)` without its normalizing constant.
fn log_iw_identity(dof: f64, inv: &Matrix2<f64>, log_det: f64) -> f64 {
    -0.5 * (dof + 3.0) * log_det - 0.5 * inv.trace()
}

/// Runs one chain of Algorithm-style Metropolis-within-Gibbs.
pub fn run_chain(
    panel: &PanelData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    config: &McmcConfig,
    chain_seed: u64,
) -> Result<ChainTrace> {
    config.validate()?;
    prior.validate()?;
    let panel = panel.clone().sorted();
    let prepared = PreparedPanel::new(spec, &panel)?;
    let psi_names = CommonParams::names(spec, &panel.covariate_names, &panel.activity_names);
    let n_ind = prepared.n_analysts();
    let settings = config.adapt_settings();
    let freeze_at = config.freeze_iteration();

    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed);
    let moments = match config.init {
        InitStrategy::Prior => None,
        InitStrategy::Data => completion_moments(&panel),
    };
    let start = initialize(spec, &prepared, prior, moments, &mut rng)?;
    let mut sigma = start.sigma;
    let mut psi = start.psi;
    let mut params = start.params;
    let mut terms = start.terms;

    let mut blocks: Vec<ThetaBlock> = panel
        .analysts
        .iter()
        .zip(&start.thetas)
        .zip(&start.lls)
        .map(|((a, th), &ll)| ThetaBlock {
            theta: [th.zeta, th.eta],
            log_lik: ll,
            adapt: AdaptState::new(&[th.zeta, th.eta], config.theta_initial_sd, settings),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(chain_seed, &format!("theta/{}", a.analyst_id))),
            sum: [0.0; 2],
        })
        .collect();

    let blocks_idx = psi_blocks(spec, config.psi_blocking);
    let gather = |psi: &[f64], idx: &[usize]| idx.iter().map(|&i| psi[i]).collect::<Vec<f64>>();
    let mut psi_adapt: Vec<AdaptState> = blocks_idx
        .iter()
        .map(|idx| AdaptState::new(&gather(&psi, idx), config.psi_initial_sd, settings))
        .collect();
    let mut psi_adapt_at_freeze = None;
    let cuts = cut_positions(spec);
    let intercepts: Vec<usize> = (0..spec.n_states)
        .map(|s| CommonParams::intercept_index(spec, s))
        .collect();

    let n_keep = config.n_retained();
    let mut trace = ChainTrace {
        chain_seed,
        psi_names,
        iterations: Vec::with_capacity(n_keep),
        psi: Vec::with_capacity(n_keep),
        sigma_theta: Vec::with_capacity(n_keep),
        log_lik: Vec::with_capacity(n_keep),
        log_post: Vec::with_capacity(n_keep),
        analyst_ids: panel.analysts.iter().map(|a| a.analyst_id.clone()).collect(),
        theta_mean: Vec::new(),
        theta: config.store_theta.then(|| Vec::with_capacity(n_keep)),
        acceptance: AcceptanceRates::default(),
        init_attempts: start.attempts,
        psi_adapt_at_freeze: None,
        psi_adapt_final: Vec::new(),
    };

    for iter in 1..=config.n_iterations {
        // Step 1: Θ_i | Ψ, Σ_Θ
        let (inv, log_det) = invert2(&sigma)?;
        blocks
            .par_iter_mut()
            .zip(prepared.analysts.par_iter())
            .zip(terms.par_iter())
            .for_each(|((b, a), tm)| {
                let current_lp = b.log_lik + log_normal2(&b.theta, &inv, log_det);
                let mut cand_ll = f64::NEG_INFINITY;
                let out = mh_step(
                    &b.theta,
                    current_lp,
                    |x| {
                        let re = RandomEffects { zeta: x[0], eta: x[1] };
                        cand_ll = analyst_log_likelihood(spec, &params, a, tm, &re);
                        cand_ll + log_normal2(x, &inv, log_det)
                    },
                    &mut b.adapt,
                    &mut b.rng,
                );
                if out.accepted {
                    b.theta = [out.value[0], out.value[1]];
                    b.log_lik = cand_ll;
                }
            });
        let thetas: Vec<RandomEffects> = blocks
            .iter()
            .map(|b| RandomEffects {
                zeta: b.theta[0],
                eta: b.theta[1],
            })
            .collect();

        // Step 2: Σ_Θ | Θ
        sigma = gibbs_sigma_theta(&thetas, prior, &mut rng)?;
        if config.shift_moves && n_ind > 0 {
            let (inv, _) = invert2(&sigma)?;
            let mut th: Vec<[f64; 2]> = blocks.iter().map(|b| b.theta).collect();
            if spec.has_transitions() {
                shift_move(&mut psi, &cuts, &mut th, 0, 1.0, &inv, prior.psi_variance, &mut rng);
            }
            shift_move(
                &mut psi,
                &intercepts,
                &mut th,
                1,
                -1.0,
                &inv,
                prior.psi_variance,
                &mut rng,
            );
            for (b, t) in blocks.iter_mut().zip(th) {
                b.theta = t;
            }
            params = CommonParams::from_vec(spec, &psi)?;
            let lin_only = TermParts {
                lin: true,
                ..TermParts::default()
            };
            terms = prepared.update_terms(&params, &terms, lin_only);
        }
        let thetas: Vec<RandomEffects> = blocks
            .iter()
            .map(|b| RandomEffects {
                zeta: b.theta[0],
                eta: b.theta[1],
            })
            .collect();

        // Step 3: Ψ | Θ, data
        let mut current_ll: f64 = blocks.iter().map(|b| b.log_lik).sum();
        for (idx, adapt) in blocks_idx.iter().zip(psi_adapt.iter_mut()) {
            let current_lp = current_ll + prior.log_prior_psi(&psi);
            let parts = TermParts::for_indices(spec, idx);
            let mut cand: Option<(CommonParams, Vec<AnalystTerms>, Vec<f64>)> = None;
            let mut full = psi.clone();
            let out = mh_step(
                &gather(&psi, idx),
                current_lp,
                |x| {
                    for (&i, &v) in idx.iter().zip(x) {
                        full[i] = v;
                    }
                    let Ok(p) = CommonParams::from_vec(spec, &full) else {
                        return f64::NEG_INFINITY;
                    };
                    let tm = prepared.update_terms(&p, &terms, parts);
                    let lls = panel_log_likelihoods(&prepared, &p, &tm, &thetas);
                    let ll: f64 = lls.iter().sum();
                    let lp = ll + prior.log_prior_psi(&full);
                    cand = Some((p, tm, lls));
                    lp
                },
                adapt,
                &mut rng,
            );
            if out.accepted {
                let (p, tm, lls) = cand.expect("candidate evaluated");
                for (&i, &v) in idx.iter().zip(&out.value) {
                    psi[i] = v;
                }
                params = p;
                terms = tm;
                for (b, ll) in blocks.iter_mut().zip(lls) {
                    b.log_lik = ll;
                }
                current_ll = blocks.iter().map(|b| b.log_lik).sum();
            }
        }

        if iter == freeze_at {
            for b in blocks.iter_mut() {
                b.adapt.freeze();
                b.adapt.reset_counts();
            }
            for a in psi_adapt.iter_mut() {
                a.freeze();
                a.reset_counts();
            }
            psi_adapt_at_freeze = Some(psi_adapt.clone());
        }

        if iter > config.burn_in && (iter - config.burn_in) % config.thinning == 0 {
            let (inv, log_det) = invert2(&sigma)?;
            let log_lik = current_ll;
            let log_post = log_lik
                + prior.log_prior_psi(&psi)
                + blocks.iter().map(|b| log_normal2(&b.theta, &inv, log_det)).sum::<f64>()
                + log_iw_identity(prior.sigma_theta_dof(n_ind), &inv, log_det);
            trace.iterations.push(iter);
            trace.psi.push(psi.clone());
            trace.sigma_theta.push(sigma_entries(&sigma));
            trace.log_lik.push(log_lik);
            trace.log_post.push(log_post);
            for b in blocks.iter_mut() {
                b.sum[0] += b.theta[0];
                b.sum[1] += b.theta[1];
            }
            if let Some(th) = trace.theta.as_mut() {
                th.push(thetas.clone());
            }
        }
    }

    let kept = trace.len().max(1) as f64;
    trace.theta_mean = blocks
        .iter()
        .map(|b| RandomEffects {
            zeta: b.sum[0] / kept,
            eta: b.sum[1] / kept,
        })
        .collect();
    let theta_rates: Vec<f64> = blocks.iter().map(|b| b.adapt.acceptance_rate()).collect();
    trace.acceptance = AcceptanceRates {
        psi: psi_adapt.iter().map(AdaptState::acceptance_rate).collect(),
        theta_mean: theta_rates.iter().sum::<f64>() / theta_rates.len().max(1) as f64,
        theta_min: theta_rates.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
        theta_max: theta_rates.iter().copied().fold(0.0, f64::max),
    };
    trace.psi_adapt_at_freeze = psi_adapt_at_freeze;
    trace.psi_adapt_final = psi_adapt;
    Ok(trace)
}

/// Seed of chain `c` under root seed `seed`.
pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    derive_seed(seed, &format!("chain/{chain}"))
}

/// Runs `config.n_chains` independent chains in parallel. Each chain's
/// result is returned separately so one failure does not discard the rest.
pub fn run_chains_parallel(
    panel: &PanelData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Vec<Result<ChainTrace>> {
    (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(panel, spec, prior, config, chain_seed(config.seed, c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;
    use crate::simulate::tests::three_state_config;

    fn short_config() -> McmcConfig {
        McmcConfig {
            n_iterations: 60,
            burn_in: 30,
            seed: 9,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = three_state_config(4);
        let out = simulate(&cfg).unwrap();
        let mc = short_config();
        let a = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 77).unwrap();
        let b = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        let c = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 78).unwrap();
        assert_ne!(a.psi, c.psi);
        assert!(c.psi.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn trace_does_not_depend_on_analyst_order() {
        let cfg = three_state_config(4);
        let out = simulate(&cfg).unwrap();
        let mut shuffled = out.panel.clone();
        shuffled.analysts.reverse();
        let mc = short_config();
        let a = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 5).unwrap();
        let b = run_chain(&shuffled, &cfg.spec, &PriorSpec::default(), &mc, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptation_is_frozen_after_freeze_point() {
        let cfg = three_state_config(4);
        let out = simulate(&cfg).unwrap();
        let mc = McmcConfig {
            freeze_at: Some(20),
            psi_blocking: PsiBlocking::Grouped,
            ..short_config()
        };
        let t = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 5).unwrap();
        let frozen = t.psi_adapt_at_freeze.clone().unwrap();
        assert_eq!(frozen.len(), t.psi_adapt_final.len());
        for (a, b) in frozen.iter().zip(&t.psi_adapt_final) {
            assert_eq!(a.scale().to_bits(), b.scale().to_bits());
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn shift_moves_leave_the_likelihood_unchanged() {
        let cfg = three_state_config(4);
        let out = simulate(&cfg).unwrap();
        let spec = &cfg.spec;
        let panel = out.panel.clone().sorted();
        let prepared = PreparedPanel::new(spec, &panel).unwrap();
        let mut psi = cfg.params.to_vec();
        let mut th: Vec<[f64; 2]> = (0..panel.analysts.len()).map(|i| [0.1 * i as f64 - 1.0, 0.3]).collect();
        let ll = |psi: &[f64], th: &[[f64; 2]]| {
            let p = CommonParams::from_vec(spec, psi).unwrap();
            let re: Vec<RandomEffects> = th.iter().map(|t| RandomEffects { zeta: t[0], eta: t[1] }).collect();
            panel_log_likelihoods(&prepared, &p, &prepared.terms(&p), &re)
        };
        let before = ll(&psi, &th);
        let (inv, _) = invert2(&Matrix2::new(0.2, 0.05, 0.05, 0.1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let old = psi.clone();
        shift_move(&mut psi, &cut_positions(spec), &mut th, 0, 1.0, &inv, 30.0, &mut rng);
        let intercepts: Vec<usize> = (0..3).map(|s| CommonParams::intercept_index(spec, s)).collect();
        shift_move(&mut psi, &intercepts, &mut th, 1, -1.0, &inv, 30.0, &mut rng);
        assert!(psi.iter().zip(&old).any(|(a, b)| (a - b).abs() > 1e-3));
        for (a, b) in ll(&psi, &th).iter().zip(&before) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn grouped_blocks_cover_the_vector() {
        let spec = ModelSpec::new(3, 2, 4).unwrap();
        let r = psi_blocks(&spec, PsiBlocking::Grouped);
        let flat: Vec<usize> = r.concat();
        assert_eq!(flat, (0..spec.n_psi()).collect::<Vec<_>>());
        let one = ModelSpec::new(1, 2, 4).unwrap();
        assert_eq!(psi_blocks(&one, PsiBlocking::Grouped).len(), 2);
    }

    #[test]
    fn state_blocks_partition_the_vector() {
        for n in 1..5 {
            let spec = ModelSpec::new(n, 2, 3).unwrap();
            let b = psi_blocks(&spec, PsiBlocking::ByState);
            assert_eq!(b.len(), n);
            let mut flat = b.concat();
            flat.sort_unstable();
            assert_eq!(flat, (0..spec.n_psi()).collect::<Vec<_>>());
        }
    }
}
