//! Synthetic panels drawn from the generative model, for parameter-recovery
//! checks.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{build_transition_matrix, CommonParams, ModelSpec, RandomEffects};
use crate::panel::{AnalystPanel, PanelData, PanelMetadata, PeriodObservation, QueryObservation};
use crate::provenance::{derive_seed, Provenance};

pub const TRUTH_FORMAT: &str = "truth/1";

/// How learning-activity vectors are drawn each period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActivityProcess {
    /// Independent Poisson counts with the given means.
    Poisson { means: Vec<f64> },
    /// One of a finite set of activity vectors, chosen uniformly.
    Design { levels: Vec<Vec<f64>> },
}

impl ActivityProcess {
    fn dim(&self) -> Option<usize> {
        match self {
            ActivityProcess::Poisson { means } => Some(means.len()),
            ActivityProcess::Design { levels } => levels.first().map(Vec::len),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ActivityProcess::Poisson { means } => means.iter().map(|&m| poisson(rng, m)).collect(),
            ActivityProcess::Design { levels } => levels[rng.random_range(0..levels.len())].clone(),
        }
    }
}

/// Sampler for one non-constant covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateSampler {
    Fixed {
        value: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// `1 + Poisson(mean)`, for counts bounded below by one.
    OnePlusPoisson {
        mean: f64,
    },
}

impl CovariateSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateSampler::Fixed { value } => value,
            CovariateSampler::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            CovariateSampler::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            CovariateSampler::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateSampler::OnePlusPoisson { mean } => 1.0 + poisson(rng, mean),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CovariateSampler::Fixed { value } => value.is_finite(),
            CovariateSampler::Normal { mean, sd } => mean.is_finite() && sd >= 0.0,
            CovariateSampler::Uniform { low, high } => low.is_finite() && high >= low,
            CovariateSampler::Bernoulli { p } => (0.0..=1.0).contains(&p),
            CovariateSampler::OnePlusPoisson { mean } => mean >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid covariate sampler {self:?}")))
        }
    }
}

/// Covariates after the constant, with their names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProcess {
    pub columns: Vec<(String, CovariateSampler)>,
}

impl CovariateProcess {
    /// Samplers for the ingestion covariates, with moments close to those of
    /// a typical query log.
    pub fn standard() -> Self {
        CovariateProcess {
            columns: vec![
                ("workload".into(), CovariateSampler::OnePlusPoisson { mean: 0.1 }),
                (
                    "tenure_months".into(),
                    CovariateSampler::Uniform { low: 0.0, high: 30.0 },
                ),
                ("migrated".into(), CovariateSampler::Bernoulli { p: 0.01 }),
                ("saved".into(), CovariateSampler::Bernoulli { p: 0.3 }),
                ("query_size".into(), CovariateSampler::OnePlusPoisson { mean: 3.6 }),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec: ModelSpec,
    pub params: CommonParams,
    /// Covariance of `(zeta, eta)`.
    pub sigma_theta: [[f64; 2]; 2],
    pub n_analysts: usize,
    pub horizon: usize,
    pub activity_names: Vec<String>,
    pub activity_process: ActivityProcess,
    pub covariate_process: CovariateProcess,
    /// Mean of the Poisson number of queries per analyst-period.
    pub queries_per_period: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.check_shape(&self.spec)?;
        let s = self.sigma_theta;
        if s[0][1] != s[1][0] || s.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("sigma_theta must be symmetric".into()));
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        if !(s[0][0] > 0.0 && det > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma_theta {s:?} is not positive definite"
            )));
        }
        if self.n_analysts == 0 || self.horizon == 0 {
            return Err(Error::Config("n_analysts and horizon must be positive".into()));
        }
        if self.activity_process.dim() != Some(self.spec.n_activities)
            || self.activity_names.len() != self.spec.n_activities
        {
            return Err(Error::Config("activity process does not match the model".into()));
        }
        if let ActivityProcess::Poisson { means } = &self.activity_process {
            if means.iter().any(|m| !(*m >= 0.0)) {
                return Err(Error::Config("activity means must be >= 0".into()));
            }
        }
        if let ActivityProcess::Design { levels } = &self.activity_process {
            if levels.iter().any(|l| l.len() != self.spec.n_activities) {
                return Err(Error::Config("activity design levels differ in length".into()));
            }
        }
        if self.covariate_process.columns.len() + 1 != self.spec.n_covariates {
            return Err(Error::Config(format!(
                "model has {} covariates but the covariate process defines {} besides the constant",
                self.spec.n_covariates,
                self.covariate_process.columns.len()
            )));
        }
        for (_, c) in &self.covariate_process.columns {
            c.validate()?;
        }
        if !(self.queries_per_period >= 0.0) {
            return Err(Error::Config("queries_per_period must be >= 0".into()));
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        std::iter::once("constant".to_string())
            .chain(self.covariate_process.columns.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// Analyst identifiers, zero padded so lexical order is numeric order.
    pub fn analyst_ids(&self) -> Vec<String> {
        let width = self.n_analysts.to_string().len().max(4);
        (1..=self.n_analysts).map(|i| format!("a{i:0width$}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub panel: PanelData,
    /// Zero-based state paths, one per analyst in panel order.
    pub true_states: Vec<Vec<usize>>,
    pub true_re: Vec<RandomEffects>,
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng)
}

/// Draws a count from the negative binomial with the given log mean and
/// dispersion, as a gamma-mixed Poisson.
pub fn sample_nb<R: Rng>(rng: &mut R, log_mean: f64, delta: f64) -> i64 {
    let mean = log_mean.exp();
    let rate = Gamma::new(delta, mean / delta).map(|g| g.sample(rng)).unwrap_or(mean);
    if !(rate > 0.0) {
        return 0;
    }
    // Poisson sampling is limited to rates below ~1.8e19.
    let rate = rate.min(1e18);
    Poisson::new(rate).map(|p| p.sample(rng) as i64).unwrap_or(0)
}

fn draw_state<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

struct AnalystDraw {
    panel: AnalystPanel,
    states: Vec<usize>,
    re: RandomEffects,
}

fn simulate_analyst(config: &SimConfig, chol: &Matrix2<f64>, id: &str) -> Result<AnalystDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id));
    let z = [
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ];
    let re = RandomEffects {
        zeta: chol[(0, 0)] * z[0],
        eta: chol[(1, 0)] * z[0] + chol[(1, 1)] * z[1],
    };
    let params = &config.params;
    let mut state = draw_state(&mut rng, &config.spec.initial);
    let mut states = Vec::with_capacity(config.horizon);
    let mut periods = Vec::with_capacity(config.horizon);
    let mut serial = 0usize;
    for t in 1..=config.horizon {
        states.push(state);
        let activities = config.activity_process.sample(&mut rng);
        let k = poisson(&mut rng, config.queries_per_period) as usize;
        let mut queries = Vec::with_capacity(k);
        for _ in 0..k {
            serial += 1;
            let mut covariates = Vec::with_capacity(config.spec.n_covariates);
            covariates.push(1.0);
            for (_, c) in &config.covariate_process.columns {
                covariates.push(c.sample(&mut rng));
            }
            let lin: f64 = params.rho[state]
                .iter()
                .zip(&covariates)
                .map(|(r, z)| r * z)
                .sum::<f64>()
                + re.eta;
            let tau = sample_nb(&mut rng, lin, params.delta(state));
            queries.push(QueryObservation {
                query_id: format!("{id}-q{serial}"),
                completion_time: tau,
                covariates,
            });
        }
        if t < config.horizon {
            let q = build_transition_matrix(params, re.zeta, &activities)?;
            state = draw_state(&mut rng, q.row(state));
        }
        periods.push(PeriodObservation {
            period_index: t,
            queries,
            activities,
        });
    }
    Ok(AnalystDraw {
        panel: AnalystPanel {
            analyst_id: id.to_string(),
            periods,
        },
        states,
        re,
    })
}

/// Samples a panel, the latent paths and the random effects.
///
/// Each analyst draws from its own substream keyed by `(seed, analyst_id)`,
/// so output is reproducible and independent of scheduling.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let s = config.sigma_theta;
    let sigma = Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1]);
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("sigma_theta".into()))?
        .l();
    let draws: Vec<AnalystDraw> = config
        .analyst_ids()
        .par_iter()
        .map(|id| simulate_analyst(config, &chol, id))
        .collect::<Result<_>>()?;

    let mut analysts = Vec::with_capacity(draws.len());
    let mut true_states = Vec::with_capacity(draws.len());
    let mut true_re = Vec::with_capacity(draws.len());
    for d in draws {
        analysts.push(d.panel);
        true_states.push(d.states);
        true_re.push(d.re);
    }
    Ok(SimOutput {
        panel: PanelData {
            horizon: config.horizon,
            covariate_names: config.covariate_names(),
            activity_names: config.activity_names.clone(),
            analysts,
            metadata: PanelMetadata::default(),
        },
        true_states,
        true_re,
    })
}

/// Ground truth written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format: String,
    pub provenance: Provenance,
    pub spec: ModelSpec,
    pub params: CommonParams,
    pub psi_names: Vec<String>,
    pub psi: Vec<f64>,
    pub sigma_theta: [[f64; 2]; 2],
    /// One-based state paths keyed by analyst id.
    pub states: BTreeMap<String, Vec<usize>>,
    pub random_effects: BTreeMap<String, RandomEffects>,
}

impl TruthFile {
    pub fn new(config: &SimConfig, output: &SimOutput, provenance: Provenance) -> Self {
        let ids = output.panel.analysts.iter().map(|a| a.analyst_id.clone());
        TruthFile {
            format: TRUTH_FORMAT.into(),
            provenance,
            spec: config.spec.clone(),
            params: config.params.clone(),
            psi_names: CommonParams::names(
                &config.spec,
                &output.panel.covariate_names,
                &output.panel.activity_names,
            ),
            psi: config.params.to_vec(),
            sigma_theta: config.sigma_theta,
            states: ids
                .clone()
                .zip(&output.true_states)
                .map(|(id, p)| (id, p.iter().map(|s| s + 1).collect()))
                .collect(),
            random_effects: ids.zip(output.true_re.iter().copied()).collect(),
        }
    }
}

/// Outcome of comparing realized transitions against the model's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCheck {
    /// Largest |empirical − expected| over all (state, activity, destination) cells.
    pub max_deviation: f64,
    /// Largest deviation in units of the binomial standard error.
    pub max_z: f64,
    pub n_transitions: usize,
    pub n_cells: usize,
}

/// Minimum number of analyst-periods for [`empirical_transition_check`].
pub const MIN_TRANSITION_SAMPLE: usize = 10_000;

/// Bins realized transitions by (origin state, activity vector) and compares
/// destination frequencies with the expected rows of the transition matrix,
/// averaged over the analysts contributing to each bin.
pub fn empirical_transition_check(
    output: &SimOutput,
    params: &CommonParams,
    spec: &ModelSpec,
) -> Result<TransitionCheck> {
    let panel = &output.panel;
    let analyst_periods = panel.n_analysts() * panel.horizon;
    if analyst_periods < MIN_TRANSITION_SAMPLE {
        return Err(Error::InsufficientSample(format!(
            "{analyst_periods} analyst-periods, need at least {MIN_TRANSITION_SAMPLE}"
        )));
    }
    let n = spec.n_states;
    // (state, activity bits) -> (count, destination counts, summed expected rows, summed p(1-p))
    let mut bins: BTreeMap<(usize, Vec<u64>), (usize, Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((a, path), re) in panel.analysts.iter().zip(&output.true_states).zip(&output.true_re) {
        for t in 0..panel.horizon.saturating_sub(1) {
            let acts = &a.periods[t].activities;
            let key = (path[t], acts.iter().map(|v| v.to_bits()).collect());
            let q = build_transition_matrix(params, re.zeta, acts)?;
            let e = bins
                .entry(key)
                .or_insert_with(|| (0, vec![0.0; n], vec![0.0; n], vec![0.0; n]));
            e.0 += 1;
            e.1[path[t + 1]] += 1.0;
            for (to, &p) in q.row(path[t]).iter().enumerate() {
                e.2[to] += p;
                e.3[to] += p * (1.0 - p);
            }
        }
    }
    let mut max_deviation: f64 = 0.0;
    let mut max_z: f64 = 0.0;
    let mut n_transitions = 0;
    for (count, observed, expected, var) in bins.values() {
        n_transitions += count;
        let c = *count as f64;
        for to in 0..n {
            let dev = (observed[to] / c - expected[to] / c).abs();
            max_deviation = max_deviation.max(dev);
            let se = var[to].sqrt() / c;
            if se > 0.0 {
                max_z = max_z.max(dev / se);
            } else if dev > 0.0 {
                max_z = f64::INFINITY;
            }
        }
    }
    Ok(TransitionCheck {
        max_deviation,
        max_z,
        n_transitions,
        n_cells: bins.len(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hmm::ThresholdSet;

    pub(crate) fn three_state_config(seed: u64) -> SimConfig {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let mut params = CommonParams::zeros(&spec);
        params.thresholds =
            ThresholdSet::from_cutpoints(&[(None, Some(1.0)), (Some(-1.0), Some(2.0)), (Some(-0.5), None)]).unwrap();
        params.beta = vec![vec![0.8, 0.5], vec![0.6, 0.3], vec![0.4, -0.2]];
        params.rho = vec![vec![4.0, 0.3], vec![2.0, 0.2], vec![0.5, 0.1]];
        params.log_delta = vec![0.5, 1.0, 1.5];
        SimConfig {
            spec,
            params,
            sigma_theta: [[0.2, 0.05], [0.05, 0.1]],
            n_analysts: 40,
            horizon: 10,
            activity_names: vec!["n_written".into(), "n_viewed".into()],
            activity_process: ActivityProcess::Poisson { means: vec![1.0, 0.5] },
            covariate_process: CovariateProcess {
                columns: vec![("saved".into(), CovariateSampler::Bernoulli { p: 0.3 })],
            },
            queries_per_period: 2.0,
            seed,
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = simulate(&three_state_config(11)).unwrap();
        let b = simulate(&three_state_config(11)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&three_state_config(12)).unwrap();
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn paths_only_move_to_adjacent_states() {
        for seed in 0..5 {
            let out = simulate(&three_state_config(seed)).unwrap();
            for path in &out.true_states {
                assert!(path.windows(2).all(|w| w[0].abs_diff(w[1]) <= 1));
            }
            assert!(crate::panel::validate_panel(&out.panel).is_empty());
        }
    }

    #[test]
    fn analyst_output_does_not_depend_on_population_size() {
        let small = simulate(&three_state_config(3)).unwrap();
        let mut cfg = three_state_config(3);
        cfg.n_analysts = 60;
        let big = simulate(&cfg).unwrap();
        // ids are zero-padded to the same width for both sizes
        assert_eq!(small.panel.analysts[5], big.panel.analysts[5]);
        assert_eq!(small.true_states[5], big.true_states[5]);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let mut cfg = three_state_config(1);
        cfg.sigma_theta = [[0.0, 0.0], [0.0, 0.0]];
        assert!(matches!(simulate(&cfg), Err(Error::NotPositiveDefinite(_))));
        cfg.sigma_theta = [[1.0, 0.2], [0.1, 1.0]];
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn one_state_paths_are_constant() {
        let spec = ModelSpec::new(1, 2, 2).unwrap();
        let mut cfg = three_state_config(5);
        cfg.params = CommonParams::zeros(&spec);
        cfg.params.rho[0] = vec![1.0, 0.5];
        cfg.spec = spec;
        let out = simulate(&cfg).unwrap();
        assert!(out.true_states.iter().flatten().all(|&s| s == 0));
    }

    #[test]
    fn unreachable_thresholds_keep_everyone_in_the_lowest_state() {
        let mut cfg = three_state_config(9);
        cfg.spec = cfg.spec.clone().with_initial(vec![1.0, 0.0, 0.0]).unwrap();
        cfg.params.thresholds =
            ThresholdSet::from_cutpoints(&[(None, Some(50.0)), (Some(-50.0), Some(50.0)), (Some(-50.0), None)])
                .unwrap();
        cfg.activity_process = ActivityProcess::Design {
            levels: vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 0.0]],
        };
        cfg.n_analysts = 1000;
        cfg.horizon = 10;
        let out = simulate(&cfg).unwrap();
        assert!(out.true_states.iter().flatten().all(|&s| s == 0));
    }

    #[test]
    fn transition_check_needs_enough_data() {
        let cfg = three_state_config(2);
        let out = simulate(&cfg).unwrap();
        assert!(matches!(
            empirical_transition_check(&out, &cfg.params, &cfg.spec),
            Err(Error::InsufficientSample(_))
        ));
    }

    #[test]
    fn nb_sampler_mean_matches_exp_linear_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (log_mean, delta) = (2.0f64, 1.5f64);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_nb(&mut rng, log_mean, delta) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let mu = log_mean.exp();
        let var = mu + mu * mu / delta;
        let se = (var / n as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se, "mean {mean} vs {mu} (se {se})");
    }
}
