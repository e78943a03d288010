//! The run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use learnhmm::baseline::StaticDesign;
use learnhmm::hmm::{CommonParams, ModelSpec, ThresholdSet};
use learnhmm::mcmc::{McmcConfig, PriorSpec};
use learnhmm::panel::{IngestConfig, PeriodLength, DEFAULT_ACTIVITIES};
use learnhmm::provenance::content_hash;
use learnhmm::simulate::{ActivityProcess, CovariateProcess, SimConfig};

use crate::error::CliError;

pub const SMALL: &str = include_str!("../configs/small.toml");
pub const PAPER_SCALE: &str = include_str!("../configs/paper-scale.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ingest: IngestSection,
    pub model: ModelSection,
    pub sim: SimSection,
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
    pub baseline: StaticDesign,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub queries: Option<PathBuf>,
    pub views: Option<PathBuf>,
    pub period_length: PeriodLength,
    pub horizon: Option<usize>,
    pub shift_by_one: bool,
    pub winsorize_cap: Option<i64>,
    pub zscore_covariates: bool,
}

impl IngestSection {
    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            period_length: self.period_length,
            horizon: self.horizon,
            shift_by_one: self.shift_by_one,
            winsorize_cap: self.winsorize_cap,
            zscore_covariates: self.zscore_covariates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_states: usize,
    /// Covariate columns used by the model; all panel covariates when unset.
    pub covariates: Option<Vec<String>>,
    /// Activity columns used by the model; all panel activities when unset.
    pub activities: Option<Vec<String>>,
    /// Initial state distribution; uniform when unset.
    pub initial: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_states: 3,
            covariates: None,
            activities: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_analysts: usize,
    pub horizon: usize,
    pub queries_per_period: f64,
    pub seed: u64,
    /// Poisson means of (n_written, n_viewed).
    pub activity_means: Vec<f64>,
    /// Finite activity design drawn uniformly; replaces the Poisson means.
    pub activity_design: Option<Vec<Vec<f64>>>,
    /// Subset of the standard covariates to simulate, after the constant.
    pub covariates: Vec<String>,
    pub sigma_theta: [[f64; 2]; 2],
    /// True common parameters in storage order; a built-in set when unset.
    pub psi: Option<Vec<f64>>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_analysts: 50,
            horizon: 12,
            queries_per_period: 3.0,
            seed: 1,
            activity_means: vec![0.782, 0.306],
            activity_design: None,
            covariates: CovariateProcess::standard().columns.into_iter().map(|c| c.0).collect(),
            sigma_theta: [[0.3, 0.0], [0.0, 0.2]],
            psi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write the markdown report next to machine-readable outputs.
    pub report: bool,
    /// Write smoothed state probabilities as CSV when decoding.
    pub posteriors_csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            report: true,
            posteriors_csv: true,
        }
    }
}

/// Every configuration key with its default, as listed by `--help`.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("ingest.queries", "unset", "queries CSV path"),
    ("ingest.views", "unset", "views CSV path"),
    ("ingest.period_length", "\"1mo\"", "period length: <n>mo, <n>d or <n>s"),
    ("ingest.horizon", "unset", "number of periods (inferred when unset)"),
    ("ingest.shift_by_one", "false", "subtract 1 from every completion time"),
    ("ingest.winsorize_cap", "unset", "cap completion times at this value"),
    (
        "ingest.zscore_covariates",
        "false",
        "standardize non-constant covariates",
    ),
    ("model.n_states", "3", "number of latent states"),
    ("model.covariates", "unset", "covariate columns (all when unset)"),
    ("model.activities", "unset", "activity columns (all when unset)"),
    (
        "model.initial",
        "unset",
        "initial state distribution (uniform when unset)",
    ),
    ("sim.n_analysts", "50", "simulated analysts"),
    ("sim.horizon", "12", "simulated periods"),
    ("sim.queries_per_period", "3.0", "Poisson mean of queries per period"),
    ("sim.seed", "1", "simulation seed"),
    (
        "sim.activity_means",
        "[0.782, 0.306]",
        "Poisson means of the activities",
    ),
    (
        "sim.activity_design",
        "unset",
        "finite activity design, replaces the means",
    ),
    (
        "sim.covariates",
        "all standard",
        "simulated covariates after the constant",
    ),
    (
        "sim.sigma_theta",
        "[[0.3, 0.0], [0.0, 0.2]]",
        "random-effect covariance",
    ),
    ("sim.psi", "built-in", "true common parameters in storage order"),
    ("mcmc.n_iterations", "100000", "iterations per chain"),
    ("mcmc.burn_in", "85000", "discarded iterations"),
    ("mcmc.n_chains", "2", "independent chains"),
    ("mcmc.thinning", "1", "keep every n-th post-burn-in draw"),
    ("mcmc.target_acceptance", "0.234", "adaptation target"),
    ("mcmc.adapt_exponent", "0.6", "Robbins-Monro step decay"),
    ("mcmc.freeze_at", "burn_in", "iteration where adaptation stops"),
    ("mcmc.seed", "1", "root seed for the chains"),
    (
        "mcmc.psi_blocking",
        "\"joint\"",
        "\"joint\", \"grouped\" or \"by_state\" common-parameter updates",
    ),
    (
        "mcmc.psi_initial_sd",
        "0.1",
        "initial proposal sd for common parameters",
    ),
    ("mcmc.theta_initial_sd", "0.3", "initial proposal sd for random effects"),
    ("mcmc.store_theta", "false", "keep random-effect draws in traces"),
    ("mcmc.workers", "0", "worker threads (0 = all cores)"),
    (
        "mcmc.init",
        "\"data\"",
        "\"data\" (moment-based) or \"prior\" starting values",
    ),
    ("mcmc.shift_moves", "true", "Gibbs moves along the location ridges"),
    ("prior.psi_variance", "30.0", "prior variance of common parameters"),
    (
        "prior.sigma_theta_extra_dof",
        "5.0",
        "added to N_theta + N_ind for the IW dof",
    ),
    ("baseline.covariates", "unset", "baseline covariates (all when unset)"),
    (
        "baseline.activities",
        "unset",
        "contemporaneous activities (all when unset)",
    ),
    ("baseline.max_iterations", "500", "quasi-Newton iteration limit"),
    (
        "baseline.gradient_tolerance",
        "1e-6",
        "gradient max-norm at convergence",
    ),
    ("output.dir", "\"out\"", "output directory"),
    ("output.report", "true", "write markdown reports"),
    ("output.posteriors_csv", "true", "write decoded state probabilities"),
];

pub fn config_help() -> String {
    let w = CONFIG_KEYS.iter().map(|k| k.0.len()).max().unwrap_or(0);
    let d = CONFIG_KEYS.iter().map(|k| k.1.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (TOML; unknown keys are rejected; flags override the file):\n");
    for (key, default, help) in CONFIG_KEYS {
        out.push_str(&format!("  {key:<w$}  {default:<d$}  {help}\n"));
    }
    out.push_str("\nBundled configs: --config small, --config paper-scale (long-running).\n");
    out.push_str("Exit codes: 0 ok, 2 config or usage, 3 data, 4 numerical.");
    out
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::config(format!("{origin}: {}", e.message())))?;
        cfg.mcmc.validate()?;
        cfg.prior.validate()?;
        Ok(cfg)
    }

    /// Loads a file, or one of the bundled configs by name.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        if !path.exists() {
            match path.to_str() {
                Some("small") => return RunConfig::parse(SMALL, "small"),
                Some("paper-scale") => return RunConfig::parse(PAPER_SCALE, "paper-scale"),
                _ => {}
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// Hash of the effective configuration, recorded in every output. The
    /// worker count does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.mcmc.workers = 0;
        content_hash(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

/// Default true parameters for a simulated panel.
pub fn default_sim_params(spec: &ModelSpec, covariates: &[String]) -> CommonParams {
    let n = spec.n_states;
    let mut p = CommonParams::zeros(spec);
    let cuts: Vec<(Option<f64>, Option<f64>)> = (0..n)
        .map(|s| {
            let down = (s > 0).then_some(if s + 1 == n { -2.0 } else { -2.5 });
            let up = (s + 1 < n).then_some(if s == 0 { 1.5 } else { 2.0 });
            (down, up)
        })
        .collect();
    p.thresholds = ThresholdSet::from_cutpoints(&cuts).expect("ordered cut points");
    for b in p.beta.iter_mut() {
        b.iter_mut().for_each(|v| *v = 0.5);
    }
    for (s, rho) in p.rho.iter_mut().enumerate() {
        rho[0] = if n == 1 {
            4.0
        } else {
            5.0 - 3.0 * s as f64 / (n - 1) as f64
        };
        for (j, name) in covariates.iter().enumerate().skip(1) {
            rho[j] = match name.as_str() {
                "workload" => 0.1,
                "tenure_months" => -0.01,
                "migrated" => 0.2,
                "saved" => -0.2,
                "query_size" => 0.05,
                _ => 0.0,
            };
        }
    }
    p.log_delta = (0..n).map(|s| 0.5 + 0.5 * s as f64).collect();
    p
}

impl RunConfig {
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let standard = CovariateProcess::standard();
        let columns = self
            .sim
            .covariates
            .iter()
            .map(|name| {
                standard
                    .columns
                    .iter()
                    .find(|c| &c.0 == name)
                    .cloned()
                    .ok_or_else(|| CliError::config(format!("sim.covariates: unknown covariate `{name}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let covariate_process = CovariateProcess { columns };
        let n_cov = 1 + covariate_process.columns.len();
        let mut spec = ModelSpec::new(self.model.n_states, DEFAULT_ACTIVITIES.len(), n_cov)?;
        if let Some(init) = &self.model.initial {
            spec = spec.with_initial(init.clone())?;
        }
        let names: Vec<String> = std::iter::once("constant".to_string())
            .chain(covariate_process.columns.iter().map(|c| c.0.clone()))
            .collect();
        let params = match &self.sim.psi {
            Some(v) => CommonParams::from_vec(&spec, v)?,
            None => default_sim_params(&spec, &names),
        };
        let activity_process = match &self.sim.activity_design {
            Some(levels) => ActivityProcess::Design { levels: levels.clone() },
            None => ActivityProcess::Poisson {
                means: self.sim.activity_means.clone(),
            },
        };
        let cfg = SimConfig {
            spec,
            params,
            sigma_theta: self.sim.sigma_theta,
            n_analysts: self.sim.n_analysts,
            horizon: self.sim.horizon,
            activity_names: DEFAULT_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
            activity_process,
            covariate_process,
            queries_per_period: self.sim.queries_per_period,
            seed: self.sim.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_keys(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, child) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    if prefix.is_empty() {
                        leaf_keys(&key, child, out);
                    } else {
                        out.push(key);
                    }
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }

    #[test]
    fn help_lists_every_key() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        let mut keys = Vec::new();
        leaf_keys("", &v, &mut keys);
        let listed: Vec<&str> = CONFIG_KEYS.iter().map(|k| k.0).collect();
        for k in &keys {
            assert!(listed.contains(&k.as_str()), "{k} missing from CONFIG_KEYS");
        }
        assert_eq!(keys.len(), listed.len());
    }

    #[test]
    fn bundled_configs_parse() {
        let small = RunConfig::parse(SMALL, "small").unwrap();
        assert_eq!(small.sim.n_analysts, 50);
        let big = RunConfig::parse(PAPER_SCALE, "paper-scale").unwrap();
        assert_eq!((big.mcmc.n_iterations, big.mcmc.burn_in), (100_000, 85_000));
        small.sim_config().unwrap();
        big.sim_config().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::parse("[sim]\nanalysts = 3\n", "x").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
