//! Subcommand implementations. Each reads its inputs, writes its outputs
//! under the output directory and prints a short summary to stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use learnhmm::baseline::{compare_models, fit_static, ModelFitEntry, StaticModelFit};
use learnhmm::decode::{average_posteriors, decode_panel, posteriors_csv, StatePosterior};
use learnhmm::hmm::{CommonParams, ModelSpec};
use learnhmm::mcmc::sampler::{chain_seed, run_chain, ChainTrace};
use learnhmm::mcmc::summary::{relabel_psi, summarize, PosteriorSummary};
use learnhmm::mcmc::trace_io::{read_trace, write_trace, TraceFile, TraceMeta};
use learnhmm::mcmc::McmcConfig;
use learnhmm::panel::{ingest_events, read_panel, validate_panel, write_panel, PanelData, PanelMetadata};
use learnhmm::provenance::Provenance;
use learnhmm::report::{render_report, ReportContext};
use learnhmm::simulate::{simulate as run_simulation, TruthFile};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SUMMARY_FORMAT: &str = "summary/1";
pub const BASELINE_FORMAT: &str = "baseline/1";
pub const POSTERIORS_FORMAT: &str = "posteriors/1";

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub format: String,
    pub provenance: Provenance,
    pub covariate_names: Vec<String>,
    pub activity_names: Vec<String>,
    pub metadata: PanelMetadata,
    pub summary: PosteriorSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineFile {
    pub format: String,
    pub provenance: Provenance,
    pub fit: StaticModelFit,
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::from(e).context(format!("creating {}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(learnhmm::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::from(e).context(path.display().to_string()))
}

/// Reads a JSON file after checking its `format` tag.
fn read_tagged<T: for<'de> Deserialize<'de>>(path: &Path, expected: &str) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if found != expected {
        return Err(CliError::config(format!(
            "{}: expected format `{expected}`, found `{found}`",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn panel_path(cfg: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.output.dir.join("panel.json"))
}

fn load_panel(path: &Path) -> CliResult<PanelData> {
    let file = read_panel(path).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
    let diags = validate_panel(&file.panel);
    if let Some(d) = diags.first() {
        return Err(CliError::data(format!(
            "{}: {} problem(s), first: {d}",
            path.display(),
            diags.len()
        )));
    }
    Ok(file.panel)
}

/// Restricts a panel to the configured model columns.
fn model_panel(cfg: &RunConfig, panel: &PanelData) -> CliResult<PanelData> {
    let cov = cfg
        .model
        .covariates
        .clone()
        .unwrap_or_else(|| panel.covariate_names.clone());
    let act = cfg
        .model
        .activities
        .clone()
        .unwrap_or_else(|| panel.activity_names.clone());
    Ok(panel.select(&cov, &act)?)
}

fn model_spec(cfg: &RunConfig, panel: &PanelData) -> CliResult<ModelSpec> {
    let mut spec = ModelSpec::for_panel(cfg.model.n_states, panel)?;
    if let Some(init) = &cfg.model.initial {
        spec = spec.with_initial(init.clone())?;
    }
    Ok(spec)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {workers} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn write_posteriors(path: &Path, posteriors: &[StatePosterior]) -> CliResult {
    let text = format!("#format={POSTERIORS_FORMAT}\n{}", posteriors_csv(posteriors));
    fs::write(path, text).map_err(|e| CliError::from(e).context(path.display().to_string()))
}

pub fn ingest(cfg: &RunConfig) -> CliResult {
    let (Some(q), Some(v)) = (&cfg.ingest.queries, &cfg.ingest.views) else {
        return Err(CliError::config("ingest needs both a queries and a views CSV"));
    };
    let panel = ingest_events(q, v, &cfg.ingest.ingest_config())?;
    let diags = validate_panel(&panel);
    for d in &diags {
        eprintln!("warning: {d}");
    }
    let dir = out_dir(cfg)?;
    let path = dir.join("panel.json");
    write_panel(&path, &panel, &Provenance::new(cfg.hash(), None))?;
    println!(
        "wrote {} ({} analysts, {} periods, {} queries)",
        path.display(),
        panel.n_analysts(),
        panel.horizon,
        panel.n_queries()
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult {
    let sim = cfg.sim_config()?;
    let out = run_simulation(&sim)?;
    let dir = out_dir(cfg)?;
    let prov = Provenance::new(cfg.hash(), Some(sim.seed));
    write_panel(&dir.join("panel.json"), &out.panel, &prov)?;
    write_json(&dir.join("truth.json"), &TruthFile::new(&sim, &out, prov))?;
    println!(
        "wrote {}/panel.json and truth.json ({} analysts, {} periods, {} queries)",
        dir.display(),
        out.panel.n_analysts(),
        out.panel.horizon,
        out.panel.n_queries()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, panel: Option<PathBuf>) -> CliResult {
    let full = load_panel(&panel_path(cfg, panel))?;
    let panel = model_panel(cfg, &full)?;
    let spec = model_spec(cfg, &panel)?;
    let dir = out_dir(cfg)?;
    let mc = &cfg.mcmc;
    let results = with_workers(mc.workers, || {
        use rayon::prelude::*;
        (0..mc.n_chains)
            .into_par_iter()
            .map(|c| run_chain(&panel, &spec, &cfg.prior, mc, chain_seed(mc.seed, c)))
            .collect::<Vec<_>>()
    })?;

    let mut traces: Vec<ChainTrace> = Vec::new();
    let mut first_err = None;
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(trace) => {
                let meta = TraceMeta {
                    provenance: Provenance::new(cfg.hash(), Some(trace.chain_seed)),
                    chain_index: c,
                    chain_seed: trace.chain_seed,
                    spec: spec.clone(),
                    covariate_names: panel.covariate_names.clone(),
                    activity_names: panel.activity_names.clone(),
                    mcmc: McmcConfig {
                        workers: 0,
                        ..mc.clone()
                    },
                    prior: cfg.prior.clone(),
                    acceptance: trace.acceptance.clone(),
                    init_attempts: trace.init_attempts,
                    analyst_ids: trace.analyst_ids.clone(),
                    theta_mean: trace.theta_mean.clone(),
                };
                write_trace(&dir.join(format!("trace_chain{c}.tsv")), &meta, &trace)?;
                traces.push(trace);
            }
            Err(e) => {
                eprintln!("chain {c} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if traces.is_empty() {
        return Err(first_err.expect("at least one chain").into());
    }

    let summary = summarize(&traces, &spec, Some(&panel))?;
    let file = SummaryFile {
        format: SUMMARY_FORMAT.into(),
        provenance: Provenance::new(cfg.hash(), Some(mc.seed)),
        covariate_names: panel.covariate_names.clone(),
        activity_names: panel.activity_names.clone(),
        metadata: panel.metadata.clone(),
        summary,
    };
    write_json(&dir.join("summary.json"), &file)?;

    let summary = &file.summary;
    let params = summary.posterior_mean_params()?;
    let posteriors = decode_panel(&spec, &params, &summary.theta_for(&panel), &panel)?;
    if cfg.output.posteriors_csv {
        write_posteriors(&dir.join("posteriors.csv"), &posteriors)?;
    }
    if cfg.output.report {
        let ctx = ReportContext {
            metadata: Some(&panel.metadata),
            ..ReportContext::default()
        };
        fs::write(dir.join("report.md"), render_report(summary, &posteriors, &ctx))?;
    }
    if let Some(fit) = &summary.fit {
        println!(
            "{}-state fit: -2LL {:.1}, AIC {:.1}, BIC {:.1} (k {}, n {})",
            spec.n_states, fit.neg2_loglik, fit.aic, fit.bic, fit.k, fit.n
        );
    }
    println!("wrote {} trace(s) and summary.json to {}", traces.len(), dir.display());
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn baseline(cfg: &RunConfig, panel: Option<PathBuf>) -> CliResult {
    let panel = load_panel(&panel_path(cfg, panel))?;
    let fit = fit_static(&panel, &cfg.baseline)?;
    let dir = out_dir(cfg)?;
    println!(
        "static fit: -2LL {:.1}, AIC {:.1}, BIC {:.1} (k {}, n {}){}",
        fit.neg2_loglik,
        fit.aic,
        fit.bic,
        fit.k,
        fit.n,
        if fit.converged { "" } else { ", NOT converged" }
    );
    write_json(
        &dir.join("baseline.json"),
        &BaselineFile {
            format: BASELINE_FORMAT.into(),
            provenance: Provenance::new(cfg.hash(), None),
            fit,
        },
    )
}

/// Reads a `summary/1` or `baseline/1` file as a comparison entry.
fn fit_entry(path: &Path) -> CliResult<ModelFitEntry> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(SUMMARY_FORMAT) => {
            let s: SummaryFile = read_tagged(path, SUMMARY_FORMAT)?;
            let fit = s
                .summary
                .fit
                .ok_or_else(|| CliError::data(format!("{}: summary has no fit measures", path.display())))?;
            Ok(ModelFitEntry {
                name: format!("{}-state HMM", s.summary.spec.n_states),
                neg2_loglik: fit.neg2_loglik,
                k: fit.k,
                n: fit.n,
            })
        }
        Some(BASELINE_FORMAT) => {
            let b: BaselineFile = read_tagged(path, BASELINE_FORMAT)?;
            Ok(ModelFitEntry {
                name: "static NB".into(),
                neg2_loglik: b.fit.neg2_loglik,
                k: b.fit.k,
                n: b.fit.n,
            })
        }
        other => Err(CliError::config(format!(
            "{}: expected a `{SUMMARY_FORMAT}` or `{BASELINE_FORMAT}` file, found format {:?}",
            path.display(),
            other.unwrap_or("")
        ))),
    }
}

pub fn compare(cfg: &RunConfig, files: &[PathBuf]) -> CliResult {
    if files.len() < 2 {
        return Err(CliError::config(format!(
            "compare needs at least two fit files, got {}",
            files.len()
        )));
    }
    let mut entries = files.iter().map(|f| fit_entry(f)).collect::<CliResult<Vec<_>>>()?;
    // Same-named models are told apart by their file.
    for i in 0..entries.len() {
        if entries.iter().filter(|e| e.name == entries[i].name).count() > 1 {
            entries[i].name = format!("{} ({})", entries[i].name, files[i].display());
        }
    }
    let table = compare_models(&entries)?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("compare.csv"), table.to_csv())?;
    fs::write(dir.join("compare.txt"), table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn read_traces(paths: &[PathBuf]) -> CliResult<Vec<TraceFile>> {
    let files = paths
        .iter()
        .map(|p| read_trace(p).map_err(|e| CliError::from(e).context(p.display().to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(first) = files.first() {
        if let Some(bad) = files.iter().find(|f| f.meta.spec != first.meta.spec) {
            return Err(CliError::data(format!(
                "trace for chain {} has a different model than chain {}",
                bad.meta.chain_index, first.meta.chain_index
            )));
        }
    }
    Ok(files)
}

pub fn decode(
    cfg: &RunConfig,
    panel: Option<PathBuf>,
    summary: Option<PathBuf>,
    per_draw: Option<usize>,
    traces: &[PathBuf],
) -> CliResult {
    let summary_path = summary.unwrap_or_else(|| cfg.output.dir.join("summary.json"));
    let s: SummaryFile = read_tagged(&summary_path, SUMMARY_FORMAT)?;
    let full = load_panel(&panel_path(cfg, panel))?;
    let panel = full.select(&s.covariate_names, &s.activity_names)?;
    let spec = &s.summary.spec;
    let theta = s.summary.theta_for(&panel);

    let posteriors = match per_draw {
        None | Some(0) => decode_panel(spec, &s.summary.posterior_mean_params()?, &theta, &panel)?,
        Some(m) => {
            let files = read_traces(traces)?;
            let mut draws = Vec::new();
            for f in &files {
                let relabel = s.summary.relabeling.get(f.meta.chain_index).ok_or_else(|| {
                    CliError::data(format!("summary has no relabeling for chain {}", f.meta.chain_index))
                })?;
                let n = f.trace.len();
                for row in &f.trace.psi[n.saturating_sub(m)..] {
                    let params = CommonParams::from_vec(spec, &relabel_psi(spec, row, relabel))?;
                    draws.push(decode_panel(spec, &params, &theta, &panel)?);
                }
            }
            average_posteriors(&draws)?
        }
    };
    let dir = out_dir(cfg)?;
    let path = dir.join("posteriors.csv");
    write_posteriors(&path, &posteriors)?;
    println!("wrote {} ({} analysts)", path.display(), posteriors.len());
    Ok(())
}

/// Convergence table plus acceptance and relabeling per chain.
pub fn render_diagnostics(summary: &PosteriorSummary) -> String {
    let mut out = String::from("# Convergence diagnostics\n\n");
    writeln!(
        out,
        "Chains: {}, draws per chain: {:?}\n",
        summary.n_chains, summary.draws_per_chain
    )
    .unwrap();
    out.push_str("| Parameter | R-hat | mean | sd |\n|---|---|---|---|\n");
    let mut worst: Option<f64> = None;
    for p in &summary.parameters {
        let r = p.rhat.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        if let Some(v) = p.rhat {
            worst = Some(worst.map_or(v, |w: f64| w.max(v)));
        }
        writeln!(out, "| {} | {} | {:.4} | {:.4} |", p.name, r, p.mean, p.std).unwrap();
    }
    match worst {
        Some(w) => writeln!(
            out,
            "\nMax R-hat: {w:.3}{}",
            if w < 1.1 { "" } else { " (not converged)" }
        )
        .unwrap(),
        None => out.push_str("\nR-hat needs at least two chains of equal length with 10 or more draws.\n"),
    }
    out.push_str("\n| Chain | Psi acceptance | Theta acceptance (mean, min, max) | Relabeling |\n|---|---|---|---|\n");
    for (c, (a, r)) in summary.acceptance.iter().zip(&summary.relabeling).enumerate() {
        let psi: Vec<String> = a.psi.iter().map(|v| format!("{v:.3}")).collect();
        writeln!(
            out,
            "| {} | {} | {:.3}, {:.3}, {:.3} | {:?} {:?} |",
            c,
            psi.join(" "),
            a.theta_mean,
            a.theta_min,
            a.theta_max,
            r.kind,
            r.permutation
        )
        .unwrap();
    }
    out
}

pub fn diagnose(cfg: &RunConfig, paths: &[PathBuf]) -> CliResult {
    let files = read_traces(paths)?;
    let spec = files[0].meta.spec.clone();
    let traces: Vec<ChainTrace> = files.into_iter().map(|f| f.trace).collect();
    let summary = summarize(&traces, &spec, None)?;
    let text = render_diagnostics(&summary);
    let dir = out_dir(cfg)?;
    fs::write(dir.join("diagnose.md"), &text)?;
    print!("{text}");
    Ok(())
}
