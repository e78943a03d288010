//! The `trace/1` file: one chain's retained draws as tab-separated columns.
//!
//! ```text
//! #format=trace/1
//! #meta={...json...}
//! iteration  log_lik  log_post  <Ψ names>  sigma_theta[1,1]  sigma_theta[1,2]  sigma_theta[2,2]  [zeta[id] eta[id] ...]
//! ```
//!
//! Tabs separate columns because parameter names contain commas. Floats use
//! the shortest representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampler::{AcceptanceRates, ChainTrace};
use super::summary::SIGMA_THETA_NAMES;
use super::{McmcConfig, PriorSpec};
use crate::error::{Error, Result};
use crate::hmm::{ModelSpec, RandomEffects};
use crate::provenance::Provenance;

pub const TRACE_FORMAT: &str = "trace/1";

/// Everything in a trace file apart from the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub provenance: Provenance,
    pub chain_index: usize,
    pub chain_seed: u64,
    pub spec: ModelSpec,
    pub covariate_names: Vec<String>,
    pub activity_names: Vec<String>,
    pub mcmc: McmcConfig,
    pub prior: PriorSpec,
    pub acceptance: AcceptanceRates,
    pub init_attempts: u32,
    pub analyst_ids: Vec<String>,
    pub theta_mean: Vec<RandomEffects>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub meta: TraceMeta,
    pub trace: ChainTrace,
}

pub fn render_trace(meta: &TraceMeta, trace: &ChainTrace) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "#format={TRACE_FORMAT}").unwrap();
    writeln!(out, "#meta={}", serde_json::to_string(meta)?).unwrap();
    let mut header: Vec<String> = vec!["iteration".into(), "log_lik".into(), "log_post".into()];
    header.extend(trace.psi_names.iter().cloned());
    header.extend(SIGMA_THETA_NAMES.iter().map(|s| s.to_string()));
    if trace.theta.is_some() {
        for id in &trace.analyst_ids {
            header.push(format!("zeta[{id}]"));
            header.push(format!("eta[{id}]"));
        }
    }
    if header.iter().any(|h| h.contains('\t') || h.contains('\n')) {
        return Err(Error::InvalidData(
            "column names may not contain tabs or newlines".into(),
        ));
    }
    out.push_str(&header.join("\t"));
    out.push('\n');
    for i in 0..trace.len() {
        write!(
            out,
            "{}\t{}\t{}",
            trace.iterations[i], trace.log_lik[i], trace.log_post[i]
        )
        .unwrap();
        for v in &trace.psi[i] {
            write!(out, "\t{v}").unwrap();
        }
        for v in &trace.sigma_theta[i] {
            write!(out, "\t{v}").unwrap();
        }
        if let Some(th) = &trace.theta {
            for re in &th[i] {
                write!(out, "\t{}\t{}", re.zeta, re.eta).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trace(path: &Path, meta: &TraceMeta, trace: &ChainTrace) -> Result<()> {
    std::fs::write(path, render_trace(meta, trace)?)?;
    Ok(())
}

fn bad(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedRow {
        file: path.to_path_buf(),
        line: line as u64,
        column: "-".into(),
        message: msg.into(),
    }
}

pub fn parse_trace(path: &Path, text: &str) -> Result<TraceFile> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let found = first.strip_prefix("#format=").unwrap_or("");
    if found != TRACE_FORMAT {
        return Err(Error::Version {
            expected: TRACE_FORMAT.into(),
            found: found.into(),
        });
    }
    let meta_line = lines.next().ok_or_else(|| bad(path, 2, "missing #meta line"))?;
    let meta: TraceMeta = serde_json::from_str(
        meta_line
            .strip_prefix("#meta=")
            .ok_or_else(|| bad(path, 2, "missing #meta line"))?,
    )?;
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad(path, 3, "missing header"))?
        .split('\t')
        .collect();
    let n_psi = meta.spec.n_psi();
    let fixed = 3 + n_psi + 3;
    if header.len() < fixed || header[..3] != ["iteration", "log_lik", "log_post"] {
        return Err(bad(path, 3, "unexpected header"));
    }
    let has_theta = header.len() > fixed;
    if has_theta && header.len() != fixed + 2 * meta.analyst_ids.len() {
        return Err(bad(path, 3, "random-effect columns do not match the analyst list"));
    }
    let mut trace = ChainTrace {
        chain_seed: meta.chain_seed,
        psi_names: header[3..3 + n_psi].iter().map(|s| s.to_string()).collect(),
        iterations: Vec::new(),
        psi: Vec::new(),
        sigma_theta: Vec::new(),
        log_lik: Vec::new(),
        log_post: Vec::new(),
        analyst_ids: meta.analyst_ids.clone(),
        theta_mean: meta.theta_mean.clone(),
        theta: has_theta.then(Vec::new),
        acceptance: meta.acceptance.clone(),
        init_attempts: meta.init_attempts,
        psi_adapt_at_freeze: None,
        psi_adapt_final: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let lineno = i + 4;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.len() {
            return Err(bad(
                path,
                lineno,
                format!("expected {} columns, found {}", header.len(), cells.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            cells[j].parse::<f64>().map_err(|_| Error::MalformedRow {
                file: path.to_path_buf(),
                line: lineno as u64,
                column: header[j].to_string(),
                message: format!("not a number: {:?}", cells[j]),
            })
        };
        trace.iterations.push(
            cells[0]
                .parse()
                .map_err(|_| bad(path, lineno, "bad iteration number"))?,
        );
        trace.log_lik.push(num(1)?);
        trace.log_post.push(num(2)?);
        trace.psi.push((3..3 + n_psi).map(num).collect::<Result<_>>()?);
        let s0 = 3 + n_psi;
        trace.sigma_theta.push([num(s0)?, num(s0 + 1)?, num(s0 + 2)?]);
        if let Some(th) = trace.theta.as_mut() {
            let row = (0..meta.analyst_ids.len())
                .map(|k| {
                    Ok(RandomEffects {
                        zeta: num(fixed + 2 * k)?,
                        eta: num(fixed + 2 * k + 1)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            th.push(row);
        }
    }
    Ok(TraceFile { meta, trace })
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::run_chain;
    use crate::simulate::simulate;
    use crate::simulate::tests::three_state_config;

    #[test]
    fn round_trips_exactly() {
        let cfg = three_state_config(2);
        let out = simulate(&cfg).unwrap();
        let mc = McmcConfig {
            n_iterations: 40,
            burn_in: 20,
            store_theta: true,
            ..McmcConfig::default()
        };
        let trace = run_chain(&out.panel, &cfg.spec, &PriorSpec::default(), &mc, 3).unwrap();
        let meta = TraceMeta {
            provenance: Provenance::new("abc", Some(3)),
            chain_index: 0,
            chain_seed: 3,
            spec: cfg.spec.clone(),
            covariate_names: out.panel.covariate_names.clone(),
            activity_names: out.panel.activity_names.clone(),
            mcmc: mc,
            prior: PriorSpec::default(),
            acceptance: trace.acceptance.clone(),
            init_attempts: trace.init_attempts,
            analyst_ids: trace.analyst_ids.clone(),
            theta_mean: trace.theta_mean.clone(),
        };
        let text = render_trace(&meta, &trace).unwrap();
        let back = parse_trace(Path::new("t.tsv"), &text).unwrap();
        assert_eq!(back.meta, meta);
        let mut expected = trace.clone();
        expected.psi_adapt_at_freeze = None;
        expected.psi_adapt_final = Vec::new();
        assert_eq!(back.trace, expected);
        assert_eq!(render_trace(&back.meta, &back.trace).unwrap(), text);
    }

    #[test]
    fn refuses_other_versions() {
        let err = parse_trace(Path::new("x"), "#format=trace/2\n").unwrap_err();
        assert!(matches!(err, Error::Version { .. }));
    }
}
