//! Plain-text run reports.

use std::fmt::Write as _;

use crate::baseline::ComparisonTable;
use crate::decode::{occupancy, StatePosterior};
use crate::mcmc::summary::{ParamSummary, PosteriorSummary, RelabelKind};
use crate::panel::PanelMetadata;

/// Reading of a state label after relabeling: state 1 has the highest
/// emission intercept (slowest), the last state the lowest.
pub fn state_name(state: usize, n_states: usize) -> String {
    match (state, n_states) {
        (_, 1) => "single".into(),
        (0, _) => "novice".into(),
        (s, n) if s + 1 == n => "advanced".into(),
        (1, 3) => "intermediate".into(),
        (s, _) => format!("state {}", s + 1),
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"))
}

fn param_row(out: &mut String, p: &ParamSummary) {
    let name = if p.significant {
        format!("**{}**", p.name)
    } else {
        p.name.clone()
    };
    let mut flag = if p.significant { "*" } else { "" }.to_string();
    if p.degenerate {
        flag.push_str(" (degenerate)");
    }
    writeln!(
        out,
        "| {} | {:.3} | {:.3} | {} | {} | {} |",
        name,
        p.mean,
        p.std,
        opt(p.hpd_lo, 3),
        opt(p.hpd_hi, 3),
        flag.trim()
    )
    .unwrap();
}

/// Optional inputs to [`render_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportContext<'a> {
    pub metadata: Option<&'a PanelMetadata>,
    pub comparison: Option<&'a ComparisonTable>,
    pub title: Option<&'a str>,
}

/// Markdown-style report: parameter table (rows whose 95% HPD excludes zero
/// are bold and starred), fit measures and comparison, R̂, acceptance rates
/// and per-period state occupancy from the decoded paths.
pub fn render_report(summary: &PosteriorSummary, posteriors: &[StatePosterior], ctx: &ReportContext) -> String {
    let mut out = String::new();
    let n = summary.spec.n_states;
    writeln!(out, "# {}\n", ctx.title.unwrap_or("Estimation results")).unwrap();
    let draws: usize = summary.draws_per_chain.iter().sum();
    writeln!(
        out,
        "{}-state model, {} chain(s), {} retained draws in total.\n",
        n, summary.n_chains, draws
    )
    .unwrap();
    if n > 1 {
        let names: Vec<String> = (0..n).map(|s| format!("{} = {}", s + 1, state_name(s, n))).collect();
        writeln!(
            out,
            "States (ordered by decreasing emission intercept): {}.\n",
            names.join(", ")
        )
        .unwrap();
    }
    if let Some(m) = ctx.metadata {
        writeln!(
            out,
            "Panel: period length {}, shift_by_one {}, winsorize cap {}, z-scored covariates {}.\n",
            m.period_length.as_deref().unwrap_or("unspecified"),
            m.shift_by_one,
            m.winsorize_cap.map_or("none".to_string(), |c| c.to_string()),
            if m.zscored.is_empty() {
                "none".to_string()
            } else {
                m.zscored.iter().map(|z| z.0.clone()).collect::<Vec<_>>().join(", ")
            }
        )
        .unwrap();
    }

    writeln!(out, "## Parameters\n").unwrap();
    writeln!(
        out,
        "| Parameter | Posterior mean | Posterior std | 95% HPD lo | 95% HPD hi | HPD excludes 0 |"
    )
    .unwrap();
    writeln!(out, "|---|---:|---:|---:|---:|:---:|").unwrap();
    for p in &summary.parameters {
        param_row(&mut out, p);
    }
    if !summary.derived.is_empty() {
        writeln!(out, "\nInterior up-thresholds on the raw scale:\n").unwrap();
        writeln!(
            out,
            "| Parameter | Posterior mean | Posterior std | 95% HPD lo | 95% HPD hi | HPD excludes 0 |"
        )
        .unwrap();
        writeln!(out, "|---|---:|---:|---:|---:|:---:|").unwrap();
        for p in &summary.derived {
            param_row(&mut out, p);
        }
    }

    if let Some(fit) = &summary.fit {
        writeln!(out, "\n## Fit\n").unwrap();
        writeln!(out, "| -2LL | AIC | BIC | k | n |").unwrap();
        writeln!(out, "|---:|---:|---:|---:|---:|").unwrap();
        writeln!(
            out,
            "| {:.1} | {:.1} | {:.1} | {} | {} |",
            fit.neg2_loglik, fit.aic, fit.bic, fit.k, fit.n
        )
        .unwrap();
        writeln!(out, "\n-2LL evaluated at the {}. {}.", fit.evaluated_at, fit.k_rule).unwrap();
    }
    if let Some(cmp) = ctx.comparison {
        writeln!(out, "\n## Model comparison\n\n```text\n{}```", cmp.to_text()).unwrap();
    }

    writeln!(out, "\n## Convergence\n").unwrap();
    writeln!(out, "| Parameter | R-hat |").unwrap();
    writeln!(out, "|---|---:|").unwrap();
    for p in &summary.parameters {
        writeln!(out, "| {} | {} |", p.name, opt(p.rhat, 3)).unwrap();
    }
    writeln!(
        out,
        "\n| Chain | Psi acceptance | Theta acceptance (mean / min / max) | Relabeling |"
    )
    .unwrap();
    writeln!(out, "|---:|---|---|---|").unwrap();
    for (c, (a, r)) in summary.acceptance.iter().zip(&summary.relabeling).enumerate() {
        let psi: Vec<String> = a.psi.iter().map(|v| format!("{v:.3}")).collect();
        let relabel = match r.kind {
            RelabelKind::Identity => "none".to_string(),
            RelabelKind::Reversal => format!("reversal {:?}", r.permutation.iter().map(|s| s + 1).collect::<Vec<_>>()),
            RelabelKind::Partial => format!(
                "partial {:?} (emission parameters only)",
                r.permutation.iter().map(|s| s + 1).collect::<Vec<_>>()
            ),
        };
        writeln!(
            out,
            "| {} | {} | {:.3} / {:.3} / {:.3} | {} |",
            c + 1,
            psi.join(", "),
            a.theta_mean,
            a.theta_min,
            a.theta_max,
            relabel
        )
        .unwrap();
    }

    if !posteriors.is_empty() {
        let occ = occupancy(posteriors, n);
        writeln!(out, "\n## State occupancy (decoded paths)\n").unwrap();
        let head: Vec<String> = (0..n).map(|s| format!("{} ({})", s + 1, state_name(s, n))).collect();
        writeln!(out, "| t | {} | total |", head.join(" | ")).unwrap();
        writeln!(out, "|---:|{}---:|", "---:|".repeat(n)).unwrap();
        for (t, row) in occ.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(
                out,
                "| {} | {} | {} |",
                t + 1,
                cells.join(" | "),
                row.iter().sum::<usize>()
            )
            .unwrap();
        }
    }
    out
}
