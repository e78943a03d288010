//! Panel construction: raw event logs to per-analyst, per-period observations.
//!
//! The panel is the only data structure the model and the samplers consume.
//! Every analyst carries exactly `horizon` periods, in order; periods without
//! authored queries are kept with an empty query list so that a transition
//! still fires between every pair of consecutive periods.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::Provenance;

pub const PANEL_FORMAT: &str = "panel/1";

/// Covariate columns produced by [`ingest_events`], in order.
pub const DEFAULT_COVARIATES: [&str; 6] = [
    "constant",
    "workload",
    "tenure_months",
    "migrated",
    "saved",
    "query_size",
];

/// Learning-activity columns produced by [`ingest_events`], in order.
pub const DEFAULT_ACTIVITIES: [&str; 2] = ["n_written", "n_viewed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryObservation {
    pub query_id: String,
    /// Seconds between creation and first execution.
    pub completion_time: i64,
    /// Fixed-order covariate vector; the first entry is the constant 1.0.
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodObservation {
    /// One-based period index.
    pub period_index: usize,
    pub queries: Vec<QueryObservation>,
    pub activities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalystPanel {
    pub analyst_id: String,
    pub periods: Vec<PeriodObservation>,
}

impl AnalystPanel {
    pub fn n_queries(&self) -> usize {
        self.periods.iter().map(|p| p.queries.len()).sum()
    }
}

/// How covariates were transformed at ingestion, kept so coefficients stay
/// interpretable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    #[serde(default)]
    pub period_length: Option<String>,
    /// Unix time of the first period's anchor, when built from event logs.
    #[serde(default)]
    pub origin: Option<i64>,
    #[serde(default)]
    pub shift_by_one: bool,
    #[serde(default)]
    pub winsorize_cap: Option<i64>,
    /// `(name, mean, sd)` for every z-scored covariate.
    #[serde(default)]
    pub zscored: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    pub horizon: usize,
    pub covariate_names: Vec<String>,
    pub activity_names: Vec<String>,
    pub analysts: Vec<AnalystPanel>,
    #[serde(default)]
    pub metadata: PanelMetadata,
}

impl PanelData {
    pub fn n_analysts(&self) -> usize {
        self.analysts.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_activities(&self) -> usize {
        self.activity_names.len()
    }

    pub fn n_queries(&self) -> usize {
        self.analysts.iter().map(AnalystPanel::n_queries).sum()
    }

    /// Returns a panel restricted to the named covariate and activity columns,
    /// in the order given. The first covariate must be `constant`.
    pub fn select(&self, covariates: &[String], activities: &[String]) -> Result<PanelData> {
        if covariates.first().map(String::as_str) != Some("constant") {
            return Err(Error::Config("covariate selection must start with `constant`".into()));
        }
        let find = |names: &[String], wanted: &[String], kind: &str| -> Result<Vec<usize>> {
            wanted
                .iter()
                .map(|w| {
                    names
                        .iter()
                        .position(|n| n == w)
                        .ok_or_else(|| Error::Config(format!("unknown {kind} column `{w}`")))
                })
                .collect()
        };
        let cov_idx = find(&self.covariate_names, covariates, "covariate")?;
        let act_idx = find(&self.activity_names, activities, "activity")?;
        let analysts = self
            .analysts
            .iter()
            .map(|a| AnalystPanel {
                analyst_id: a.analyst_id.clone(),
                periods: a
                    .periods
                    .iter()
                    .map(|p| PeriodObservation {
                        period_index: p.period_index,
                        activities: act_idx.iter().map(|&j| p.activities[j]).collect(),
                        queries: p
                            .queries
                            .iter()
                            .map(|q| QueryObservation {
                                query_id: q.query_id.clone(),
                                completion_time: q.completion_time,
                                covariates: cov_idx.iter().map(|&j| q.covariates[j]).collect(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Ok(PanelData {
            horizon: self.horizon,
            covariate_names: covariates.to_vec(),
            activity_names: activities.to_vec(),
            analysts,
            metadata: self.metadata.clone(),
        })
    }

    /// Panel with the analysts sorted by id, the canonical summation order.
    pub fn sorted(mut self) -> PanelData {
        self.analysts.sort_by(|a, b| a.analyst_id.cmp(&b.analyst_id));
        self
    }
}

/// On-disk envelope for a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFile {
    pub format: String,
    pub provenance: Provenance,
    pub panel: PanelData,
}

pub fn write_panel(path: &Path, panel: &PanelData, provenance: &Provenance) -> Result<()> {
    let file = PanelFile {
        format: PANEL_FORMAT.to_string(),
        provenance: provenance.clone(),
        panel: panel.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_panel(path: &Path) -> Result<PanelFile> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if found != PANEL_FORMAT {
        return Err(Error::Version {
            expected: PANEL_FORMAT.into(),
            found: found.into(),
        });
    }
    Ok(serde_json::from_value(value)?)
}

// ---------------------------------------------------------------------------
// Ingestion

/// Length of one panel period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodLength {
    /// Calendar months, anchored at the month of the earliest event.
    Months(u32),
    Days(u32),
    Seconds(u64),
}

impl Default for PeriodLength {
    fn default() -> Self {
        PeriodLength::Months(1)
    }
}

impl fmt::Display for PeriodLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeriodLength::Months(n) => write!(f, "{n}mo"),
            PeriodLength::Days(n) => write!(f, "{n}d"),
            PeriodLength::Seconds(n) => write!(f, "{n}s"),
        }
    }
}

impl FromStr for PeriodLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let n: u64 = num
            .parse()
            .map_err(|_| Error::Config(format!("invalid period length `{s}`")))?;
        if n == 0 {
            return Err(Error::Config("period length must be positive".into()));
        }
        let small = |n: u64| u32::try_from(n).map_err(|_| Error::Config(format!("period length `{s}` too large")));
        match unit {
            "mo" | "month" | "months" => Ok(PeriodLength::Months(small(n)?)),
            "d" | "day" | "days" => Ok(PeriodLength::Days(small(n)?)),
            "s" | "sec" | "seconds" => Ok(PeriodLength::Seconds(n)),
            _ => Err(Error::Config(format!(
                "invalid period length unit in `{s}` (use mo, d or s)"
            ))),
        }
    }
}

impl Serialize for PeriodLength {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PeriodLength {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub period_length: PeriodLength,
    /// Number of periods; inferred from the latest event when unset.
    pub horizon: Option<usize>,
    /// Subtract one second from every completion time.
    pub shift_by_one: bool,
    /// Cap completion times at this value.
    pub winsorize_cap: Option<i64>,
    /// Standardize non-constant covariates to mean 0, sd 1.
    pub zscore_covariates: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            period_length: PeriodLength::Months(1),
            horizon: None,
            shift_by_one: false,
            winsorize_cap: None,
            zscore_covariates: false,
        }
    }
}

/// Parses a UTC epoch-seconds integer or an RFC 3339 timestamp.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

fn period_of(ts: i64, origin: i64, len: PeriodLength) -> usize {
    match len {
        PeriodLength::Seconds(n) => ((ts - origin) as u64 / n) as usize + 1,
        PeriodLength::Days(n) => ((ts - origin) as u64 / (86_400 * n as u64)) as usize + 1,
        PeriodLength::Months(n) => {
            let month_index = |t: i64| {
                let d = Utc.timestamp_opt(t, 0).single().expect("timestamp in range");
                d.year() as i64 * 12 + d.month0() as i64
            };
            ((month_index(ts) - month_index(origin)) as u64 / n as u64) as usize + 1
        }
    }
}

struct RawQuery {
    analyst_id: String,
    query_id: String,
    created: i64,
    first_exec: i64,
    workload: f64,
    query_size: f64,
    saved: f64,
    migrated: f64,
    tenure: f64,
}

struct RawView {
    analyst_id: String,
    viewed_query_id: String,
    ts: i64,
}

struct CsvTable {
    path: std::path::PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl CsvTable {
    fn read(path: &Path, required: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Csv {
                file: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv {
                file: path.to_path_buf(),
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        for r in required {
            if !headers.iter().any(|h| h == r) {
                return Err(Error::MalformedRow {
                    file: path.to_path_buf(),
                    line: 1,
                    column: r.to_string(),
                    message: "missing header".into(),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::MalformedRow {
                    file: path.to_path_buf(),
                    line,
                    column: String::new(),
                    message: e.to_string(),
                }
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(CsvTable {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn field<'a>(&self, rec: &'a csv::StringRecord, line: u64, col: &str) -> Result<&'a str> {
        let idx = self.headers.iter().position(|h| h == col).expect("checked");
        rec.get(idx).ok_or_else(|| self.bad(line, col, "missing field"))
    }

    fn bad(&self, line: u64, col: &str, message: &str) -> Error {
        Error::MalformedRow {
            file: self.path.clone(),
            line,
            column: col.to_string(),
            message: message.to_string(),
        }
    }

    fn timestamp(&self, rec: &csv::StringRecord, line: u64, col: &str) -> Result<i64> {
        let s = self.field(rec, line, col)?;
        parse_timestamp(s).ok_or_else(|| self.bad(line, col, &format!("invalid timestamp `{s}`")))
    }

    fn number(&self, rec: &csv::StringRecord, line: u64, col: &str) -> Result<f64> {
        let s = self.field(rec, line, col)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.bad(line, col, &format!("invalid number `{s}`"))),
        }
    }

    fn flag(&self, rec: &csv::StringRecord, line: u64, col: &str) -> Result<f64> {
        match self.field(rec, line, col)?.to_ascii_lowercase().as_str() {
            "0" | "false" => Ok(0.0),
            "1" | "true" => Ok(1.0),
            other => Err(self.bad(line, col, &format!("expected 0/1, got `{other}`"))),
        }
    }
}

const QUERY_COLUMNS: [&str; 9] = [
    "analyst_id",
    "query_id",
    "created_ts",
    "first_exec_ts",
    "workload",
    "query_size",
    "saved",
    "migrated",
    "tenure_months",
];
const VIEW_COLUMNS: [&str; 3] = ["analyst_id", "viewed_query_id", "view_ts"];

fn read_queries(path: &Path) -> Result<Vec<RawQuery>> {
    let table = CsvTable::read(path, &QUERY_COLUMNS)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let q = RawQuery {
            analyst_id: table.field(rec, line, "analyst_id")?.to_string(),
            query_id: table.field(rec, line, "query_id")?.to_string(),
            created: table.timestamp(rec, line, "created_ts")?,
            first_exec: table.timestamp(rec, line, "first_exec_ts")?,
            workload: table.number(rec, line, "workload")?,
            query_size: table.number(rec, line, "query_size")?,
            saved: table.flag(rec, line, "saved")?,
            migrated: table.flag(rec, line, "migrated")?,
            tenure: table.number(rec, line, "tenure_months")?,
        };
        if q.analyst_id.is_empty() {
            return Err(table.bad(line, "analyst_id", "empty analyst id"));
        }
        if q.workload < 1.0 {
            return Err(table.bad(line, "workload", "workload must be >= 1"));
        }
        if q.query_size < 1.0 {
            return Err(table.bad(line, "query_size", "query size must be >= 1"));
        }
        if q.tenure < 0.0 {
            return Err(table.bad(line, "tenure_months", "tenure must be >= 0"));
        }
        out.push(q);
    }
    Ok(out)
}

fn read_views(path: &Path) -> Result<Vec<RawView>> {
    let table = CsvTable::read(path, &VIEW_COLUMNS)?;
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(RawView {
                analyst_id: table.field(rec, *line, "analyst_id")?.to_string(),
                viewed_query_id: table.field(rec, *line, "viewed_query_id")?.to_string(),
                ts: table.timestamp(rec, *line, "view_ts")?,
            })
        })
        .collect()
}

/// Builds a panel from a query log and a view log.
///
/// Queries are assigned to the period of their creation time. Views of the
/// viewer's own queries are not counted as peer views. Analysts without any
/// authored query are dropped.
pub fn ingest_events(queries_csv: &Path, views_csv: &Path, config: &IngestConfig) -> Result<PanelData> {
    let queries = read_queries(queries_csv)?;
    let views = read_views(views_csv)?;
    build_panel(queries, views, config)
}

fn build_panel(queries: Vec<RawQuery>, views: Vec<RawView>, config: &IngestConfig) -> Result<PanelData> {
    if queries.is_empty() {
        return Err(Error::InvalidData("query log contains no rows".into()));
    }

    let mut bad: Vec<String> = queries
        .iter()
        .filter(|q| q.first_exec < q.created)
        .map(|q| q.query_id.clone())
        .collect();
    if !bad.is_empty() {
        bad.sort();
        return Err(Error::NegativeCompletion(bad));
    }

    let mut authored: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for q in &queries {
        if !authored
            .entry(q.analyst_id.as_str())
            .or_default()
            .insert(q.query_id.as_str())
        {
            return Err(Error::DuplicateQuery {
                analyst_id: q.analyst_id.clone(),
                query_id: q.query_id.clone(),
            });
        }
    }

    let origin = queries
        .iter()
        .map(|q| q.created)
        .chain(views.iter().map(|v| v.ts))
        .min()
        .expect("non-empty");
    let peer_views: Vec<&RawView> = views
        .iter()
        .filter(|v| authored.contains_key(v.analyst_id.as_str()))
        .filter(|v| !authored[v.analyst_id.as_str()].contains(v.viewed_query_id.as_str()))
        .collect();

    let latest = queries
        .iter()
        .map(|q| period_of(q.created, origin, config.period_length))
        .chain(peer_views.iter().map(|v| period_of(v.ts, origin, config.period_length)))
        .max()
        .expect("non-empty");
    let horizon = config.horizon.unwrap_or(latest);
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if latest > horizon {
        return Err(Error::InvalidData(format!(
            "events fall in period {latest}, beyond the configured horizon {horizon}"
        )));
    }

    let mut panels: BTreeMap<&str, AnalystPanel> = authored
        .keys()
        .map(|&id| {
            (
                id,
                AnalystPanel {
                    analyst_id: id.to_string(),
                    periods: (1..=horizon)
                        .map(|t| PeriodObservation {
                            period_index: t,
                            queries: Vec::new(),
                            activities: vec![0.0; DEFAULT_ACTIVITIES.len()],
                        })
                        .collect(),
                },
            )
        })
        .collect();

    let mut sorted: Vec<&RawQuery> = queries.iter().collect();
    sorted.sort_by(|a, b| {
        (a.analyst_id.as_str(), a.created, a.query_id.as_str()).cmp(&(
            b.analyst_id.as_str(),
            b.created,
            b.query_id.as_str(),
        ))
    });
    for q in sorted {
        let t = period_of(q.created, origin, config.period_length);
        let mut completion = q.first_exec - q.created;
        if let Some(cap) = config.winsorize_cap {
            completion = completion.min(cap);
        }
        if config.shift_by_one {
            if completion < 1 {
                return Err(Error::InvalidData(format!(
                    "query `{}` has completion time 0, cannot shift by one",
                    q.query_id
                )));
            }
            completion -= 1;
        }
        let period = &mut panels.get_mut(q.analyst_id.as_str()).expect("authored").periods[t - 1];
        period.activities[0] += 1.0;
        period.queries.push(QueryObservation {
            query_id: q.query_id.clone(),
            completion_time: completion,
            covariates: vec![1.0, q.workload, q.tenure, q.migrated, q.saved, q.query_size],
        });
    }
    for v in peer_views {
        let t = period_of(v.ts, origin, config.period_length);
        panels.get_mut(v.analyst_id.as_str()).expect("authored").periods[t - 1].activities[1] += 1.0;
    }

    let mut panel = PanelData {
        horizon,
        covariate_names: DEFAULT_COVARIATES.iter().map(|s| s.to_string()).collect(),
        activity_names: DEFAULT_ACTIVITIES.iter().map(|s| s.to_string()).collect(),
        analysts: panels.into_values().collect(),
        metadata: PanelMetadata {
            period_length: Some(config.period_length.to_string()),
            origin: Some(origin),
            shift_by_one: config.shift_by_one,
            winsorize_cap: config.winsorize_cap,
            zscored: Vec::new(),
        },
    };
    if config.zscore_covariates {
        zscore_covariates(&mut panel);
    }
    Ok(panel)
}

/// Standardizes every non-constant covariate in place and records the
/// transformation. Columns with zero spread are only centered.
pub fn zscore_covariates(panel: &mut PanelData) {
    let n_cov = panel.n_covariates();
    let n = panel.n_queries() as f64;
    if n == 0.0 {
        return;
    }
    let mut stats = Vec::new();
    for j in 1..n_cov {
        let values = || {
            panel
                .analysts
                .iter()
                .flat_map(|a| a.periods.iter())
                .flat_map(|p| p.queries.iter())
                .map(move |q| q.covariates[j])
        };
        let mean = values().sum::<f64>() / n;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        stats.push((j, mean, sd));
    }
    for a in &mut panel.analysts {
        for p in &mut a.periods {
            for q in &mut p.queries {
                for &(j, mean, sd) in &stats {
                    q.covariates[j] = (q.covariates[j] - mean) / sd;
                }
            }
        }
    }
    panel.metadata.zscored = stats
        .into_iter()
        .map(|(j, m, s)| (panel.covariate_names[j].clone(), m, s))
        .collect();
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    EmptyHorizon,
    NoAnalysts,
    NoQueries,
    DuplicateAnalyst,
    MissingPeriod,
    PeriodOutOfOrder,
    ActivityLength,
    NegativeActivity,
    CovariateLength,
    ConstantNotOne,
    NegativeCompletionTime,
    WorkloadBelowOne,
    QuerySizeBelowOne,
    NegativeTenure,
    NonFiniteValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub analyst_id: Option<String>,
    pub period: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.analyst_id, self.period) {
            (Some(a), Some(t)) => write!(f, "analyst {a}, period {t}: {}", self.message),
            (Some(a), None) => write!(f, "analyst {a}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Checks every panel invariant; an empty result means the panel is valid.
pub fn validate_panel(panel: &PanelData) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |kind, analyst: Option<&str>, period: Option<usize>, message: String| {
        out.push(Diagnostic {
            kind,
            analyst_id: analyst.map(str::to_string),
            period,
            message,
        })
    };

    if panel.horizon == 0 {
        push(DiagnosticKind::EmptyHorizon, None, None, "horizon is zero".into());
    }
    if panel.analysts.is_empty() {
        push(DiagnosticKind::NoAnalysts, None, None, "panel has no analysts".into());
    }
    if panel.n_queries() == 0 && !panel.analysts.is_empty() {
        push(DiagnosticKind::NoQueries, None, None, "panel has no queries".into());
    }

    // Domain checks only make sense on raw, unscaled columns.
    let raw_column = |name: &str| {
        if panel.metadata.zscored.iter().any(|(n, _, _)| n == name) {
            None
        } else {
            panel.covariate_names.iter().position(|n| n == name)
        }
    };
    let workload = raw_column("workload");
    let query_size = raw_column("query_size");
    let tenure = raw_column("tenure_months");

    let mut seen = HashMap::new();
    for a in &panel.analysts {
        let id = Some(a.analyst_id.as_str());
        if seen.insert(a.analyst_id.as_str(), ()).is_some() {
            push(
                DiagnosticKind::DuplicateAnalyst,
                id,
                None,
                "analyst appears more than once".into(),
            );
        }
        if a.periods.len() != panel.horizon {
            let present: BTreeSet<usize> = a.periods.iter().map(|p| p.period_index).collect();
            let missing: Vec<usize> = (1..=panel.horizon).filter(|t| !present.contains(t)).collect();
            push(
                DiagnosticKind::MissingPeriod,
                id,
                missing.first().copied(),
                format!(
                    "missing period: expected {} periods, found {} (missing {:?})",
                    panel.horizon,
                    a.periods.len(),
                    missing
                ),
            );
        }
        for (pos, p) in a.periods.iter().enumerate() {
            let t = Some(p.period_index);
            if p.period_index != pos + 1 && a.periods.len() == panel.horizon {
                push(
                    DiagnosticKind::PeriodOutOfOrder,
                    id,
                    t,
                    format!("period at position {} has index {}", pos + 1, p.period_index),
                );
            }
            if p.activities.len() != panel.n_activities() {
                push(
                    DiagnosticKind::ActivityLength,
                    id,
                    t,
                    format!(
                        "expected {} activities, found {}",
                        panel.n_activities(),
                        p.activities.len()
                    ),
                );
            }
            if p.activities.iter().any(|v| !v.is_finite()) {
                push(DiagnosticKind::NonFiniteValue, id, t, "non-finite activity".into());
            } else if p.activities.iter().any(|&v| v < 0.0) {
                push(
                    DiagnosticKind::NegativeActivity,
                    id,
                    t,
                    "negative activity count".into(),
                );
            }
            for q in &p.queries {
                if q.completion_time < 0 {
                    push(
                        DiagnosticKind::NegativeCompletionTime,
                        id,
                        t,
                        format!("negative completion time for query {}", q.query_id),
                    );
                }
                if q.covariates.len() != panel.n_covariates() {
                    push(
                        DiagnosticKind::CovariateLength,
                        id,
                        t,
                        format!(
                            "query {} has {} covariates, expected {}",
                            q.query_id,
                            q.covariates.len(),
                            panel.n_covariates()
                        ),
                    );
                    continue;
                }
                if q.covariates.iter().any(|v| !v.is_finite()) {
                    push(
                        DiagnosticKind::NonFiniteValue,
                        id,
                        t,
                        format!("non-finite covariate for query {}", q.query_id),
                    );
                    continue;
                }
                if q.covariates.first() != Some(&1.0) {
                    push(
                        DiagnosticKind::ConstantNotOne,
                        id,
                        t,
                        format!("query {} constant covariate is not 1", q.query_id),
                    );
                }
                let mut check = |col: Option<usize>, ok: fn(f64) -> bool, kind, what: &str| {
                    if let Some(j) = col {
                        if !ok(q.covariates[j]) {
                            push(kind, id, t, format!("query {}: {what}", q.query_id));
                        }
                    }
                };
                check(workload, |v| v >= 1.0, DiagnosticKind::WorkloadBelowOne, "workload < 1");
                check(
                    query_size,
                    |v| v >= 1.0,
                    DiagnosticKind::QuerySizeBelowOne,
                    "query size < 1",
                );
                check(tenure, |v| v >= 0.0, DiagnosticKind::NegativeTenure, "negative tenure");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const QHEAD: &str =
        "analyst_id,query_id,created_ts,first_exec_ts,workload,query_size,saved,migrated,tenure_months\n";
    const VHEAD: &str = "analyst_id,viewed_query_id,view_ts\n";

    #[test]
    fn single_query_single_period() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(
            dir.path(),
            "q.csv",
            &format!("{QHEAD}a,q1,2015-01-10T00:00:00Z,2015-01-10T00:00:20Z,1,1,0,0,3\n"),
        );
        let v = write(dir.path(), "v.csv", VHEAD);
        let panel = ingest_events(&q, &v, &IngestConfig::default()).unwrap();
        assert_eq!(panel.horizon, 1);
        assert_eq!(panel.analysts.len(), 1);
        let p = &panel.analysts[0].periods[0];
        assert_eq!(p.queries[0].completion_time, 20);
        assert_eq!(p.activities, vec![1.0, 0.0]);
        assert_eq!(p.queries[0].covariates, vec![1.0, 1.0, 3.0, 0.0, 0.0, 1.0]);
        assert!(validate_panel(&panel).is_empty());
    }

    #[test]
    fn activity_counts_over_three_months() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(
            dir.path(),
            "q.csv",
            &format!(
                "{QHEAD}A,q1,2015-01-03T00:00:00Z,2015-01-03T00:01:00Z,1,1,0,0,0\n\
                 A,q2,2015-01-20T00:00:00Z,2015-01-20T00:00:05Z,1.5,2,1,0,0\n\
                 B,p1,2015-01-04T00:00:00Z,2015-01-04T00:00:05Z,1,1,0,0,0\n"
            ),
        );
        let v = write(
            dir.path(),
            "v.csv",
            &format!(
                "{VHEAD}A,p1,2015-02-01T10:00:00Z\nA,p1,2015-02-02T10:00:00Z\nA,x9,2015-02-28T10:00:00Z\n\
                 A,q1,2015-02-05T00:00:00Z\n"
            ),
        );
        let config = IngestConfig {
            horizon: Some(3),
            ..IngestConfig::default()
        };
        let panel = ingest_events(&q, &v, &config).unwrap();
        let a = &panel.analysts[0];
        assert_eq!(a.analyst_id, "A");
        let acts: Vec<Vec<f64>> = a.periods.iter().map(|p| p.activities.clone()).collect();
        assert_eq!(acts, vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![0.0, 0.0]]);
        assert!(a.periods[1].queries.is_empty());
        assert!(a.periods[2].queries.is_empty());
        let written: f64 = a.periods.iter().map(|p| p.activities[0]).sum();
        assert_eq!(written as usize, a.n_queries());
    }

    #[test]
    fn analysts_without_queries_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(dir.path(), "q.csv", &format!("{QHEAD}a,q1,100,130,1,1,0,0,0\n"));
        let v = write(dir.path(), "v.csv", &format!("{VHEAD}z,q1,150\n"));
        let panel = ingest_events(&q, &v, &IngestConfig::default()).unwrap();
        assert_eq!(panel.analysts.len(), 1);
        assert_eq!(panel.analysts[0].analyst_id, "a");
    }

    #[test]
    fn malformed_row_names_file_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(
            dir.path(),
            "q.csv",
            &format!("{QHEAD}a,q1,100,130,1,1,0,0,0\na,q2,100,oops,1,1,0,0,0\n"),
        );
        let v = write(dir.path(), "v.csv", VHEAD);
        let err = ingest_events(&q, &v, &IngestConfig::default()).unwrap_err();
        match err {
            Error::MalformedRow { file, line, column, .. } => {
                assert!(file.ends_with("q.csv"));
                assert_eq!(line, 3);
                assert_eq!(column, "first_exec_ts");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn execution_before_creation_lists_queries() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(
            dir.path(),
            "q.csv",
            &format!("{QHEAD}a,q2,100,90,1,1,0,0,0\na,q1,100,50,1,1,0,0,0\na,q3,100,101,1,1,0,0,0\n"),
        );
        let v = write(dir.path(), "v.csv", VHEAD);
        match ingest_events(&q, &v, &IngestConfig::default()).unwrap_err() {
            Error::NegativeCompletion(ids) => assert_eq!(ids, vec!["q1", "q2"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_query_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let q = write(
            dir.path(),
            "q.csv",
            &format!("{QHEAD}a,q1,100,130,1,1,0,0,0\na,q1,200,230,1,1,0,0,0\n"),
        );
        let v = write(dir.path(), "v.csv", VHEAD);
        assert!(matches!(
            ingest_events(&q, &v, &IngestConfig::default()),
            Err(Error::DuplicateQuery { .. })
        ));
    }

    #[test]
    fn period_length_parsing() {
        assert_eq!("1mo".parse::<PeriodLength>().unwrap(), PeriodLength::Months(1));
        assert_eq!("7d".parse::<PeriodLength>().unwrap(), PeriodLength::Days(7));
        assert_eq!("3600s".parse::<PeriodLength>().unwrap(), PeriodLength::Seconds(3600));
        assert!("0d".parse::<PeriodLength>().is_err());
        assert!("5y".parse::<PeriodLength>().is_err());
    }

    #[test]
    fn calendar_months_roll_over_years() {
        let origin = parse_timestamp("2014-11-30T23:59:59Z").unwrap();
        let t = parse_timestamp("2015-02-01T00:00:00Z").unwrap();
        assert_eq!(period_of(t, origin, PeriodLength::Months(1)), 4);
        assert_eq!(period_of(t, origin, PeriodLength::Months(2)), 2);
        assert_eq!(period_of(origin, origin, PeriodLength::Days(1)), 1);
    }

    fn tiny_panel() -> PanelData {
        PanelData {
            horizon: 2,
            covariate_names: vec!["constant".into(), "workload".into()],
            activity_names: vec!["n_written".into()],
            analysts: vec![AnalystPanel {
                analyst_id: "a".into(),
                periods: vec![
                    PeriodObservation {
                        period_index: 1,
                        queries: vec![QueryObservation {
                            query_id: "q".into(),
                            completion_time: 3,
                            covariates: vec![1.0, 1.0],
                        }],
                        activities: vec![1.0],
                    },
                    PeriodObservation {
                        period_index: 2,
                        queries: vec![],
                        activities: vec![0.0],
                    },
                ],
            }],
            metadata: PanelMetadata::default(),
        }
    }

    #[test]
    fn validation_diagnostics() {
        let panel = tiny_panel();
        assert!(validate_panel(&panel).is_empty());

        let mut short = panel.clone();
        short.analysts[0].periods.pop();
        let d = validate_panel(&short);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::MissingPeriod);

        let mut neg = panel.clone();
        neg.analysts[0].periods[0].queries[0].completion_time = -4;
        let d = validate_panel(&neg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::NegativeCompletionTime);
    }

    #[test]
    fn select_reorders_columns() {
        let panel = tiny_panel();
        let sel = panel.select(&["constant".into()], &["n_written".into()]).unwrap();
        assert_eq!(sel.analysts[0].periods[0].queries[0].covariates, vec![1.0]);
        assert!(panel.select(&["workload".into()], &[]).is_err());
    }
}
