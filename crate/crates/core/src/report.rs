//! CSV emission, expected-value files and the batch runner.
//!
//! Expected files hold one check per line:
//!
//! ```text
//! hss-container-small-0.005km.migration_s = 32 ±5% @ "HSS container total, short fiber"
//! ```
//!
//! The tolerance is absolute unless suffixed with `%`; `+-` is accepted for `±`.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::kv::{KvDoc, KvError};
use crate::orchestrator::{run_scenario, MetricsReport, MigrationBreakdown, OrchestratorError, SrtOutcome};
use crate::profile::CalibrationProfile;
use crate::scenario::Scenario;
use crate::sim::SimDuration;

pub const CSV_COLUMNS: [&str; 17] = [
    "scenario_id",
    "kind",
    "virt",
    "flavor",
    "length_km",
    "overlay",
    "migration_s",
    "downtime_s",
    "load_bytes",
    "srt_s",
    "checkpoint_s",
    "metadata_s",
    "restore_s",
    "pre_live_s",
    "live_s",
    "post_live_s",
    "iterations",
];

fn secs(d: SimDuration) -> String {
    format!("{:.6}", d.as_secs_f64())
}

/// One CSV row, in [`CSV_COLUMNS`] order.
pub fn csv_row(r: &MetricsReport) -> Vec<String> {
    let srt = match r.ue_srt {
        Some(SrtOutcome::Recovered(d)) => secs(d),
        Some(SrtOutcome::Timeout) => "timeout".into(),
        None => String::new(),
    };
    let blank = String::new;
    let (ck, md, rs, pre, live, post, it) = match &r.breakdown {
        MigrationBreakdown::Container(b) => (
            secs(b.checkpoint),
            secs(b.metadata_transfer),
            secs(b.restore),
            blank(),
            blank(),
            blank(),
            blank(),
        ),
        MigrationBreakdown::Vm(b) => (
            blank(),
            blank(),
            blank(),
            secs(b.pre_live),
            secs(b.live),
            secs(b.post_live),
            b.iterations.to_string(),
        ),
    };
    vec![
        r.scenario_id.clone(),
        r.kind.to_string(),
        r.virtualization.to_string(),
        r.flavor.to_string(),
        r.lightpath_km.to_string(),
        r.overlay.name().to_string(),
        secs(r.migration_time),
        secs(r.downtime),
        r.load_bytes.to_string(),
        srt,
        ck,
        md,
        rs,
        pre,
        live,
        post,
        it,
    ]
}

/// Header plus one row per report, sorted by scenario id.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in sorted {
        w.write_record(csv_row(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Numeric value of a named metric, if the report has it.
pub fn metric_value(r: &MetricsReport, metric: &str) -> Option<f64> {
    let s = |d: SimDuration| Some(d.as_secs_f64());
    let (c, v) = match &r.breakdown {
        MigrationBreakdown::Container(b) => (Some(b), None),
        MigrationBreakdown::Vm(b) => (None, Some(b)),
    };
    match metric {
        "migration_s" => s(r.migration_time),
        "downtime_s" => s(r.downtime),
        "load_bytes" => Some(r.load_bytes as f64),
        "srt_s" => r.ue_srt?.duration().map(|d| d.as_secs_f64()),
        "ue_interruption_s" => s(r.ue_interruption),
        "new_ue_attach_s" => r.new_ue_attach.map(|d| d.as_secs_f64()),
        "checkpoint_s" => c.map(|b| b.checkpoint.as_secs_f64()),
        "metadata_s" => c.map(|b| b.metadata_transfer.as_secs_f64()),
        "restore_s" => c.map(|b| b.restore.as_secs_f64()),
        "pre_live_s" => v.map(|b| b.pre_live.as_secs_f64()),
        "live_s" => v.map(|b| b.live.as_secs_f64()),
        "post_live_s" => v.map(|b| b.post_live.as_secs_f64()),
        "iterations" => v.map(|b| b.iterations as f64),
        _ => None,
    }
}

pub const METRICS: [&str; 13] = [
    "migration_s",
    "downtime_s",
    "load_bytes",
    "srt_s",
    "ue_interruption_s",
    "new_ue_attach_s",
    "checkpoint_s",
    "metadata_s",
    "restore_s",
    "pre_live_s",
    "live_s",
    "post_live_s",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    Percent(f64),
}

impl Tolerance {
    pub fn bound(self, expected: f64) -> f64 {
        match self {
            Tolerance::Absolute(t) => t,
            Tolerance::Percent(p) => expected.abs() * p / 100.0,
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Absolute(t) => write!(f, "±{t}"),
            Tolerance::Percent(p) => write!(f, "±{p}%"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedRecord {
    pub scenario_id: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: Tolerance,
    pub source: String,
    pub line: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpectedError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn malformed(line: usize, message: impl Into<String>) -> ExpectedError {
    ExpectedError::Malformed {
        line,
        message: message.into(),
    }
}

fn parse_record(key: &str, value: &str, line: usize) -> Result<ExpectedRecord, ExpectedError> {
    let (id, metric) = key
        .rsplit_once('.')
        .ok_or_else(|| malformed(line, format!("`{key}` is not `scenario.metric`")))?;
    if !METRICS.contains(&metric) {
        return Err(malformed(line, format!("unknown metric `{metric}`")));
    }
    let (body, source) = match value.split_once('@') {
        Some((b, s)) => (b.trim(), s.trim().trim_matches('"').to_string()),
        None => (value.trim(), String::new()),
    };
    let body = body.replace("+-", "±");
    let (v, tol) = match body.split_once('±') {
        Some((v, t)) => (v.trim(), Some(t.trim())),
        None => (body.trim(), None),
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| malformed(line, format!("`{s}` is not a number")))
    };
    let value = num(v)?;
    let tolerance = match tol {
        None => Tolerance::Absolute(0.0),
        Some(t) => match t.strip_suffix('%') {
            Some(p) => Tolerance::Percent(num(p.trim())?),
            None => Tolerance::Absolute(num(t)?),
        },
    };
    if matches!(tolerance, Tolerance::Absolute(t) | Tolerance::Percent(t) if t < 0.0) {
        return Err(malformed(line, "tolerance must be non-negative"));
    }
    Ok(ExpectedRecord {
        scenario_id: id.to_string(),
        metric: metric.to_string(),
        value,
        tolerance,
        source,
        line,
    })
}

/// Parses an expected-values file. Records come back sorted by key.
pub fn parse_expected(text: &str) -> Result<Vec<ExpectedRecord>, ExpectedError> {
    let doc = KvDoc::parse(text)?;
    doc.keys()
        .map(|k| {
            let e = doc.raw(k).expect("key listed");
            parse_record(k, &e.value, e.line)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Pass,
    /// Signed `actual - expected`.
    Fail(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("expectation for `{expected}` checked against `{actual}`")]
    KeyMismatch { expected: String, actual: String },
    #[error("`{scenario}` has no value for {metric}")]
    Unavailable { scenario: String, metric: String },
}

pub fn compare_value(actual: f64, expected: &ExpectedRecord) -> Comparison {
    let delta = actual - expected.value;
    if delta.abs() <= expected.tolerance.bound(expected.value) {
        Comparison::Pass
    } else {
        Comparison::Fail(delta)
    }
}

pub fn compare_expected(report: &MetricsReport, expected: &ExpectedRecord) -> Result<Comparison, CompareError> {
    if report.scenario_id != expected.scenario_id {
        return Err(CompareError::KeyMismatch {
            expected: expected.scenario_id.clone(),
            actual: report.scenario_id.clone(),
        });
    }
    let actual = metric_value(report, &expected.metric).ok_or_else(|| CompareError::Unavailable {
        scenario: report.scenario_id.clone(),
        metric: expected.metric.clone(),
    })?;
    Ok(compare_value(actual, expected))
}

/// Outcome of one expected record against a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub record: ExpectedRecord,
    pub actual: Option<f64>,
    pub outcome: Result<Comparison, String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        matches!(self.outcome, Ok(Comparison::Pass))
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.record;
        let verdict = match &self.outcome {
            Ok(Comparison::Pass) => "PASS".to_string(),
            Ok(Comparison::Fail(d)) => format!("FAIL (delta {d:+.6})"),
            Err(e) => format!("FAIL ({e})"),
        };
        let actual = self.actual.map_or("-".to_string(), |a| format!("{a:.6}"));
        write!(
            f,
            "{verdict}\t{}.{}\tactual {actual}\texpected {} {}\t{}",
            r.scenario_id, r.metric, r.value, r.tolerance, r.source
        )
    }
}

/// Checks every record against the matching report.
pub fn check_all(reports: &[MetricsReport], expected: &[ExpectedRecord]) -> Vec<CheckResult> {
    expected
        .iter()
        .map(|rec| {
            let Some(report) = reports.iter().find(|r| r.scenario_id == rec.scenario_id) else {
                return CheckResult {
                    record: rec.clone(),
                    actual: None,
                    outcome: Err(format!("no report for `{}`", rec.scenario_id)),
                };
            };
            CheckResult {
                record: rec.clone(),
                actual: metric_value(report, &rec.metric),
                outcome: compare_expected(report, rec).map_err(|e| e.to_string()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Sorted by scenario id.
    pub reports: Vec<MetricsReport>,
    /// Scenarios that failed, sorted by id.
    pub failures: Vec<(String, OrchestratorError)>,
}

impl BatchOutcome {
    pub fn csv(&self) -> String {
        to_csv(&self.reports)
    }

    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every scenario in parallel. Failures do not affect other scenarios.
pub fn run_batch(scenarios: &[Scenario], profile: &CalibrationProfile) -> BatchOutcome {
    let results: Vec<(String, Result<MetricsReport, OrchestratorError>)> = scenarios
        .par_iter()
        .map(|sc| (sc.id.clone(), run_scenario(sc, profile)))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push((id, e)),
        }
    }
    reports.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    failures.sort_by(|a, b| a.0.cmp(&b.0));
    BatchOutcome { reports, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::load_profile;
    use crate::scenario::Virtualization;
    use crate::vnf::{Flavor, VnfKind};

    #[test]
    fn parses_expected_lines() {
        let recs = parse_expected(
            "# comment\n\
             a-0.005km.migration_s = 32 ±5% @ \"container total\"\n\
             b.load_bytes = 42000000 @ \"image size\"\n\
             c.srt_s = 2.0 +- 0.1\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].scenario_id, "a-0.005km");
        assert_eq!(recs[0].tolerance, Tolerance::Percent(5.0));
        assert_eq!(recs[0].source, "container total");
        assert_eq!(recs[1].tolerance, Tolerance::Absolute(0.0));
        assert_eq!(recs[2].tolerance, Tolerance::Absolute(0.1));
        assert!(parse_expected("a.bogus = 1").is_err());
        assert!(parse_expected("a.srt_s = 1 ±-2").is_err());
    }

    #[test]
    fn comparison_examples() {
        let rec = |v, t| ExpectedRecord {
            scenario_id: "x".into(),
            metric: "migration_s".into(),
            value: v,
            tolerance: t,
            source: String::new(),
            line: 1,
        };
        assert_eq!(
            compare_value(32.0, &rec(32.0, Tolerance::Percent(5.0))),
            Comparison::Pass
        );
        assert_eq!(
            compare_value(40.0, &rec(32.0, Tolerance::Percent(5.0))),
            Comparison::Fail(8.0)
        );
        assert_eq!(
            compare_value(59.24, &rec(59.24, Tolerance::Percent(5.0))),
            Comparison::Pass
        );
    }

    #[test]
    fn empty_batch_is_header_only() {
        let p = load_profile("openroadm").unwrap();
        let out = run_batch(&[], &p);
        assert!(out.is_success());
        assert_eq!(out.csv(), format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn batch_isolates_failures() {
        let p = load_profile("openroadm").unwrap();
        let ok = Scenario::new(VnfKind::Hss, Virtualization::Container, Flavor::Small, 0.005);
        let mut bad = Scenario::new(VnfKind::Mme, Virtualization::Container, Flavor::Small, 0.005);
        bad.options.repair_sctp = false;
        let out = run_batch(&[bad.clone(), ok.clone()], &p);
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, bad.id);
        assert!(out.failures[0].1.is_repair_unsupported());
        let checks = check_all(
            &out.reports,
            &parse_expected(&format!("{}.migration_s = 40 ±5%\n", ok.id)).unwrap(),
        );
        assert!(!checks[0].passed());
    }
}
