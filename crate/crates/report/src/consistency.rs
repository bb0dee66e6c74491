//! Directional-consistency audit: does each stated driver direction agree
//! with the direction implied by the evidence?

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use searisk_core::evidence::{Direction, EvidenceRecord};
use searisk_core::ingest::CellId;

use crate::error::{ReportError, Result};
use crate::generate::GeneratedReport;
use crate::schema::{check_grounding, RiskReport};

pub const DEFAULT_FLOOR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stated {
    #[serde(rename = "increase risk")]
    Increase,
    #[serde(rename = "decrease risk")]
    Decrease,
    #[serde(rename = "ambiguous")]
    Ambiguous,
}

impl From<Option<Direction>> for Stated {
    fn from(d: Option<Direction>) -> Self {
        match d {
            Some(Direction::Increase) => Stated::Increase,
            Some(Direction::Decrease) => Stated::Decrease,
            None => Stated::Ambiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionJudgment {
    pub cell: CellId,
    pub date: NaiveDate,
    pub feature: String,
    pub expected: Direction,
    pub stated: Stated,
    /// Raw direction text from the report, for the audit table.
    pub stated_text: Option<String>,
    pub verdict: Verdict,
    /// 0-based positions in the evidence and in the report.
    pub evidence_position: usize,
    pub report_position: usize,
}

/// One judgment per evidence driver, aligned by feature name.
pub fn check_report(report: &RiskReport, ev: &EvidenceRecord) -> Result<Vec<DirectionJudgment>> {
    check_grounding(report, ev)?;
    let by_name: HashMap<&str, usize> = report
        .target_feature_drivers
        .iter()
        .enumerate()
        .map(|(k, d)| (d.feature.as_str(), k))
        .collect();
    Ok(ev
        .drivers
        .iter()
        .enumerate()
        .map(|(pos, driver)| {
            let k = by_name[driver.feature.as_str()];
            let entry = &report.target_feature_drivers[k];
            let stated = Stated::from(entry.stated_direction());
            let verdict = match entry.stated_direction() {
                None => Verdict::Ambiguous,
                Some(d) if d == driver.direction => Verdict::Consistent,
                Some(_) => Verdict::Inconsistent,
            };
            DirectionJudgment {
                cell: ev.cell,
                date: ev.date,
                feature: driver.feature.clone(),
                expected: driver.direction,
                stated,
                stated_text: entry.direction.clone(),
                verdict,
                evidence_position: pos,
                report_position: k,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub n_reports: usize,
    pub n_judgments: usize,
    pub n_consistent: usize,
    pub n_inconsistent: usize,
    pub n_ambiguous: usize,
    /// Ambiguous judgments count against the rate.
    pub rate: f64,
    /// Judgments whose driver sits at a different position than in the evidence.
    pub n_reordered: usize,
    pub failures: Vec<DirectionJudgment>,
}

impl ConsistencySummary {
    pub fn passes(&self, floor: f64) -> bool {
        self.rate >= floor
    }
}

/// Pool the judgments of a set of reports, one inner vector per report.
pub fn aggregate_consistency(per_report: &[Vec<DirectionJudgment>]) -> Result<ConsistencySummary> {
    if per_report.is_empty() {
        return Err(ReportError::Config("consistency needs at least one report".into()));
    }
    let all: Vec<&DirectionJudgment> = per_report.iter().flatten().collect();
    let count = |v: Verdict| all.iter().filter(|j| j.verdict == v).count();
    let n_consistent = count(Verdict::Consistent);
    Ok(ConsistencySummary {
        n_reports: per_report.len(),
        n_judgments: all.len(),
        n_consistent,
        n_inconsistent: count(Verdict::Inconsistent),
        n_ambiguous: count(Verdict::Ambiguous),
        rate: n_consistent as f64 / all.len() as f64,
        n_reordered: all.iter().filter(|j| j.evidence_position != j.report_position).count(),
        failures: all
            .into_iter()
            .filter(|j| j.verdict != Verdict::Consistent)
            .cloned()
            .collect(),
    })
}

/// Pair each report with its evidence by (cell, date) and audit the lot.
pub fn validate_reports(reports: &[GeneratedReport], evidence: &[EvidenceRecord]) -> Result<ConsistencySummary> {
    let index: HashMap<(CellId, NaiveDate), &EvidenceRecord> = evidence.iter().map(|e| ((e.cell, e.date), e)).collect();
    let judgments = reports
        .iter()
        .map(|r| {
            let ev = index.get(&(r.cell, r.date)).ok_or_else(|| ReportError::Grounding {
                cell: r.cell.to_string(),
                date: r.date.to_string(),
                detail: "no evidence record for this report".into(),
            })?;
            check_report(&r.report, ev)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_consistency(&judgments)
}

/// Human-readable summary and one row per non-consistent judgment.
pub fn failure_table(s: &ConsistencySummary) -> String {
    let mut out = format!(
        "directional consistency: {}/{} = {:.3} ({} inconsistent, {} ambiguous, {} reports, {} reordered)\n",
        s.n_consistent, s.n_judgments, s.rate, s.n_inconsistent, s.n_ambiguous, s.n_reports, s.n_reordered
    );
    if s.failures.is_empty() {
        return out;
    }
    let _ = writeln!(out, "{:<14} {:<10} {:<14} {:<14} {:<22} verdict", "cell", "date", "feature", "expected", "stated");
    for f in &s.failures {
        let _ = writeln!(
            out,
            "{:<14} {:<10} {:<14} {:<14} {:<22} {:?}",
            f.cell.to_string(),
            f.date.to_string(),
            f.feature,
            f.expected.as_str(),
            f.stated_text.as_deref().unwrap_or("(missing)"),
            f.verdict
        );
    }
    out
}
