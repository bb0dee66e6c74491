//! The six-section response contract and its validator.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use searisk_core::evidence::{Direction, EvidenceRecord, TOP_DRIVERS};

use crate::error::{ReportError, Result};

pub const SECTION_KEYS: [&str; 6] = [
    "target_feature_drivers",
    "neighbor_influence",
    "risk_summary",
    "counterfactual_suggestions",
    "confidence_and_uncertainty",
    "limitations",
];

const DRIVER_KEYS: [&str; 3] = ["feature", "direction", "justification"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverEntry {
    pub feature: String,
    /// Direction exactly as written by the backend. Missing or non-string
    /// values are kept as `None` and judged ambiguous downstream.
    pub direction: Option<String>,
    pub justification: String,
}

impl DriverEntry {
    pub fn stated_direction(&self) -> Option<Direction> {
        self.direction.as_deref().and_then(Direction::parse)
    }
}

/// A schema-valid report body: the six sections and nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskReport {
    pub target_feature_drivers: Vec<DriverEntry>,
    pub neighbor_influence: String,
    pub risk_summary: String,
    pub counterfactual_suggestions: String,
    pub confidence_and_uncertainty: String,
    pub limitations: String,
}

fn text_section(obj: &Map<String, Value>, key: &str) -> Result<String> {
    let bad = || ReportError::Schema(format!("\"{key}\" must be a nonempty string"));
    match &obj[key] {
        Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
        // lists of sentences are accepted and joined
        Value::Array(items) if !items.is_empty() => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join("\n")),
        _ => Err(bad()),
    }
}

fn driver_entry(k: usize, v: &Value) -> Result<DriverEntry> {
    let obj = v
        .as_object()
        .ok_or_else(|| ReportError::Schema(format!("driver {} is not an object", k + 1)))?;
    if let Some(extra) = obj.keys().find(|key| !DRIVER_KEYS.contains(&key.as_str())) {
        return Err(ReportError::Schema(format!("driver {} has unexpected key \"{extra}\"", k + 1)));
    }
    let feature = obj
        .get("feature")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ReportError::Schema(format!("driver {} lacks a \"feature\" string", k + 1)))?;
    let justification = obj
        .get("justification")
        .and_then(Value::as_str)
        .ok_or_else(|| ReportError::Schema(format!("driver {} lacks a \"justification\" string", k + 1)))?;
    Ok(DriverEntry {
        feature: feature.trim().to_string(),
        direction: obj.get("direction").and_then(Value::as_str).map(str::to_string),
        justification: justification.to_string(),
    })
}

/// Parse backend text into a report, enforcing the six-key contract.
pub fn parse_report(text: &str) -> Result<RiskReport> {
    let value: Value =
        serde_json::from_str(text.trim()).map_err(|e| ReportError::Schema(format!("response is not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ReportError::Schema("response is not a JSON object".into()))?;

    let extra: Vec<&str> = obj
        .keys()
        .map(String::as_str)
        .filter(|k| !SECTION_KEYS.contains(k))
        .collect();
    let missing: Vec<&str> = SECTION_KEYS.iter().copied().filter(|k| !obj.contains_key(*k)).collect();
    if !extra.is_empty() || !missing.is_empty() {
        return Err(ReportError::Schema(format!(
            "expected exactly the keys {SECTION_KEYS:?}; unexpected {extra:?}, missing {missing:?}"
        )));
    }

    let drivers = obj["target_feature_drivers"]
        .as_array()
        .ok_or_else(|| ReportError::Schema("\"target_feature_drivers\" must be an array".into()))?;
    if drivers.len() != TOP_DRIVERS {
        return Err(ReportError::Schema(format!(
            "\"target_feature_drivers\" must have exactly {TOP_DRIVERS} entries, found {}",
            drivers.len()
        )));
    }
    let target_feature_drivers = drivers
        .iter()
        .enumerate()
        .map(|(k, v)| driver_entry(k, v))
        .collect::<Result<Vec<_>>>()?;

    Ok(RiskReport {
        target_feature_drivers,
        neighbor_influence: text_section(obj, SECTION_KEYS[1])?,
        risk_summary: text_section(obj, SECTION_KEYS[2])?,
        counterfactual_suggestions: text_section(obj, SECTION_KEYS[3])?,
        confidence_and_uncertainty: text_section(obj, SECTION_KEYS[4])?,
        limitations: text_section(obj, SECTION_KEYS[5])?,
    })
}

/// The report must discuss exactly the evidence's five features. Order may
/// differ; the consistency check reports reordering separately.
pub fn check_grounding(report: &RiskReport, ev: &EvidenceRecord) -> Result<()> {
    let stated: BTreeSet<&str> = report.target_feature_drivers.iter().map(|d| d.feature.as_str()).collect();
    let expected: BTreeSet<&str> = ev.drivers.iter().map(|d| d.feature.as_str()).collect();
    if stated.len() != report.target_feature_drivers.len() || stated != expected {
        return Err(ReportError::Grounding {
            cell: ev.cell.to_string(),
            date: ev.date.to_string(),
            detail: format!("report features {stated:?} differ from evidence features {expected:?}"),
        });
    }
    Ok(())
}

/// Structure and grounding in one step: what the generation loop gates on.
pub fn validate_report_text(text: &str, ev: &EvidenceRecord) -> Result<RiskReport> {
    let report = parse_report(text)?;
    check_grounding(&report, ev).map_err(|e| ReportError::Schema(e.to_string()))?;
    Ok(report)
}
