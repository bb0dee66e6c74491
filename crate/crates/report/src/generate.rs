//! Validated generation with a single reprompt, an audit trail, and bounded
//! concurrency over many evidence records.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use searisk_core::ingest::CellId;

use crate::backend::GenerationBackend;
use crate::error::{io, ReportError, Result};
use crate::prompt::PromptBundle;
use crate::schema::{validate_report_text, RiskReport};

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    #[serde(default)]
    pub model: Option<String>,
    /// RFC 3339 wall-clock time; absent for deterministic backends.
    #[serde(default)]
    pub timestamp: Option<String>,
    pub prompt_hash: String,
    /// 1 when the first answer passed validation, 2 after a reprompt.
    pub passes: usize,
}

/// Output file layout: the six-section body under `report`, identity and
/// provenance alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedReport {
    pub cell: CellId,
    pub date: NaiveDate,
    pub report: RiskReport,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedPass {
    pub raw_text: String,
    pub error: String,
}

/// Kept for audit when both passes fail validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorArtifact {
    pub cell: CellId,
    pub date: NaiveDate,
    pub backend: String,
    pub prompt_hash: String,
    pub passes: Vec<FailedPass>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationOutcome {
    Report(GeneratedReport),
    Failed(ErrorArtifact),
}

/// One JSON file per backend call: the request (when available), the raw
/// reply, and whether it validated.
#[derive(Debug)]
pub struct AuditLog {
    dir: PathBuf,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    cell: String,
    date: String,
    backend: &'a str,
    prompt_hash: &'a str,
    pass: usize,
    system_text: &'a str,
    user_text: String,
    feedback: Option<&'a str>,
    request: Option<&'a Value>,
    response: Option<&'a str>,
    outcome: &'a str,
}

impl AuditLog {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(AuditLog { dir: dir.to_path_buf() })
    }

    fn record(&self, entry: &AuditEntry) -> Result<()> {
        let path = self
            .dir
            .join(format!("{}_{}_{}_pass{}.json", entry.backend, entry.cell, entry.date, entry.pass));
        let text = serde_json::to_string_pretty(entry)?;
        std::fs::write(&path, text + "\n").map_err(|e| io(path, e))
    }
}

/// Generate, validate, reprompt once with the validation error, and give up
/// with an error artifact if the second answer also fails. Transport errors
/// (after the backend's own retries) are returned as `Err`.
pub fn generate_report(
    bundle: &PromptBundle,
    backend: &dyn GenerationBackend,
    audit: Option<&AuditLog>,
) -> Result<GenerationOutcome> {
    let ev = &bundle.evidence;
    let hash = bundle.prompt_hash();
    let mut failed: Vec<FailedPass> = Vec::new();
    for pass in 1..=2 {
        let feedback = failed.last().map(|f| f.error.as_str());
        let reply = backend.generate(bundle, feedback);
        let checked = reply
            .as_ref()
            .ok()
            .map(|r| validate_report_text(&r.text, ev));
        if let Some(log) = audit {
            let outcome = match (&reply, &checked) {
                (Err(e), _) => format!("transport error: {e}"),
                (_, Some(Err(e))) => format!("rejected: {e}"),
                _ => "accepted".to_string(),
            };
            log.record(&AuditEntry {
                cell: ev.cell.to_string(),
                date: ev.date.to_string(),
                backend: backend.id(),
                prompt_hash: &hash,
                pass,
                system_text: &bundle.system_text,
                user_text: bundle.user_text(),
                feedback,
                request: reply.as_ref().ok().and_then(|r| r.request.as_ref()),
                response: reply.as_ref().ok().map(|r| r.text.as_str()),
                outcome: &outcome,
            })?;
        }
        let reply = reply?;
        match checked.expect("reply present") {
            Ok(report) => {
                return Ok(GenerationOutcome::Report(GeneratedReport {
                    cell: ev.cell,
                    date: ev.date,
                    report,
                    provenance: Provenance {
                        backend: backend.id().to_string(),
                        model: reply.model,
                        timestamp: backend.timestamps().then(|| Utc::now().to_rfc3339()),
                        prompt_hash: hash,
                        passes: pass,
                    },
                }))
            }
            Err(e) => failed.push(FailedPass {
                raw_text: reply.text,
                error: e.to_string(),
            }),
        }
    }
    Ok(GenerationOutcome::Failed(ErrorArtifact {
        cell: ev.cell,
        date: ev.date,
        backend: backend.id().to_string(),
        prompt_hash: hash,
        passes: failed,
    }))
}

/// Run [`generate_report`] over `bundles` with at most `concurrency` calls in
/// flight. Results come back in input order.
pub fn generate_reports(
    bundles: &[PromptBundle],
    backend: &dyn GenerationBackend,
    concurrency: usize,
    audit: Option<&AuditLog>,
) -> Vec<Result<GenerationOutcome>> {
    let workers = concurrency.max(1).min(bundles.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<GenerationOutcome>>>> =
        Mutex::new((0..bundles.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= bundles.len() {
                    break;
                }
                let out = generate_report(&bundles[i], backend, audit);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|s| s.expect("every bundle processed"))
        .collect()
}

pub fn report_file_name(cell: &CellId, date: &NaiveDate) -> String {
    format!("report_{cell}_{date}.json")
}

pub fn write_report(dir: &Path, report: &GeneratedReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(report_file_name(&report.cell, &report.date));
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
    Ok(path)
}

pub fn write_error_artifact(dir: &Path, artifact: &ErrorArtifact) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(format!("error_{}_{}.json", artifact.cell, artifact.date));
    let text = serde_json::to_string_pretty(artifact)?;
    std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Every `report_*.json` in `dir`, sorted by file name. The body of each is
/// re-checked against the six-key contract.
pub fn read_reports(dir: &Path) -> Result<Vec<GeneratedReport>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
            let value: Value = serde_json::from_str(&text)?;
            let body = value
                .get("report")
                .ok_or_else(|| ReportError::Schema(format!("{} has no \"report\" body", p.display())))?;
            crate::schema::parse_report(&body.to_string())?;
            Ok(serde_json::from_value(value)?)
        })
        .collect()
}
