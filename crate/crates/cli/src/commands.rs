//! One function per subcommand. Each reads its inputs from the layout under
//! `out_dir` and writes its outputs there; `run_all` is their composition.

use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use searisk_core::evidence::{extract_snapshot_evidence, read_evidence_file, write_evidence_file, EvidenceRecord};
use searisk_core::ingest::{list_csv_files, parse_ais_csv, parse_ais_files, write_records_file, IngestReport};
use searisk_core::metrics::{comparison_table, evaluate, EvalReport};
use searisk_core::nn::{Checkpoint, ModelKind};
use searisk_core::snapshot::{
    build_snapshots, chronological_split, compute_labels, correlation_table, labeled, read_correlations, read_store,
    write_store, DailySnapshot, SplitAssignment,
};
use searisk_core::synth::{generate_synthetic_ais, write_daily_csvs};
use searisk_core::train::{predict_sequence, train_model, write_history_file};
use searisk_report::consistency::{failure_table, validate_reports, ConsistencySummary};
use searisk_report::generate::{read_reports, write_error_artifact, write_report, AuditLog};
use searisk_report::{build_prompt, generate_reports, GenerationBackend, GenerationOutcome, RemoteBackend, TemplateBackend};

use crate::config::{BackendKind, Layout, PipelineConfig, Source};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Delete files in `dir` whose names start with `prefix`, so reruns with
/// fewer outputs leave nothing stale behind.
fn clear_prefixed(dir: &Path, prefix: &str) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix)) {
            std::fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    Ok(())
}

pub fn synth(cfg: &PipelineConfig) -> Result<usize> {
    if cfg.data.source != Source::Synthetic {
        bail!("`synth` needs data.source = \"synthetic\"");
    }
    let layout = Layout::new(cfg);
    let records = generate_synthetic_ais(&cfg.synth_config())?;
    clear_prefixed(&layout.ais_dir(), "AIS_")?;
    let files = write_daily_csvs(&layout.ais_dir(), &records)?;
    println!("synth: {} records in {} daily files under {}", records.len(), files.len(), layout.ais_dir().display());
    Ok(records.len())
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Vec<IngestReport>> {
    let layout = Layout::new(cfg);
    let dir = match cfg.data.source {
        Source::Synthetic => layout.ais_dir(),
        Source::Noaa => cfg.data.noaa_dir.clone().context("data.noaa_dir is not set")?,
    };
    let files = list_csv_files(&dir)?;
    if files.is_empty() {
        bail!("no CSV files in {}", dir.display());
    }
    let (records, reports) = parse_ais_files(&files, &cfg.region)?;
    std::fs::create_dir_all(&layout.root)?;
    write_records_file(&layout.records(), &records)?;
    write_json(&layout.ingest_report(), &reports)?;
    let rejected: usize = reports.iter().map(IngestReport::rejected).sum();
    println!(
        "ingest: {} files, {} records accepted, {} rejected -> {}",
        files.len(),
        records.len(),
        rejected,
        layout.records().display()
    );
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDates {
    pub assignment: SplitAssignment,
    pub train: Vec<NaiveDate>,
    pub val: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
}

pub fn build(cfg: &PipelineConfig) -> Result<usize> {
    let layout = Layout::new(cfg);
    let (records, _) = parse_ais_csv(&layout.records(), &cfg.region)
        .with_context(|| "reading canonical records; run `ingest` first")?;
    let mut snapshots = build_snapshots(&records, &cfg.region, cfg.k)?;
    compute_labels(&mut snapshots)?;
    let lab = labeled(&snapshots);
    let corr = correlation_table(&lab)?;
    clear_prefixed(&layout.store(), "snapshot_")?;
    write_store(&layout.store(), &snapshots, &corr, cfg.k, cfg.region.cell_size)?;

    let split = chronological_split(lab.len(), cfg.split)?;
    let dates = |r: &std::ops::Range<usize>| lab[r.clone()].iter().map(|s| s.date).collect();
    write_json(
        &layout.split(),
        &SplitDates {
            train: dates(&split.train),
            val: dates(&split.val),
            test: dates(&split.test),
            assignment: split.clone(),
        },
    )?;
    println!(
        "build: {} snapshots ({} labeled), split {}/{}/{}, positive rate {:.3}",
        snapshots.len(),
        lab.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        corr.positive_rate
    );
    for (name, r) in corr.features.iter().zip(&corr.r) {
        println!("  r({name}) = {r:+.3}");
    }
    Ok(snapshots.len())
}

/// Labeled snapshots from the store and their chronological split.
fn load_split(cfg: &PipelineConfig) -> Result<(Vec<DailySnapshot>, SplitAssignment)> {
    let layout = Layout::new(cfg);
    let (_, snapshots) = read_store(&layout.store()).with_context(|| "reading snapshot store; run `build` first")?;
    let lab = labeled(&snapshots);
    let split = chronological_split(lab.len(), cfg.split)?;
    Ok((lab, split))
}

pub fn train(cfg: &PipelineConfig, model: ModelKind) -> Result<Checkpoint> {
    let layout = Layout::new(cfg);
    let (lab, split) = load_split(cfg)?;
    let tc = cfg.train_config(model);
    let trained = train_model::<f64>(&lab[split.train.clone()], &lab[split.val.clone()], &tc)?;
    let ckpt = trained.checkpoint()?;
    let path = layout.checkpoint(model);
    std::fs::create_dir_all(path.parent().expect("checkpoint dir"))?;
    ckpt.save(&path)?;
    write_history_file(&layout.history(model), &trained.history)?;
    println!(
        "train {}: best epoch {} of {}, val AUC {:.3}, threshold {:.4} -> {}",
        model,
        trained.best_epoch,
        tc.epochs_max,
        trained.val_auc,
        trained.threshold,
        path.display()
    );
    Ok(ckpt)
}

/// Test-partition probabilities for a checkpoint, temporal state warmed up
/// through the train and validation days.
fn test_predictions(
    ckpt: &Checkpoint,
    lab: &[DailySnapshot],
    split: &SplitAssignment,
) -> Result<Vec<searisk_core::train::SnapshotPrediction<f64>>> {
    let params = ckpt.to_params::<f64>()?;
    Ok(predict_sequence(&params, &ckpt.config, &lab[..split.test.start], &lab[split.test.clone()])?)
}

fn load_checkpoint(cfg: &PipelineConfig, model: ModelKind) -> Result<Checkpoint> {
    let path = Layout::new(cfg).checkpoint(model);
    Checkpoint::load(&path).with_context(|| format!("loading {}; run `train --model {model}` first", path.display()))
}

/// Evaluate the given models (or every model with a checkpoint) on the test partition.
pub fn eval(cfg: &PipelineConfig, models: Option<&[ModelKind]>) -> Result<Vec<EvalReport>> {
    let layout = Layout::new(cfg);
    let (lab, split) = load_split(cfg)?;
    let labels: Vec<u8> = lab[split.test.clone()]
        .iter()
        .flat_map(|s| s.labels.clone().unwrap_or_default())
        .collect();
    let candidates: Vec<ModelKind> = match models {
        Some(m) => m.to_vec(),
        None => ModelKind::ALL.into_iter().filter(|m| layout.checkpoint(*m).exists()).collect(),
    };
    if candidates.is_empty() {
        bail!("no checkpoints to evaluate; run `train` first");
    }
    let mut reports = Vec::new();
    for model in candidates {
        let ckpt = load_checkpoint(cfg, model)?;
        let probs: Vec<f64> = test_predictions(&ckpt, &lab, &split)?
            .into_iter()
            .flat_map(|p| p.probs)
            .collect();
        let threshold = ckpt.threshold.context("checkpoint has no decision threshold")?;
        let report = evaluate(model.label(), &probs, &labels, threshold)?;
        write_json(&layout.eval_dir().join(format!("{}.json", model.name())), &report)?;
        reports.push(report);
    }
    let table = comparison_table(&reports);
    std::fs::write(layout.eval_dir().join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(reports)
}

fn backend(cfg: &PipelineConfig) -> Result<Box<dyn GenerationBackend>> {
    Ok(match cfg.backend.kind {
        BackendKind::Template => Box::new(TemplateBackend),
        BackendKind::Remote => Box::new(RemoteBackend::new(cfg.backend.remote.clone())?),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExplainSummary {
    pub evidence: usize,
    pub reports: usize,
    pub failed_validation: usize,
    pub transport_errors: usize,
}

/// Evidence for the test partition under the TGAT checkpoint, then one
/// report per node-day.
pub fn explain(cfg: &PipelineConfig) -> Result<ExplainSummary> {
    let layout = Layout::new(cfg);
    let (lab, split) = load_split(cfg)?;
    let ckpt = load_checkpoint(cfg, ModelKind::Tgat)?;
    let corr = read_correlations(&layout.store())?;
    let preds = test_predictions(&ckpt, &lab, &split)?;
    let mut evidence: Vec<EvidenceRecord> = Vec::new();
    for (snap, pred) in lab[split.test.clone()].iter().zip(&preds) {
        let att = pred.attention.as_ref().context("TGAT prediction without attention")?;
        evidence.extend(extract_snapshot_evidence(snap, &pred.probs, att, &corr)?);
    }
    if let Some(limit) = cfg.explain_limit {
        evidence.truncate(limit);
    }
    std::fs::create_dir_all(layout.evidence().parent().expect("evidence dir"))?;
    write_evidence_file(&layout.evidence(), &evidence)?;

    let bundles = evidence.iter().map(build_prompt).collect::<searisk_report::Result<Vec<_>>>()?;
    let backend = backend(cfg)?;
    clear_prefixed(&layout.audit_dir(), "")?;
    let audit = AuditLog::new(&layout.audit_dir())?;
    clear_prefixed(&layout.reports_dir(), "report_")?;
    clear_prefixed(&layout.reports_dir(), "error_")?;
    std::fs::create_dir_all(layout.reports_dir())?;

    let mut summary = ExplainSummary {
        evidence: evidence.len(),
        ..ExplainSummary::default()
    };
    for (bundle, outcome) in bundles.iter().zip(generate_reports(&bundles, backend.as_ref(), cfg.backend.concurrency, Some(&audit))) {
        match outcome {
            Ok(GenerationOutcome::Report(r)) => {
                write_report(&layout.reports_dir(), &r)?;
                summary.reports += 1;
            }
            Ok(GenerationOutcome::Failed(a)) => {
                write_error_artifact(&layout.reports_dir(), &a)?;
                summary.failed_validation += 1;
            }
            Err(e) => {
                eprintln!("explain: {} {}: {e}", bundle.evidence.cell, bundle.evidence.date);
                summary.transport_errors += 1;
            }
        }
    }
    println!(
        "explain: {} evidence records, {} reports, {} failed validation, {} transport errors",
        summary.evidence, summary.reports, summary.failed_validation, summary.transport_errors
    );
    if summary.transport_errors > 0 {
        bail!("{} report(s) could not be generated", summary.transport_errors);
    }
    Ok(summary)
}

pub fn validate(cfg: &PipelineConfig) -> Result<ConsistencySummary> {
    let layout = Layout::new(cfg);
    let evidence = read_evidence_file(&layout.evidence()).with_context(|| "reading evidence; run `explain` first")?;
    let reports = read_reports(&layout.reports_dir())?;
    let summary = validate_reports(&reports, &evidence)?;
    write_json(&layout.consistency(), &summary)?;
    print!("{}", failure_table(&summary));
    Ok(summary)
}

/// The whole chain. Returns the consistency summary for floor gating.
pub fn run_all(cfg: &PipelineConfig) -> Result<ConsistencySummary> {
    if cfg.data.source == Source::Synthetic {
        synth(cfg)?;
    }
    ingest(cfg)?;
    build(cfg)?;
    let mut models = cfg.models.clone();
    if !models.contains(&ModelKind::Tgat) {
        // evidence needs attention logits
        models.push(ModelKind::Tgat);
    }
    for &m in &models {
        train(cfg, m)?;
    }
    eval(cfg, Some(&models))?;
    explain(cfg)?;
    validate(cfg)
}
