//! Per-node evidence: the five largest-|z| feature drivers with their risk
//! directions, and the two spatial neighbours carrying the most attention.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CellId;
use crate::nn::AttentionLogits;
use crate::scalar::Scalar;
use crate::snapshot::{CorrelationTable, DailySnapshot, FEATURE_NAMES, NUM_FEATURES};

pub const TOP_DRIVERS: usize = 5;
pub const TOP_NEIGHBORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "increase risk")]
    Increase,
    #[serde(rename = "decrease risk")]
    Decrease,
}

impl Direction {
    /// `increase` iff `z * r > 0`.
    pub fn from_signs(z: f64, r: f64) -> Self {
        if z * r > 0.0 {
            Direction::Increase
        } else {
            Direction::Decrease
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Increase => "increase risk",
            Direction::Decrease => "decrease risk",
        }
    }

    pub fn flipped(&self) -> Self {
        match self {
            Direction::Increase => Direction::Decrease,
            Direction::Decrease => Direction::Increase,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "increase risk" => Some(Direction::Increase),
            "decrease risk" => Some(Direction::Decrease),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub feature: String,
    pub z: f64,
    pub direction: Direction,
    /// Dataset-level point-biserial correlation.
    pub r: f64,
    /// Set when `z * r == 0`, i.e. the direction carries no signal.
    pub weak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEvidence {
    pub cell: CellId,
    pub weight: f64,
    pub feature: String,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub cell: CellId,
    pub date: NaiveDate,
    pub probability: f64,
    pub drivers: Vec<Driver>,
    pub neighbors: Vec<NeighborEvidence>,
    /// True when fewer than two spatial neighbours were available.
    #[serde(default)]
    pub neighbor_shortfall: bool,
}

impl EvidenceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.drivers.len() != TOP_DRIVERS {
            return Err(Error::InvalidInput(format!(
                "evidence for {} {} has {} drivers",
                self.cell,
                self.date,
                self.drivers.len()
            )));
        }
        if self.neighbors.is_empty() || self.neighbors.len() > TOP_NEIGHBORS {
            return Err(Error::InvalidInput(format!("evidence for {} has no neighbours", self.cell)));
        }
        if self.neighbor_shortfall != (self.neighbors.len() < TOP_NEIGHBORS) {
            return Err(Error::InvalidInput("neighbour shortfall flag is inconsistent".into()));
        }
        if !(self.probability > 0.0 && self.probability < 1.0) {
            return Err(Error::InvalidInput(format!("probability {} outside (0, 1)", self.probability)));
        }
        Ok(())
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `w_ij = softmax_j(sum_m e_ij^(m))` over node `i`'s spatial neighbours (self excluded).
pub fn attention_proxy_weights<T: Scalar>(att: &AttentionLogits<T>, node: usize) -> Result<Vec<(usize, f64)>> {
    if node >= att.graph.num_nodes() {
        return Err(Error::InvalidInput(format!("node {node} outside the attention graph")));
    }
    let summed: Vec<(usize, f64)> = att
        .node_logits(node)
        .into_iter()
        .filter(|(j, _)| *j != node)
        .map(|(j, heads)| {
            let total: T = heads.into_iter().sum();
            (j, total.to_f64().unwrap_or(f64::NAN))
        })
        .collect();
    if summed.is_empty() {
        return Err(Error::InvalidInput(format!("node {node} has no spatial neighbours")));
    }
    let logits: Vec<f64> = summed.iter().map(|(_, l)| *l).collect();
    Ok(summed.iter().map(|(j, _)| *j).zip(softmax(&logits)).collect())
}

/// Feature indices ordered by descending |z|, ties in canonical order.
fn ranked_features(z: &[f64; NUM_FEATURES]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..NUM_FEATURES).collect();
    idx.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    idx
}

pub fn build_evidence_record(
    snap: &DailySnapshot,
    node: usize,
    probability: f64,
    weights: &[(usize, f64)],
    correlations: &CorrelationTable,
) -> Result<EvidenceRecord> {
    correlations.validate()?;
    let z = snap
        .z_features
        .get(node)
        .ok_or_else(|| Error::InvalidInput(format!("node {node} outside snapshot {}", snap.date)))?;
    if weights.is_empty() {
        return Err(Error::InvalidInput(format!("node {node} has no neighbour weights")));
    }

    let drivers = ranked_features(z)
        .into_iter()
        .take(TOP_DRIVERS)
        .map(|c| {
            let r = correlations.get(c);
            Driver {
                feature: FEATURE_NAMES[c].to_string(),
                z: z[c],
                direction: Direction::from_signs(z[c], r),
                r,
                weak: z[c] * r == 0.0,
            }
        })
        .collect();

    let mut ranked: Vec<(usize, f64)> = weights.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(snap.nodes[a.0].cmp(&snap.nodes[b.0])));
    let neighbors: Vec<NeighborEvidence> = ranked
        .into_iter()
        .take(TOP_NEIGHBORS)
        .map(|(j, w)| {
            let zj = &snap.z_features[j];
            let top = ranked_features(zj)[0];
            NeighborEvidence {
                cell: snap.nodes[j],
                weight: w,
                feature: FEATURE_NAMES[top].to_string(),
                z: zj[top],
            }
        })
        .collect();

    Ok(EvidenceRecord {
        cell: snap.nodes[node],
        date: snap.date,
        probability,
        neighbor_shortfall: neighbors.len() < TOP_NEIGHBORS,
        drivers,
        neighbors,
    })
}

/// Evidence for every node of one snapshot, in node order.
pub fn extract_snapshot_evidence<T: Scalar>(
    snap: &DailySnapshot,
    probs: &[T],
    attention: &AttentionLogits<T>,
    correlations: &CorrelationTable,
) -> Result<Vec<EvidenceRecord>> {
    if probs.len() != snap.len() || attention.graph.num_nodes() != snap.len() {
        return Err(Error::Shape(format!("predictions do not match snapshot {}", snap.date)));
    }
    (0..snap.len())
        .map(|i| {
            let w = attention_proxy_weights(attention, i)?;
            let p = probs[i].to_f64().unwrap_or(f64::NAN);
            build_evidence_record(snap, i, p, &w, correlations)
        })
        .collect()
}

pub fn write_evidence_jsonl<W: Write>(mut w: W, records: &[EvidenceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<evidence>", e))?;
    }
    w.flush().map_err(|e| Error::io("<evidence>", e))
}

pub fn read_evidence_jsonl<R: BufRead>(r: R) -> Result<Vec<EvidenceRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<evidence>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_evidence_file(path: &Path, records: &[EvidenceRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_evidence_jsonl(std::io::BufWriter::new(file), records)
}

pub fn read_evidence_file(path: &Path) -> Result<Vec<EvidenceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_evidence_jsonl(std::io::BufReader::new(file))
}
