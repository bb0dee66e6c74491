//! Daily graph snapshots: per-cell features, escalation labels, z-scores,
//! kNN edges, chronological splits and dataset-level correlations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{assign_cell, AisRecord, CellId, RegionSpec};

pub const NUM_FEATURES: usize = 10;

/// Canonical feature order. Every feature matrix column follows it.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "mean_sog",
    "std_sog",
    "slow_ratio",
    "anchor_ratio",
    "vessel_count",
    "cargo_ratio",
    "tanker_ratio",
    "mean_length",
    "mean_draft",
    "cog_variance",
];

pub const SLOW_RATIO: usize = 2;
pub const MEAN_SOG: usize = 0;

/// Broadcasts slower than this count as slow.
pub const SLOW_SOG_KNOTS: f64 = 2.0;
/// Anchoring fallback when no navigational status is reported.
pub const ANCHOR_SOG_KNOTS: f64 = 0.2;
pub const NAV_STATUS_AT_ANCHOR: u8 = 1;
/// Days with fewer active cells are discarded.
pub const MIN_ACTIVE_NODES: usize = 10;
pub const DEFAULT_K: usize = 8;

pub type FeatureRow = [f64; NUM_FEATURES];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

/// The ten aggregated features of one active cell-day.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_sog: f64,
    pub std_sog: f64,
    pub slow_ratio: f64,
    pub anchor_ratio: f64,
    pub vessel_count: f64,
    pub cargo_ratio: f64,
    pub tanker_ratio: f64,
    pub mean_length: f64,
    pub mean_draft: f64,
    pub cog_variance: f64,
}

impl FeatureVector {
    pub fn to_row(&self) -> FeatureRow {
        [
            self.mean_sog,
            self.std_sog,
            self.slow_ratio,
            self.anchor_ratio,
            self.vessel_count,
            self.cargo_ratio,
            self.tanker_ratio,
            self.mean_length,
            self.mean_draft,
            self.cog_variance,
        ]
    }

    pub fn from_row(r: &FeatureRow) -> Self {
        FeatureVector {
            mean_sog: r[0],
            std_sog: r[1],
            slow_ratio: r[2],
            anchor_ratio: r[3],
            vessel_count: r[4],
            cargo_ratio: r[5],
            tanker_ratio: r[6],
            mean_length: r[7],
            mean_draft: r[8],
            cog_variance: r[9],
        }
    }
}

fn is_cargo(code: u16) -> bool {
    (70..=79).contains(&code)
}

fn is_tanker(code: u16) -> bool {
    (80..=89).contains(&code)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregate one cell-day of broadcasts.
///
/// Kinematic ratios are over broadcasts; cargo and tanker ratios are over
/// distinct vessels with a known ship type.
pub fn compute_cell_features(records: &[AisRecord]) -> Result<FeatureVector> {
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate an empty cell-day".into()));
    }
    let n = records.len() as f64;
    let mean_sog = mean_of(records.iter().map(|r| r.sog));
    let var_sog = mean_of(records.iter().map(|r| (r.sog - mean_sog).powi(2)));
    let slow = records.iter().filter(|r| r.sog < SLOW_SOG_KNOTS).count() as f64;
    let anchored = records
        .iter()
        .filter(|r| match r.nav_status {
            Some(status) => status == NAV_STATUS_AT_ANCHOR,
            None => r.sog < ANCHOR_SOG_KNOTS,
        })
        .count() as f64;

    let mut vessel_types: BTreeMap<u64, Option<u16>> = BTreeMap::new();
    for r in records {
        let entry = vessel_types.entry(r.mmsi).or_insert(None);
        if entry.is_none() {
            *entry = r.vessel_type;
        }
    }
    let typed: Vec<u16> = vessel_types.values().filter_map(|t| *t).collect();
    let type_ratio = |pred: fn(u16) -> bool| {
        if typed.is_empty() {
            0.0
        } else {
            typed.iter().filter(|&&c| pred(c)).count() as f64 / typed.len() as f64
        }
    };

    let (cos_sum, sin_sum, n_cog) = records
        .iter()
        .filter_map(|r| r.cog)
        .fold((0.0, 0.0, 0usize), |(c, s, k), deg| {
            let rad = deg.to_radians();
            (c + rad.cos(), s + rad.sin(), k + 1)
        });
    let cog_variance = if n_cog == 0 {
        0.0
    } else {
        let (c, s) = (cos_sum / n_cog as f64, sin_sum / n_cog as f64);
        (1.0 - (c * c + s * s).sqrt()).clamp(0.0, 1.0)
    };

    Ok(FeatureVector {
        mean_sog,
        std_sog: var_sog.sqrt(),
        slow_ratio: slow / n,
        anchor_ratio: anchored / n,
        vessel_count: vessel_types.len() as f64,
        cargo_ratio: type_ratio(is_cargo),
        tanker_ratio: type_ratio(is_tanker),
        mean_length: mean_of(records.iter().filter_map(|r| r.length)),
        mean_draft: mean_of(records.iter().filter_map(|r| r.draft)),
        cog_variance,
    })
}

/// Column means and population standard deviations used for normalization.
/// A zero std marks a degenerate column whose z-scores are all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: FeatureRow,
    pub std: FeatureRow,
}

impl NormStats {
    pub fn denormalize(&self, z: &FeatureRow) -> FeatureRow {
        std::array::from_fn(|c| z[c] * self.std[c] + self.mean[c])
    }
}

const DEGENERATE_STD: f64 = 1e-12;

/// Column-wise z-scores over the snapshot's active nodes (population std).
pub fn zscore_normalize(raw: &[FeatureRow]) -> Result<(Vec<FeatureRow>, NormStats)> {
    if raw.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "z-score normalization needs at least 2 nodes, got {}",
            raw.len()
        )));
    }
    let n = raw.len() as f64;
    let mut mean = [0.0; NUM_FEATURES];
    let mut std = [0.0; NUM_FEATURES];
    for c in 0..NUM_FEATURES {
        let m = raw.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n;
        mean[c] = m;
        std[c] = if var.sqrt() < DEGENERATE_STD { 0.0 } else { var.sqrt() };
    }
    let z = raw
        .iter()
        .map(|r| {
            std::array::from_fn(|c| {
                if std[c] == 0.0 {
                    0.0
                } else {
                    (r[c] - mean[c]) / std[c]
                }
            })
        })
        .collect();
    Ok((z, NormStats { mean, std }))
}

/// Directed edge: `dst` receives messages from `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl Serialize for Edge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.src, self.dst].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [src, dst] = <[usize; 2]>::deserialize(d)?;
        Ok(Edge { src, dst })
    }
}

/// kNN edges over cell centroids: every node receives from its `min(k, |V|-1)`
/// nearest other nodes, ties going to the lexicographically smaller cell.
///
/// Output is grouped by receiving node in input order, neighbours nearest first.
pub fn build_knn_edges(nodes: &[CellId], k: usize) -> Result<Vec<Edge>> {
    if nodes.len() < 2 {
        return Err(Error::InvalidInput("kNN graph needs at least 2 nodes".into()));
    }
    let unique: HashSet<&CellId> = nodes.iter().collect();
    if unique.len() != nodes.len() {
        return Err(Error::InvalidInput("duplicate cell in node list".into()));
    }
    let take = k.min(nodes.len() - 1);
    let mut edges = Vec::with_capacity(nodes.len() * take);
    let mut candidates: Vec<usize> = Vec::with_capacity(nodes.len());
    for (i, cell) in nodes.iter().enumerate() {
        candidates.clear();
        candidates.extend((0..nodes.len()).filter(|&j| j != i));
        candidates.sort_by_key(|&j| (cell.dist2(&nodes[j]), nodes[j]));
        edges.extend(candidates[..take].iter().map(|&j| Edge { src: j, dst: i }));
    }
    Ok(edges)
}

/// One UTC day's graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySnapshot {
    pub date: NaiveDate,
    pub nodes: Vec<CellId>,
    pub raw_features: Vec<FeatureRow>,
    pub z_features: Vec<FeatureRow>,
    pub stats: NormStats,
    pub edges: Vec<Edge>,
    /// Absent on the final snapshot of a sequence.
    pub labels: Option<Vec<u8>>,
}

impl DailySnapshot {
    /// Assemble a snapshot from per-cell features. Nodes are sorted canonically.
    pub fn from_cells(date: NaiveDate, mut cells: Vec<(CellId, FeatureVector)>, k: usize) -> Result<Self> {
        cells.sort_by_key(|(c, _)| *c);
        let nodes: Vec<CellId> = cells.iter().map(|(c, _)| *c).collect();
        let raw_features: Vec<FeatureRow> = cells.iter().map(|(_, f)| f.to_row()).collect();
        let (z_features, stats) = zscore_normalize(&raw_features)?;
        let edges = build_knn_edges(&nodes, k)?;
        Ok(DailySnapshot {
            date,
            nodes,
            raw_features,
            z_features,
            stats,
            edges,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, cell: &CellId) -> Option<usize> {
        self.nodes.binary_search(cell).ok()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// In-neighbour lists indexed by receiving node.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            nbrs[e.dst].push(e.src);
        }
        nbrs
    }

    /// Structural checks: sizes agree, edges in range, no self or duplicate edges.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.raw_features.len() != n || self.z_features.len() != n {
            return Err(Error::Shape(format!("{}: feature rows do not match {n} nodes", self.date)));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n || labels.iter().any(|&y| y > 1) {
                return Err(Error::Shape(format!("{}: labels malformed", self.date)));
            }
        }
        if self.nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!("{}: nodes not in canonical order", self.date)));
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n || e.src == e.dst || !seen.insert(*e) {
                return Err(Error::InvalidInput(format!("{}: bad edge {e:?}", self.date)));
            }
        }
        Ok(())
    }
}

/// Group records by UTC day and cell, aggregate features, and build one
/// snapshot per day with at least [`MIN_ACTIVE_NODES`] active cells.
pub fn build_snapshots(records: &[AisRecord], region: &RegionSpec, k: usize) -> Result<Vec<DailySnapshot>> {
    let mut by_day: BTreeMap<NaiveDate, BTreeMap<CellId, Vec<AisRecord>>> = BTreeMap::new();
    for r in records {
        let cell = assign_cell(r.lat, r.lon, region)?;
        by_day.entry(r.date()).or_default().entry(cell).or_default().push(r.clone());
    }
    let mut snapshots = Vec::new();
    for (date, cells) in by_day {
        if cells.len() < MIN_ACTIVE_NODES {
            continue;
        }
        let features = cells
            .into_iter()
            .map(|(cell, mut recs)| {
                crate::ingest::canonical_sort(&mut recs);
                compute_cell_features(&recs).map(|f| (cell, f))
            })
            .collect::<Result<Vec<_>>>()?;
        snapshots.push(DailySnapshot::from_cells(date, features, k)?);
    }
    Ok(snapshots)
}

/// Escalation labels: `1` iff the cell is active in the next snapshot and its
/// raw slow ratio strictly increases. The final snapshot is left unlabeled.
pub fn compute_labels(snapshots: &mut [DailySnapshot]) -> Result<()> {
    if snapshots.windows(2).any(|w| w[0].date >= w[1].date) {
        return Err(Error::InvalidInput("snapshots must be in strictly increasing date order".into()));
    }
    for t in 0..snapshots.len() {
        let labels = if t + 1 == snapshots.len() {
            None
        } else {
            let next = &snapshots[t + 1];
            let cur = &snapshots[t];
            Some(
                cur.nodes
                    .iter()
                    .zip(&cur.raw_features)
                    .map(|(cell, row)| match next.node_index(cell) {
                        Some(j) if next.raw_features[j][SLOW_RATIO] > row[SLOW_RATIO] => 1,
                        _ => 0,
                    })
                    .collect(),
            )
        };
        snapshots[t].labels = labels;
    }
    Ok(())
}

/// Chronological train/validation/test partition of labeled snapshot indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// `train = floor(f_train * n)`, `val = floor(f_val * n)`, test takes the rest;
/// every partition is then forced nonempty by borrowing from train.
pub fn chronological_split(n: usize, fractions: SplitFractions) -> Result<SplitAssignment> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 labeled snapshots, got {n}")));
    }
    let total = fractions.train + fractions.val + fractions.test;
    if [fractions.train, fractions.val, fractions.test].iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("invalid split fractions {fractions:?}")));
    }
    // The epsilon keeps exact products such as 0.7 * 10 from flooring to 6.
    let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let mut train = floor(fractions.train).max(1);
    let val = floor(fractions.val).max(1);
    while train + val >= n {
        train -= 1;
    }
    if train == 0 {
        return Err(Error::InvalidInput(format!("cannot split {n} snapshots into nonempty partitions")));
    }
    Ok(SplitAssignment {
        train: 0..train,
        val: train..train + val,
        test: train + val..n,
    })
}

/// Point-biserial correlation `(M1 - M0) / s * sqrt(n1 n0 / n^2)` with population `s`.
pub fn point_biserial(values: &[f64], labels: &[u8]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::Shape(format!("{} values vs {} labels", values.len(), labels.len())));
    }
    let n = values.len();
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = n - n1;
    if n < 2 || n1 == 0 || n0 == 0 {
        return Err(Error::SingleClass("point-biserial correlation is undefined".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if s == 0.0 {
        return Err(Error::InvalidInput("constant feature has no correlation".into()));
    }
    let class_mean = |class: u8, count: usize| {
        values.iter().zip(labels).filter(|(_, &y)| y == class).map(|(v, _)| v).sum::<f64>() / count as f64
    };
    let (m1, m0) = (class_mean(1, n1), class_mean(0, n0));
    let r = (m1 - m0) / s * ((n1 as f64 * n0 as f64) / (n as f64 * n as f64)).sqrt();
    Ok(r.clamp(-1.0, 1.0))
}

/// Dataset-level feature/label correlations, one entry per canonical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub features: Vec<String>,
    pub r: Vec<f64>,
    pub n_samples: usize,
    pub positive_rate: f64,
}

impl CorrelationTable {
    pub fn get(&self, feature: usize) -> f64 {
        self.r[feature]
    }

    pub fn validate(&self) -> Result<()> {
        if self.r.len() != NUM_FEATURES || self.features.len() != NUM_FEATURES {
            return Err(Error::Shape(format!("correlation table has {} entries", self.r.len())));
        }
        if self.features.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
            return Err(Error::InvalidInput("correlation table feature order differs".into()));
        }
        if self.r.iter().any(|r| !(r.abs() <= 1.0)) {
            return Err(Error::InvalidInput("correlation outside [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Correlate every z-scored feature with the label over all labeled node-days.
/// Constant features get `r = 0`.
pub fn correlation_table(snapshots: &[DailySnapshot]) -> Result<CorrelationTable> {
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); NUM_FEATURES];
    for s in snapshots {
        let Some(ys) = &s.labels else { continue };
        labels.extend_from_slice(ys);
        for row in &s.z_features {
            for (c, col) in columns.iter_mut().enumerate() {
                col.push(row[c]);
            }
        }
    }
    let r = columns
        .iter()
        .map(|col| match point_biserial(col, &labels) {
            Ok(r) => Ok(r),
            Err(Error::InvalidInput(_)) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    Ok(CorrelationTable {
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        r,
        n_samples: labels.len(),
        positive_rate: positives as f64 / labels.len() as f64,
    })
}

/// Labeled snapshots only, in order. These are the supervised sequence the split indexes.
pub fn labeled(snapshots: &[DailySnapshot]) -> Vec<DailySnapshot> {
    snapshots.iter().filter(|s| s.is_labeled()).cloned().collect()
}

pub const STORE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORRELATIONS_FILE: &str = "correlations.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub date: NaiveDate,
    pub file: String,
    pub n_nodes: usize,
    pub labeled: bool,
}

/// Ordered list of snapshot documents in a store directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub k: usize,
    pub cell_size: f64,
    pub snapshots: Vec<ManifestEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write one JSON document per snapshot plus the manifest and correlation table.
pub fn write_store(
    dir: &Path,
    snapshots: &[DailySnapshot],
    correlations: &CorrelationTable,
    k: usize,
    cell_size: f64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let file = format!("snapshot_{}.json", s.date);
        write_json(&dir.join(&file), s)?;
        entries.push(ManifestEntry {
            date: s.date,
            file,
            n_nodes: s.len(),
            labeled: s.is_labeled(),
        });
    }
    write_json(&dir.join(CORRELATIONS_FILE), correlations)?;
    let manifest = Manifest {
        version: STORE_VERSION,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        k,
        cell_size,
        snapshots: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Read every snapshot listed in the manifest, in manifest order, validating each.
pub fn read_store(dir: &Path) -> Result<(Manifest, Vec<DailySnapshot>)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.version != STORE_VERSION {
        return Err(Error::InvalidInput(format!("unsupported store version {}", manifest.version)));
    }
    if manifest.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
        return Err(Error::InvalidInput("store feature order differs from this build".into()));
    }
    let snapshots = manifest
        .snapshots
        .iter()
        .map(|e| {
            let s: DailySnapshot = read_json(&dir.join(&e.file))?;
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, snapshots))
}

pub fn read_correlations(dir: &Path) -> Result<CorrelationTable> {
    let table: CorrelationTable = read_json(&dir.join(CORRELATIONS_FILE))?;
    table.validate()?;
    Ok(table)
}

/// Map from cell to row index, for joining across days.
pub fn node_lookup(s: &DailySnapshot) -> HashMap<CellId, usize> {
    s.nodes.iter().enumerate().map(|(i, c)| (*c, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn rec(mmsi: u64, sog: f64, cog: Option<f64>) -> AisRecord {
        AisRecord {
            mmsi,
            timestamp: Utc.with_ymd_and_hms(2023, 1, 5, 12, 0, 0).unwrap(),
            lat: 33.7,
            lon: -118.2,
            sog,
            cog,
            vessel_type: None,
            nav_status: None,
            length: None,
            draft: None,
        }
    }

    #[test]
    fn identical_kinematics() {
        let recs: Vec<_> = (0..4).map(|i| rec(i, 1.0, Some(90.0))).collect();
        let f = compute_cell_features(&recs).unwrap();
        assert_eq!(f.mean_sog, 1.0);
        assert_eq!(f.std_sog, 0.0);
        assert_eq!(f.slow_ratio, 1.0);
        assert_abs_diff_eq!(f.cog_variance, 0.0, epsilon = 1e-12);
        assert_eq!(f.vessel_count, 4.0);
    }

    #[test]
    fn circular_variance_cases() {
        let f = compute_cell_features(&[rec(1, 5.0, Some(0.0)), rec(2, 5.0, Some(180.0))]).unwrap();
        assert_abs_diff_eq!(f.cog_variance, 1.0, epsilon = 1e-12);
        let f = compute_cell_features(&[rec(1, 5.0, Some(0.0)), rec(2, 5.0, Some(90.0))]).unwrap();
        assert_abs_diff_eq!(f.cog_variance, 0.29289321881345254, epsilon = 1e-12);
    }

    #[test]
    fn anchor_type_and_optional_fields() {
        let mut a = rec(1, 0.1, None);
        a.nav_status = Some(0); // underway despite low speed
        a.vessel_type = Some(71);
        a.draft = Some(10.0);
        let mut b = rec(1, 0.1, None);
        b.vessel_type = Some(81); // same vessel, first known type wins
        let mut c = rec(2, 0.05, None); // no status: speed fallback
        c.vessel_type = Some(84);
        c.length = Some(200.0);
        let d = rec(3, 3.0, None);
        let f = compute_cell_features(&[a, b, c, d]).unwrap();
        assert_eq!(f.anchor_ratio, 2.0 / 4.0);
        assert_eq!(f.vessel_count, 3.0);
        assert_eq!(f.cargo_ratio, 0.5);
        assert_eq!(f.tanker_ratio, 0.5);
        assert_eq!(f.mean_length, 200.0);
        assert_eq!(f.mean_draft, 10.0);
        assert_eq!(f.cog_variance, 0.0);
        assert!(compute_cell_features(&[]).is_err());
    }

    fn snap(day: u32, cells: &[(i32, f64)]) -> DailySnapshot {
        let cells = cells
            .iter()
            .map(|&(lat, slow)| {
                let mut f = FeatureVector::default();
                f.slow_ratio = slow;
                f.mean_sog = lat as f64;
                (CellId::new(lat, -1180), f)
            })
            .collect();
        DailySnapshot::from_cells(NaiveDate::from_ymd_opt(2023, 1, day).unwrap(), cells, 8).unwrap()
    }

    #[test]
    fn labels_follow_strict_increase_and_presence() {
        let mut snaps = vec![
            snap(1, &[(1, 0.30), (2, 0.30), (3, 0.5)]),
            snap(2, &[(1, 0.40), (2, 0.30), (4, 0.9)]),
        ];
        compute_labels(&mut snaps).unwrap();
        assert_eq!(snaps[0].labels.as_deref(), Some(&[1u8, 0, 0][..]));
        assert_eq!(snaps[1].labels, None);

        let mut unordered = vec![snaps[1].clone(), snaps[0].clone()];
        assert!(compute_labels(&mut unordered).is_err());
    }

    #[test]
    fn zscore_examples() {
        let rows: Vec<FeatureRow> = vec![[1.0; 10], [3.0; 10]];
        let (z, stats) = zscore_normalize(&rows).unwrap();
        assert_eq!(z[0][0], -1.0);
        assert_eq!(z[1][0], 1.0);
        assert_eq!(stats.std[0], 1.0);

        let rows: Vec<FeatureRow> = vec![[5.0; 10]; 3];
        let (z, stats) = zscore_normalize(&rows).unwrap();
        assert!(z.iter().all(|r| r.iter().all(|&v| v == 0.0)));
        assert_eq!(stats.std[3], 0.0);
        assert!(zscore_normalize(&rows[..1]).is_err());
    }

    #[test]
    fn knn_examples() {
        let nodes = [CellId::new(0, 0), CellId::new(0, 1), CellId::new(0, 3)];
        let edges = build_knn_edges(&nodes, 8).unwrap();
        for i in 0..3 {
            assert_eq!(edges.iter().filter(|e| e.dst == i).count(), 2);
        }
        let edges = build_knn_edges(&nodes, 1).unwrap();
        assert_eq!(edges.iter().find(|e| e.dst == 1).unwrap().src, 0);

        // (1,1) is equidistant from (0,1) and (1,0); (0,1) sorts first.
        let nodes = [CellId::new(1, 0), CellId::new(0, 1), CellId::new(1, 1)];
        let edges = build_knn_edges(&nodes, 1).unwrap();
        assert_eq!(edges.iter().find(|e| e.dst == 2).unwrap().src, 1);
    }

    #[test]
    fn split_examples() {
        let f = SplitFractions::default();
        let s = chronological_split(89, f).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (62, 13, 14));
        assert_eq!(s.test.start + 1, 76);
        let s = chronological_split(10, f).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let s = chronological_split(3, f).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
        assert!(chronological_split(2, f).is_err());
    }

    #[test]
    fn point_biserial_examples() {
        assert_abs_diff_eq!(point_biserial(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0, epsilon = 1e-12);
        let r = point_biserial(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(r, (2.0 - 3.0) / 1.25f64.sqrt() * 0.25f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r, -0.4472135954999579, epsilon = 1e-12);
        assert!(matches!(point_biserial(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass(_))));
    }

    fn cells_strategy() -> impl Strategy<Value = Vec<CellId>> {
        proptest::collection::hash_set((0i32..15, -15i32..0), 2..40)
            .prop_map(|s| s.into_iter().map(|(a, b)| CellId::new(a, b)).collect())
    }

    proptest! {
        #[test]
        fn knn_degree_and_permutation_invariance(cells in cells_strategy(), k in 1usize..10, seed in any::<u64>()) {
            let mut sorted = cells.clone();
            sorted.sort();
            let edges = build_knn_edges(&sorted, k).unwrap();
            let expect = k.min(sorted.len() - 1);
            for i in 0..sorted.len() {
                let srcs: Vec<usize> = edges.iter().filter(|e| e.dst == i).map(|e| e.src).collect();
                prop_assert_eq!(srcs.len(), expect);
                prop_assert!(!srcs.contains(&i));
                let uniq: HashSet<_> = srcs.iter().collect();
                prop_assert_eq!(uniq.len(), srcs.len());
            }
            // shuffle, build, map back to cells: same edge set
            let mut shuffled = cells.clone();
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let as_cells = |nodes: &[CellId], es: &[Edge]| {
                let mut v: Vec<(CellId, CellId)> = es.iter().map(|e| (nodes[e.src], nodes[e.dst])).collect();
                v.sort();
                v
            };
            let other = build_knn_edges(&shuffled, k).unwrap();
            prop_assert_eq!(as_cells(&sorted, &edges), as_cells(&shuffled, &other));
        }

        #[test]
        fn zscores_center_and_reconstruct(rows in proptest::collection::vec(proptest::array::uniform10(-50.0f64..50.0), 2..30)) {
            let (z, stats) = zscore_normalize(&rows).unwrap();
            for c in 0..NUM_FEATURES {
                let n = z.len() as f64;
                let m = z.iter().map(|r| r[c]).sum::<f64>() / n;
                prop_assert!(m.abs() < 1e-9);
                if stats.std[c] > 0.0 {
                    let sd = (z.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
            for (zr, raw) in z.iter().zip(&rows) {
                let back = stats.denormalize(zr);
                for c in 0..NUM_FEATURES {
                    if stats.std[c] > 0.0 {
                        prop_assert!((back[c] - raw[c]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn split_is_chronological_and_nonempty(n in 3usize..=200) {
            let s = chronological_split(n, SplitFractions::default()).unwrap();
            prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
        }
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut snaps = vec![
            snap(1, &[(1, 0.3), (2, 0.2), (3, 0.1)]),
            snap(2, &[(1, 0.4), (2, 0.1), (3, 0.2)]),
            snap(3, &[(1, 0.1), (2, 0.1), (3, 0.3)]),
        ];
        compute_labels(&mut snaps).unwrap();
        let corr = correlation_table(&snaps).unwrap();
        corr.validate().unwrap();
        write_store(dir.path(), &snaps, &corr, 8, 0.1).unwrap();
        let (manifest, back) = read_store(dir.path()).unwrap();
        assert_eq!(manifest.snapshots.len(), 3);
        assert_eq!(back, snaps);
        assert_eq!(read_correlations(dir.path()).unwrap(), corr);
    }
}
