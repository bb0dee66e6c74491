use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use searisk_core::ingest::RegionSpec;
use searisk_core::nn::ModelKind;
use searisk_core::snapshot::{SplitFractions, DEFAULT_K};
use searisk_core::synth::{CongestionCenter, SynthConfig};
use searisk_core::train::TrainConfig;
use searisk_report::consistency::DEFAULT_FLOOR;
use searisk_report::generate::DEFAULT_CONCURRENCY;
use searisk_report::RemoteConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Noaa,
}

/// Traffic-generator settings. The region and seed come from the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub n_days: usize,
    pub n_vessels: usize,
    pub congestion_centers: Vec<CongestionCenter>,
    pub diffusion_rate: f64,
    pub broadcasts_per_day: usize,
    pub episode_days: usize,
    pub retention: f64,
    pub field_noise: f64,
    pub background_slow: f64,
    pub footprint_cells: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthOptions {
            n_days: s.n_days,
            n_vessels: s.n_vessels,
            congestion_centers: s.congestion_centers,
            diffusion_rate: s.diffusion_rate,
            broadcasts_per_day: s.broadcasts_per_day,
            episode_days: s.episode_days,
            retention: s.retention,
            field_noise: s.field_noise,
            background_slow: s.background_slow,
            footprint_cells: s.footprint_cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: Source,
    /// Directory of daily NOAA CSVs; required when `source = "noaa"`.
    pub noaa_dir: Option<PathBuf>,
    pub synthetic: SynthOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: Source::Synthetic,
            noaa_dir: None,
            synthetic: SynthOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Template,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub concurrency: usize,
    pub remote: RemoteConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Template,
            concurrency: DEFAULT_CONCURRENCY,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Drives both the traffic generator and model initialization/dropout.
    pub seed: u64,
    pub region: RegionSpec,
    pub k: usize,
    pub data: DataConfig,
    pub split: SplitFractions,
    pub train: TrainConfig,
    /// Models trained and compared by `run-all`.
    pub models: Vec<ModelKind>,
    pub backend: BackendConfig,
    /// Cap on node-days sent to report generation; `None` for the whole test partition.
    pub explain_limit: Option<usize>,
    pub consistency_floor: f64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            region: SynthConfig::default().region,
            k: DEFAULT_K,
            data: DataConfig::default(),
            split: SplitFractions::default(),
            train: TrainConfig::default(),
            models: ModelKind::ALL.to_vec(),
            backend: BackendConfig::default(),
            explain_limit: None,
            consistency_floor: DEFAULT_FLOOR,
            out_dir: PathBuf::from("searisk-out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative paths in the file are taken relative to the file itself
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.rebased(base))
    }

    fn rebased(mut self, base: &Path) -> Self {
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
        if let Some(dir) = &self.data.noaa_dir {
            if dir.is_relative() {
                self.data.noaa_dir = Some(base.join(dir));
            }
        }
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        self.train.validate()?;
        if self.models.is_empty() {
            bail!("at least one model must be listed");
        }
        if !(0.0..=1.0).contains(&self.consistency_floor) {
            bail!("consistency floor {} outside [0, 1]", self.consistency_floor);
        }
        if self.backend.concurrency == 0 {
            bail!("backend concurrency must be at least 1");
        }
        match self.data.source {
            Source::Synthetic => self.synth_config().validate()?,
            Source::Noaa => {
                let dir = self.data.noaa_dir.as_ref().context("data.noaa_dir is required for the noaa source")?;
                if !dir.is_dir() {
                    bail!("NOAA directory {} does not exist", dir.display());
                }
            }
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let o = &self.data.synthetic;
        SynthConfig {
            seed: self.seed,
            n_days: o.n_days,
            n_vessels: o.n_vessels,
            region: self.region.clone(),
            congestion_centers: o.congestion_centers.clone(),
            diffusion_rate: o.diffusion_rate,
            broadcasts_per_day: o.broadcasts_per_day,
            episode_days: o.episode_days,
            retention: o.retention,
            field_noise: o.field_noise,
            background_slow: o.background_slow,
            footprint_cells: o.footprint_cells,
        }
    }

    pub fn train_config(&self, model: ModelKind) -> TrainConfig {
        TrainConfig {
            model,
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Fixed layout under `out_dir`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout {
            root: cfg.out_dir.clone(),
        }
    }
    pub fn ais_dir(&self) -> PathBuf {
        self.root.join("ais")
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("records.csv")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn checkpoint(&self, model: ModelKind) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}.json", model.name()))
    }
    pub fn history(&self, model: ModelKind) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}_history.csv", model.name()))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn evidence(&self) -> PathBuf {
        self.root.join("evidence").join("evidence.jsonl")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn audit_dir(&self) -> PathBuf {
        self.root.join("audit")
    }
    pub fn consistency(&self) -> PathBuf {
        self.root.join("consistency.json")
    }
}
