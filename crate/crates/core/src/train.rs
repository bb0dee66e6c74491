//! Weighted-BCE training over chronological snapshots with Adam,
//! best-validation-AUC checkpointing and F1-optimal threshold selection.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::nn::{
    compute_gradients, forward, AttentionLogits, Batch, Checkpoint, LossFn, ModelConfig, ModelKind, ModelParams,
    PriorState,
};
use crate::scalar::Scalar;
use crate::snapshot::DailySnapshot;

const PROB_CLAMP: f64 = 1e-12;

/// Mean of `-[w y log p + (1 - y) log(1 - p)]` with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn weighted_bce(probs: &[f64], labels: &[u8], pos_weight: f64) -> Result<f64> {
    let bce = WeightedBce::new(labels.to_vec(), pos_weight)?;
    bce.value(ArrayView1::from(probs))
}

/// Class-weighted binary cross-entropy as a [`LossFn`].
#[derive(Debug, Clone)]
pub struct WeightedBce {
    pub labels: Vec<u8>,
    pub pos_weight: f64,
}

impl WeightedBce {
    pub fn new(labels: Vec<u8>, pos_weight: f64) -> Result<Self> {
        if !(pos_weight > 0.0 && pos_weight.is_finite()) {
            return Err(Error::InvalidInput(format!("pos_weight {pos_weight} must be positive")));
        }
        Ok(WeightedBce { labels, pos_weight })
    }

    fn check<T>(&self, probs: &ArrayView1<T>) -> Result<()> {
        if probs.len() != self.labels.len() || probs.is_empty() {
            return Err(Error::Shape(format!(
                "{} probabilities vs {} labels",
                probs.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> LossFn<T> for WeightedBce {
    fn value(&self, probs: ArrayView1<T>) -> Result<T> {
        self.check(&probs)?;
        let (lo, hi) = (T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP));
        let w = T::lit(self.pos_weight);
        let total: T = probs
            .iter()
            .zip(&self.labels)
            .map(|(&p, &y)| {
                let p = p.max(lo).min(hi);
                if y == 1 {
                    -w * p.ln()
                } else {
                    -(T::one() - p).ln()
                }
            })
            .sum();
        Ok(total / T::count(probs.len()))
    }

    fn grad(&self, probs: ArrayView1<T>) -> Result<Array1<T>> {
        self.check(&probs)?;
        let (lo, hi) = (T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP));
        let w = T::lit(self.pos_weight);
        let n = T::count(probs.len());
        Ok(Array1::from_iter(probs.iter().zip(&self.labels).map(|(&p, &y)| {
            if p < lo || p > hi {
                T::zero()
            } else if y == 1 {
                -w / (p * n)
            } else {
                T::one() / ((T::one() - p) * n)
            }
        })))
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with L2 weight decay folded into the gradient.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for (name, _, g) in &grad_tensors {
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` contains {bad}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let bias1 = T::one() - b1.powi(t);
    let bias2 = T::one() - b2.powi(t);
    let (lr, wd, eps) = (T::lit(lr), T::lit(weight_decay), T::lit(ADAM_EPS));

    let mut p_tensors = params.tensors_mut();
    let mut m_tensors = state.m.tensors_mut();
    let mut v_tensors = state.v.tensors_mut();
    if p_tensors.len() != grad_tensors.len() {
        return Err(Error::Shape("gradient structure differs from parameters".into()));
    }
    for (((p, g), m), v) in p_tensors
        .iter_mut()
        .zip(&grad_tensors)
        .zip(m_tensors.iter_mut())
        .zip(v_tensors.iter_mut())
    {
        if p.1.len() != g.2.len() {
            return Err(Error::Shape(format!("gradient of `{}` has the wrong size", p.0)));
        }
        for (((theta, &grad), mk), vk) in p.1.iter_mut().zip(g.2).zip(m.1.iter_mut()).zip(v.1.iter_mut()) {
            let grad = grad + wd * *theta;
            *mk = b1 * *mk + (T::one() - b1) * grad;
            *vk = b2 * *vk + (T::one() - b2) * grad * grad;
            let m_hat = *mk / bias1;
            let v_hat = *vk / bias2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Positive-class weight: a fixed constant or `(1 - pi) / pi` from the train split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosWeight {
    Fixed(f64),
    Auto,
}

impl Default for PosWeight {
    fn default() -> Self {
        PosWeight::Fixed(6.74)
    }
}

impl PosWeight {
    pub fn resolve(&self, train: &[DailySnapshot]) -> Result<f64> {
        match *self {
            PosWeight::Fixed(w) => Ok(w),
            PosWeight::Auto => {
                let (pos, n) = label_counts(train.iter());
                if pos == 0 || pos == n {
                    return Err(Error::SingleClass("cannot derive pos_weight from one class".into()));
                }
                let pi = pos as f64 / n as f64;
                Ok((1.0 - pi) / pi)
            }
        }
    }
}

impl Serialize for PosWeight {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PosWeight::Fixed(w) => s.serialize_f64(*w),
            PosWeight::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for PosWeight {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(PosWeight::Fixed(w)),
            Raw::Text(t) if t.eq_ignore_ascii_case("auto") => Ok(PosWeight::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("pos_weight must be a number or \"auto\", got {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs_max: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub pos_weight: PosWeight,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Tgat,
            epochs_max: 50,
            lr: 1e-3,
            weight_decay: 1e-4,
            pos_weight: PosWeight::default(),
            hidden: 128,
            heads: 4,
            mlp_hidden: 128,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.model, self.hidden, self.heads);
        cfg.mlp_hidden = self.mlp_hidden;
        cfg.dropout = self.dropout;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 {
            return Err(Error::InvalidInput("epochs_max must be at least 1".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidInput("lr must be positive and weight_decay nonnegative".into()));
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0) {
                return Err(Error::InvalidInput("pos_weight must be positive".into()));
            }
        }
        self.model_config().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    pub val_auc: f64,
    pub threshold: f64,
    pub pos_weight: f64,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_params(&self.config, &self.params)?;
        ckpt.threshold = Some(self.threshold);
        ckpt.best_epoch = Some(self.best_epoch);
        ckpt.val_auc = Some(self.val_auc);
        Ok(ckpt)
    }
}

/// Write `epoch,train_loss,val_auc` rows.
pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> Result<()> {
    let io = |e| Error::io("<history>", e);
    writeln!(w, "epoch,train_loss,val_auc").map_err(io)?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.val_auc).map_err(io)?;
    }
    Ok(())
}

pub fn write_history_file(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(std::io::BufWriter::new(file), history)
}

fn label_counts<'a>(snaps: impl Iterator<Item = &'a DailySnapshot>) -> (usize, usize) {
    snaps
        .filter_map(|s| s.labels.as_ref())
        .flatten()
        .fold((0, 0), |(p, n), &y| (p + y as usize, n + 1))
}

fn require_labels(snaps: &[DailySnapshot], what: &str) -> Result<Vec<u8>> {
    let mut all = Vec::new();
    for s in snaps {
        let labels = s
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{what} snapshot {} is unlabeled", s.date)))?;
        all.extend_from_slice(labels);
    }
    if !all.contains(&1) || !all.contains(&0) {
        return Err(Error::SingleClass(format!("{what} split needs positives and negatives")));
    }
    Ok(all)
}

fn step_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates
    let mut z = seed ^ ((epoch as u64) << 32) ^ step as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inference output for one snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotPrediction<T> {
    pub date: chrono::NaiveDate,
    pub probs: Vec<T>,
    pub attention: Option<AttentionLogits<T>>,
}

/// Run inference over `history` (to build temporal state, outputs discarded)
/// and then over `targets`, returning predictions for the targets only.
pub fn predict_sequence<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    history: &[DailySnapshot],
    targets: &[DailySnapshot],
) -> Result<Vec<SnapshotPrediction<T>>> {
    let mut prior: Option<PriorState<T>> = None;
    for s in history {
        if cfg.kind != ModelKind::Tgat {
            break;
        }
        let batch = Batch::from_snapshot(s, cfg, prior.as_ref())?;
        prior = forward(params, &batch, false, 0)?.prior_state(&batch.nodes);
    }
    let mut out = Vec::with_capacity(targets.len());
    for s in targets {
        let batch = Batch::from_snapshot(s, cfg, prior.as_ref())?;
        let pass = forward(params, &batch, false, 0)?;
        if cfg.kind == ModelKind::Tgat {
            prior = pass.prior_state(&batch.nodes);
        }
        out.push(SnapshotPrediction {
            date: s.date,
            probs: pass.probs.to_vec(),
            attention: pass.attention().cloned(),
        });
    }
    Ok(out)
}

fn flat_probs<T: Scalar>(preds: &[SnapshotPrediction<T>]) -> Vec<f64> {
    preds
        .iter()
        .flat_map(|p| p.probs.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)))
        .collect()
}

/// Validation AUC for `params`, warm-starting temporal state through `train`.
pub fn validation_auc<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    train: &[DailySnapshot],
    val: &[DailySnapshot],
) -> Result<(f64, Vec<f64>)> {
    let labels = require_labels(val, "validation")?;
    let probs = flat_probs(&predict_sequence(params, cfg, train, val)?);
    Ok((roc_auc(&probs, &labels)?, probs))
}

/// Train on `train`, select on `val`. Test snapshots are not an input.
pub fn train_model<T: Scalar>(
    train: &[DailySnapshot],
    val: &[DailySnapshot],
    cfg: &TrainConfig,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    require_labels(train, "training")?;
    let val_labels = require_labels(val, "validation")?;
    let pos_weight = cfg.pos_weight.resolve(train)?;
    let mcfg = cfg.model_config();
    let mut params = ModelParams::<T>::init(&mcfg, cfg.seed)?;
    let mut adam = AdamState::new(&params);

    let mut history = Vec::with_capacity(cfg.epochs_max);
    let mut best: Option<(usize, f64, ModelParams<T>)> = None;
    for epoch in 1..=cfg.epochs_max {
        let mut prior: Option<PriorState<T>> = None;
        let mut loss_sum = 0.0;
        for (step, snap) in train.iter().enumerate() {
            let batch = Batch::from_snapshot(snap, &mcfg, prior.as_ref())?;
            let loss = WeightedBce::new(snap.labels.clone().unwrap_or_default(), pos_weight)?;
            let (value, grads, pass) =
                compute_gradients(&params, &batch, &loss, true, step_seed(cfg.seed, epoch, step))?;
            adam_step(&mut params, &grads, &mut adam, cfg.lr, cfg.weight_decay)?;
            if mcfg.kind == ModelKind::Tgat {
                prior = pass.prior_state(&batch.nodes);
            }
            loss_sum += value.to_f64().unwrap_or(f64::NAN);
        }
        let (val_auc, _) = validation_auc(&params, &mcfg, train, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auc,
        });
        if best.as_ref().is_none_or(|(_, auc, _)| val_auc > *auc) {
            best = Some((epoch, val_auc, params.clone()));
        }
    }

    let (best_epoch, val_auc, params) = best.expect("at least one epoch");
    let val_probs = flat_probs(&predict_sequence(&params, &mcfg, train, val)?);
    let threshold = select_threshold(&val_probs, &val_labels)?;
    Ok(TrainedModel {
        config: mcfg,
        params,
        best_epoch,
        val_auc,
        threshold,
        pos_weight,
        history,
    })
}

/// F1-maximizing threshold among the unique predicted probabilities, ties
/// going to the smallest threshold. Decisions use `p >= threshold`.
pub fn select_threshold(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape("threshold selection needs matching, nonempty inputs".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass("threshold selection needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut k = 0;
    while k < order.len() {
        let tau = probs[order[k]];
        while k < order.len() && probs[order[k]] == tau {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (n_pos - tp)) as f64;
        // Descending sweep: `>=` moves ties to the smaller threshold.
        if f1 >= best.0 {
            best = (f1, tau);
        }
    }
    Ok(best.1)
}
