use searisk_core::nn::{Checkpoint, ModelKind};
use searisk_core::snapshot::{build_snapshots, chronological_split, compute_labels, labeled, DailySnapshot, SplitFractions};
use searisk_core::synth::{generate_synthetic_ais, SynthConfig};
use searisk_core::train::{train_model, TrainConfig};

fn data() -> Vec<DailySnapshot> {
    let cfg = SynthConfig {
        n_days: 16,
        n_vessels: 150,
        broadcasts_per_day: 12,
        ..SynthConfig::default()
    };
    let recs = generate_synthetic_ais(&cfg).unwrap();
    let mut snaps = build_snapshots(&recs, &cfg.region, 8).unwrap();
    compute_labels(&mut snaps).unwrap();
    labeled(&snaps)
}

fn small(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model: kind,
        epochs_max: 8,
        hidden: 8,
        heads: 2,
        mlp_hidden: 8,
        lr: 5e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn training_loss_falls_on_average() {
    let snaps = data();
    let s = chronological_split(snaps.len(), SplitFractions::default()).unwrap();
    for kind in ModelKind::ALL {
        let m = train_model::<f64>(&snaps[s.train.clone()], &snaps[s.val.clone()], &small(kind)).unwrap();
        let h = &m.history;
        let early = (h[0].train_loss + h[1].train_loss) / 2.0;
        let late = (h[h.len() - 2].train_loss + h[h.len() - 1].train_loss) / 2.0;
        assert!(late < early, "{kind}: {early} -> {late}");
        assert!((1..=8).contains(&m.best_epoch));
        assert_eq!(m.val_auc, h[m.best_epoch - 1].val_auc);
        assert!(h.iter().all(|r| r.val_auc <= m.val_auc));
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let snaps = data();
    let s = chronological_split(snaps.len(), SplitFractions::default()).unwrap();
    let cfg = small(ModelKind::Tgat);
    let a = train_model::<f64>(&snaps[s.train.clone()], &snaps[s.val.clone()], &cfg).unwrap();
    let b = train_model::<f64>(&snaps[s.train.clone()], &snaps[s.val.clone()], &cfg).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tgat.json");
    a.checkpoint().unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_params::<f64>().unwrap(), a.params);
    assert_eq!(back.threshold, Some(a.threshold));
}

#[test]
fn single_precision_training_runs() {
    let snaps = data();
    let s = chronological_split(snaps.len(), SplitFractions::default()).unwrap();
    let m = train_model::<f32>(&snaps[s.train.clone()], &snaps[s.val.clone()], &small(ModelKind::Gcn)).unwrap();
    assert!(m.val_auc.is_finite());
}
