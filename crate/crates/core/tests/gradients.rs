//! Central finite differences against the hand-written backward passes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searisk_core::ingest::CellId;
use searisk_core::nn::{compute_gradients, Batch, Graph, LossFn, ModelConfig, ModelKind, ModelParams, QuadraticLoss};
use searisk_core::snapshot::Edge;
use searisk_core::train::WeightedBce;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn batch(kind: ModelKind, cfg: &ModelConfig, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let width = cfg.input_width();
    // every entry nonzero, so the prior block of TGAT inputs is exercised too
    let x = Array2::from_shape_simple_fn((n, width), || rng.random_range(-1.5..1.5));
    let edges: Vec<Edge> = [(1, 0), (2, 0), (0, 1), (3, 1), (1, 2), (0, 3), (2, 3)]
        .iter()
        .map(|&(src, dst)| Edge { src, dst })
        .collect();
    let nodes = (0..n as i32).map(|i| CellId::new(i, 0)).collect();
    let graph = Graph::new(n, &edges, kind != ModelKind::Lr).unwrap();
    Batch::new(nodes, x, graph).unwrap()
}

fn config(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, 2, 2);
    cfg.mlp_hidden = 3;
    cfg.base_features = 3;
    cfg
}

fn loss_at(params: &ModelParams<f64>, batch: &Batch<f64>, loss: &dyn LossFn<f64>, training: bool) -> f64 {
    compute_gradients(params, batch, loss, training, 42).unwrap().0
}

/// Relative error with a floor on the denominator so exactly-zero gradients compare sanely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn check(kind: ModelKind, loss: &dyn LossFn<f64>, training: bool) {
    let cfg = config(kind);
    let batch = batch(kind, &cfg, 3);
    let params = ModelParams::<f64>::init(&cfg, 9).unwrap();
    let (_, grads, _) = compute_gradients(&params, &batch, loss, training, 42).unwrap();
    let analytic: Vec<(String, Vec<f64>)> =
        grads.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();

    let n_tensors = analytic.len();
    let mut checked = 0;
    for t in 0..n_tensors {
        let len = analytic[t].1.len();
        for e in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1[e] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1[e] -= STEP;
            let numeric = (loss_at(&plus, &batch, loss, training) - loss_at(&minus, &batch, loss, training)) / (2.0 * STEP);
            let got = analytic[t].1[e];
            assert!(
                rel_err(numeric, got) < TOL,
                "{kind} {}[{e}]: analytic {got} vs numeric {numeric}",
                analytic[t].0
            );
            checked += 1;
        }
    }
    assert_eq!(checked, params.num_parameters());
}

fn bce(n: usize) -> WeightedBce {
    WeightedBce::new((0..n).map(|i| (i % 2) as u8).collect(), 6.74).unwrap()
}

#[test]
fn logistic_gradients_match_finite_differences() {
    check(ModelKind::Lr, &QuadraticLoss, false);
    check(ModelKind::Lr, &bce(4), false);
}

#[test]
fn gcn_gradients_match_finite_differences() {
    check(ModelKind::Gcn, &QuadraticLoss, false);
    check(ModelKind::Gcn, &bce(4), false);
}

#[test]
fn tgat_gradients_match_finite_differences() {
    check(ModelKind::Tgat, &QuadraticLoss, false);
    check(ModelKind::Tgat, &bce(4), false);
}

#[test]
fn gradients_hold_with_a_fixed_dropout_mask() {
    for kind in [ModelKind::Gcn, ModelKind::Tgat] {
        check(kind, &bce(4), true);
    }
}
