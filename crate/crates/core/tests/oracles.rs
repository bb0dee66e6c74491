use std::collections::BTreeMap;

use chrono::NaiveDate;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searisk_core::ingest::{assign_cell, CellId};
use searisk_core::metrics::{average_precision, roc_auc};
use searisk_core::nn::{gat_forward, gcn_forward, GatHead, GatParams, GcnParams, Graph};
use searisk_core::snapshot::{
    build_snapshots, chronological_split, compute_labels, point_biserial, Edge, SplitFractions,
};
use searisk_core::synth::{generate_synthetic_ais, SynthConfig};

fn edges(pairs: &[(usize, usize)]) -> Vec<Edge> {
    pairs.iter().map(|&(src, dst)| Edge { src, dst }).collect()
}

fn lrelu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.2 * v
    }
}

#[test]
fn attention_matches_hand_evaluation_on_three_nodes() {
    // 0 <- 1, 0 <- 2, 1 <- 0, 2 <- 1; self-loops on
    let g = Graph::new(3, &edges(&[(1, 0), (2, 0), (0, 1), (1, 2)]), true).unwrap();
    let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]];
    let heads = vec![
        GatHead {
            w: array![[1.0, 0.5], [-0.5, 1.0]],
            a: array![0.3, -0.2, 0.8, 0.1],
        },
        GatHead {
            w: array![[0.2, -1.0], [1.5, 0.0]],
            a: array![-0.4, 0.6, 0.25, -0.9],
        },
    ];
    let p = GatParams { heads: heads.clone() };
    let (emb, att) = gat_forward(x.view(), &g, &p, false).unwrap();

    let neighbourhoods: [&[usize]; 3] = [&[0, 1, 2], &[1, 0], &[2, 1]];
    for (m, head) in heads.iter().enumerate() {
        let z: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                [
                    head.w[[0, 0]] * x[[i, 0]] + head.w[[0, 1]] * x[[i, 1]],
                    head.w[[1, 0]] * x[[i, 0]] + head.w[[1, 1]] * x[[i, 1]],
                ]
            })
            .collect();
        for (i, nb) in neighbourhoods.iter().enumerate() {
            let e: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    lrelu(head.a[0] * z[i][0] + head.a[1] * z[i][1] + head.a[2] * z[j][0] + head.a[3] * z[j][1])
                })
                .collect();
            let denom: f64 = e.iter().map(|v| v.exp()).sum();
            let got = att.node_alpha(i, m);
            assert_eq!(got.iter().map(|(j, _)| *j).collect::<Vec<_>>(), nb.to_vec());
            let mut out = [0.0; 2];
            for ((&j, &ej), (_, a)) in nb.iter().zip(&e).zip(&got) {
                let expected = ej.exp() / denom;
                assert!((a - expected).abs() < 1e-9, "head {m} alpha[{i}][{j}] {a} vs {expected}");
                out[0] += expected * z[j][0];
                out[1] += expected * z[j][1];
            }
            for c in 0..2 {
                assert!((emb[[i, m * 2 + c]] - out[c]).abs() < 1e-9);
            }
            let raw = att.node_logits(i);
            for ((_, logits), ej) in raw.iter().zip(&e) {
                assert!((logits[m] - ej).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gcn_matches_dense_mean_aggregation() {
    let g = Graph::new(3, &edges(&[(1, 0), (2, 0), (0, 2)]), true).unwrap();
    let x = array![[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]];
    let w = array![[0.5, -1.0], [1.0, 1.0]];
    let out = gcn_forward(x.view(), &g, &GcnParams { w: w.clone() }).unwrap();
    let adj = array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5]];
    let expected = adj.dot(&x).dot(&w.t()).mapv(|v: f64| v.max(0.0));
    for (a, b) in out.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut out = Vec::new();
    for dst in 0..n {
        for src in 0..n {
            if src != dst && rng.random_bool(0.4) {
                out.push(Edge { src, dst });
            }
        }
    }
    out
}

#[test]
fn attention_rows_are_distributions_and_layer_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(2..9);
        let d = 3;
        let e = random_graph(n, &mut rng);
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
        let p = GatParams {
            heads: (0..2)
                .map(|_| GatHead {
                    w: Array2::from_shape_simple_fn((2, d), || rng.random_range(-1.0..1.0)),
                    a: ndarray::Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0)),
                })
                .collect(),
        };
        let g = Graph::new(n, &e, true).unwrap();
        let (emb, att) = gat_forward(x.view(), &g, &p, false).unwrap();
        for i in 0..n {
            for m in 0..2 {
                let total: f64 = att.node_alpha(i, m).iter().map(|(_, a)| *a).sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(att.node_alpha(i, m).iter().all(|(_, a)| *a >= 0.0));
            }
        }

        // relabel nodes with a random permutation
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let e2: Vec<Edge> = e.iter().map(|ed| Edge { src: perm[ed.src], dst: perm[ed.dst] }).collect();
        let mut x2 = Array2::zeros((n, d));
        for i in 0..n {
            x2.row_mut(perm[i]).assign(&x.row(i));
        }
        let g2 = Graph::new(n, &e2, true).unwrap();
        let (emb2, _) = gat_forward(x2.view(), &g2, &p, false).unwrap();
        for i in 0..n {
            for c in 0..emb.ncols() {
                assert!((emb[[i, c]] - emb2[[perm[i], c]]).abs() < 1e-12);
            }
        }
    }
}

fn brute_auc(p: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p.len() {
        for j in 0..p.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if p[i] > p[j] {
                    1.0
                } else if p[i] == p[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Precision at each distinct threshold, weighted by the recall gained there.
fn brute_ap(p: &[f64], y: &[u8]) -> f64 {
    let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let mut thresholds: Vec<f64> = p.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = (0..p.len()).filter(|&i| p[i] >= t && y[i] == 1).count() as f64;
        let predicted = (0..p.len()).filter(|&i| p[i] >= t).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

#[test]
fn ranking_metrics_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(2..=50);
        // coarse grid of scores so ties are common
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.35) as u8).collect();
        if !y.contains(&0) || !y.contains(&1) {
            continue;
        }
        assert!((roc_auc(&p, &y).unwrap() - brute_auc(&p, &y)).abs() < 1e-12);
        assert!((average_precision(&p, &y).unwrap() - brute_ap(&p, &y)).abs() < 1e-12);
        done += 1;
    }
}

fn pearson(x: &[f64], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = yf.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(&yf).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = yf.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn point_biserial_is_pearson_with_a_binary_variable() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        y[0] = 0;
        y[n - 1] = 1;
        assert!((point_biserial(&x, &y).unwrap() - pearson(&x, &y)).abs() < 1e-12);
    }
}

#[test]
fn split_of_eighty_nine_snapshots() {
    let s = chronological_split(89, SplitFractions::default()).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (62, 13, 14));
    // 1-based snapshot numbers 76..=89 form the test set
    assert_eq!((s.test.start + 1, s.test.end), (76, 89));
}

proptest! {
    #[test]
    fn split_is_ordered_and_covering(n in 3usize..=200) {
        let s = chronological_split(n, SplitFractions::default()).unwrap();
        prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
        prop_assert_eq!(s.train.start, 0);
        prop_assert_eq!(s.train.end, s.val.start);
        prop_assert_eq!(s.val.end, s.test.start);
        prop_assert_eq!(s.test.end, n);
    }
}

#[test]
fn labels_match_an_independent_recount() {
    let cfg = SynthConfig {
        n_days: 8,
        n_vessels: 120,
        broadcasts_per_day: 12,
        ..SynthConfig::default()
    };
    let recs = generate_synthetic_ais(&cfg).unwrap();
    let mut snaps = build_snapshots(&recs, &cfg.region, 8).unwrap();
    compute_labels(&mut snaps).unwrap();
    let labelled: usize = snaps
        .iter()
        .filter_map(|s| s.labels.as_ref())
        .map(|l| l.iter().filter(|&&v| v == 1).count())
        .sum();

    let mut counts: BTreeMap<(NaiveDate, CellId), (usize, usize)> = BTreeMap::new();
    for r in &recs {
        let cell = assign_cell(r.lat, r.lon, &cfg.region).unwrap();
        let e = counts.entry((r.timestamp.date_naive(), cell)).or_default();
        e.0 += (r.sog < 2.0) as usize;
        e.1 += 1;
    }
    let ratio = |k: &(NaiveDate, CellId)| counts.get(k).map(|&(s, n)| s as f64 / n as f64);
    let last = counts.keys().map(|k| k.0).max().unwrap();
    let recount = counts
        .keys()
        .filter(|k| k.0 < last)
        .filter(|k| {
            let next = (k.0.succ_opt().unwrap(), k.1);
            matches!((ratio(k), ratio(&next)), (Some(a), Some(b)) if b > a)
        })
        .count();
    assert!(recount > 0);
    assert_eq!(labelled, recount);
}
