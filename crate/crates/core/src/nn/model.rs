use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use super::{
    gat_backward, gat_forward_cached, gcn_backward, gcn_forward_cached, logistic_backward, logistic_forward,
    mlp_backward, mlp_forward_cached, AttentionLogits, GatCache, GcnCache, Graph, MlpCache, ModelConfig, ModelKind,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::ingest::CellId;
use crate::scalar::Scalar;
use crate::snapshot::DailySnapshot;

/// Embeddings from the previous snapshot, keyed by cell. Treated as constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorState<T> {
    pub nodes: Vec<CellId>,
    pub embeddings: Array2<T>,
}

/// `[x_t || prior embedding]` per node. Nodes absent from `prev` (or every node
/// when `prev` is `None`) get a zero prior block.
pub fn temporal_concat<T: Scalar>(
    x_t: ArrayView2<T>,
    nodes: &[CellId],
    prev: Option<&PriorState<T>>,
    embedding_width: usize,
) -> Result<Array2<T>> {
    if x_t.nrows() != nodes.len() {
        return Err(Error::Shape(format!("{} rows for {} nodes", x_t.nrows(), nodes.len())));
    }
    let base = x_t.ncols();
    let mut out = Array2::zeros((nodes.len(), base + embedding_width));
    out.slice_mut(s![.., ..base]).assign(&x_t);
    if let Some(prev) = prev {
        if prev.embeddings.ncols() != embedding_width || prev.embeddings.nrows() != prev.nodes.len() {
            return Err(Error::Shape(format!(
                "prior embeddings {:?} for {} nodes, expected width {embedding_width}",
                prev.embeddings.dim(),
                prev.nodes.len()
            )));
        }
        let index: HashMap<&CellId, usize> = prev.nodes.iter().enumerate().map(|(i, c)| (c, i)).collect();
        for (i, cell) in nodes.iter().enumerate() {
            if let Some(&j) = index.get(cell) {
                out.slice_mut(s![i, base..]).assign(&prev.embeddings.row(j));
            }
        }
    }
    Ok(out)
}

/// Model-ready input for one snapshot.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub nodes: Vec<CellId>,
    pub x: Array2<T>,
    pub graph: Graph,
}

impl<T: Scalar> Batch<T> {
    pub fn new(nodes: Vec<CellId>, x: Array2<T>, graph: Graph) -> Result<Self> {
        if x.nrows() != nodes.len() || graph.num_nodes() != nodes.len() {
            return Err(Error::Shape("batch rows, nodes and graph disagree".into()));
        }
        Ok(Batch { nodes, x, graph })
    }

    /// z-features of `snap`, widened with the prior block for TGAT.
    pub fn from_snapshot(snap: &DailySnapshot, cfg: &ModelConfig, prior: Option<&PriorState<T>>) -> Result<Self> {
        let z = Array2::from_shape_fn((snap.len(), cfg.base_features), |(i, c)| T::lit(snap.z_features[i][c]));
        let x = match cfg.kind {
            ModelKind::Tgat => temporal_concat(z.view(), &snap.nodes, prior, cfg.embedding_width())?,
            _ => z,
        };
        let graph = Graph::new(snap.len(), &snap.edges, true)?;
        Batch::new(snap.nodes.clone(), x, graph)
    }
}

enum Cache<T> {
    Logistic,
    Gcn(GcnCache<T>, MlpCache<T>),
    Tgat(GatCache<T>, MlpCache<T>),
}

/// Result of one forward pass over a batch.
pub struct ForwardPass<T> {
    pub logits: Array1<T>,
    pub probs: Array1<T>,
    cache: Cache<T>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Post-layer node embeddings (GCN and TGAT only).
    pub fn embeddings(&self) -> Option<&Array2<T>> {
        match &self.cache {
            Cache::Logistic => None,
            Cache::Gcn(g, _) => Some(&g.embeddings),
            Cache::Tgat(g, _) => Some(&g.embeddings),
        }
    }

    pub fn attention(&self) -> Option<&AttentionLogits<T>> {
        match &self.cache {
            Cache::Tgat(g, _) => Some(&g.attention),
            _ => None,
        }
    }

    /// Embeddings packaged as the next snapshot's prior state.
    pub fn prior_state(&self, nodes: &[CellId]) -> Option<PriorState<T>> {
        self.embeddings().map(|e| PriorState {
            nodes: nodes.to_vec(),
            embeddings: e.clone(),
        })
    }
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>, training: bool, seed: u64) -> Result<ForwardPass<T>> {
    let x = batch.x.view();
    match params {
        ModelParams::Logistic(p) => {
            let (logits, probs) = logistic_forward(x, p)?;
            Ok(ForwardPass {
                logits,
                probs,
                cache: Cache::Logistic,
            })
        }
        ModelParams::Gcn { gcn, head } => {
            let g = gcn_forward_cached(x, &batch.graph, gcn)?;
            let m = mlp_forward_cached(g.embeddings.view(), head, training, seed)?;
            Ok(ForwardPass {
                logits: m.logits.clone(),
                probs: m.probs.clone(),
                cache: Cache::Gcn(g, m),
            })
        }
        ModelParams::Tgat { gat, head } => {
            let g = gat_forward_cached(x, &batch.graph, gat)?;
            let m = mlp_forward_cached(g.embeddings.view(), head, training, seed)?;
            Ok(ForwardPass {
                logits: m.logits.clone(),
                probs: m.probs.clone(),
                cache: Cache::Tgat(g, m),
            })
        }
    }
}

fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    pass: &ForwardPass<T>,
    d_logits: ArrayView1<T>,
) -> Result<ModelParams<T>> {
    let x = batch.x.view();
    Ok(match (params, &pass.cache) {
        (ModelParams::Logistic(_), Cache::Logistic) => ModelParams::Logistic(logistic_backward(x, d_logits)),
        (ModelParams::Gcn { head, .. }, Cache::Gcn(g, m)) => {
            let (d_head, d_emb) = mlp_backward(g.embeddings.view(), head, m, d_logits);
            ModelParams::Gcn {
                gcn: gcn_backward(g, d_emb.view())?,
                head: d_head,
            }
        }
        (ModelParams::Tgat { gat, head }, Cache::Tgat(g, m)) => {
            let (d_head, d_emb) = mlp_backward(g.embeddings.view(), head, m, d_logits);
            ModelParams::Tgat {
                gat: gat_backward(x, gat, g, d_emb.view())?,
                head: d_head,
            }
        }
        _ => return Err(Error::InvalidInput("forward pass does not belong to these parameters".into())),
    })
}

/// Scalar loss over per-node probabilities.
pub trait LossFn<T: Scalar> {
    fn value(&self, probs: ArrayView1<T>) -> Result<T>;
    /// dLoss/dp for each node.
    fn grad(&self, probs: ArrayView1<T>) -> Result<Array1<T>>;
}

/// `sum p_i^2`, mostly useful for checking the backward passes.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLoss;

impl<T: Scalar> LossFn<T> for QuadraticLoss {
    fn value(&self, probs: ArrayView1<T>) -> Result<T> {
        Ok(probs.iter().map(|&p| p * p).sum())
    }

    fn grad(&self, probs: ArrayView1<T>) -> Result<Array1<T>> {
        Ok(probs.mapv(|p| p + p))
    }
}

/// Loss and gradient of every parameter tensor for one batch. The dropout mask
/// is fixed by `seed`, so the gradient is that of the sampled network.
pub fn compute_gradients<T: Scalar, L: LossFn<T> + ?Sized>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    loss: &L,
    training: bool,
    seed: u64,
) -> Result<(T, ModelParams<T>, ForwardPass<T>)> {
    let pass = forward(params, batch, training, seed)?;
    let value = loss.value(pass.probs.view())?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value}")));
    }
    let d_probs = loss.grad(pass.probs.view())?;
    let d_logits = Array1::from_iter(d_probs.iter().zip(&pass.probs).map(|(&d, &p)| d * p * (T::one() - p)));
    let grads = backward(params, batch, &pass, d_logits.view())?;
    Ok((value, grads, pass))
}
