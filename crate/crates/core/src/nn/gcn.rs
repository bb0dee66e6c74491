use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single graph-convolution layer: `h_i = ReLU(W * mean_{j in N(i) + i} x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams<T> {
    /// hidden x d_in
    pub w: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct GcnCache<T> {
    pub aggregated: Array2<T>,
    pub pre_activation: Array2<T>,
    pub embeddings: Array2<T>,
}

/// Degree-normalized mean over each node's neighbourhood, self included.
fn aggregate<T: Scalar>(x: ArrayView2<T>, graph: &Graph) -> Array2<T> {
    let mut agg = Array2::zeros(x.dim());
    for i in 0..graph.num_nodes() {
        let nbhd = graph.neighborhood(i);
        let scale = T::one() / T::count(nbhd.len());
        let mut row = agg.row_mut(i);
        for &j in nbhd {
            row.scaled_add(scale, &x.row(j));
        }
    }
    agg
}

pub fn gcn_forward_cached<T: Scalar>(x: ArrayView2<T>, graph: &Graph, params: &GcnParams<T>) -> Result<GcnCache<T>> {
    if !graph.has_self_loops() {
        return Err(Error::InvalidInput("graph convolution requires self-loops".into()));
    }
    if x.nrows() != graph.num_nodes() || x.ncols() != params.w.ncols() {
        return Err(Error::Shape(format!(
            "input {:?} incompatible with {} nodes and weights {:?}",
            x.dim(),
            graph.num_nodes(),
            params.w.dim()
        )));
    }
    let aggregated = aggregate(x, graph);
    let pre_activation = aggregated.dot(&params.w.t());
    let embeddings = pre_activation.mapv(|v| v.max(T::zero()));
    Ok(GcnCache {
        aggregated,
        pre_activation,
        embeddings,
    })
}

pub fn gcn_forward<T: Scalar>(x: ArrayView2<T>, graph: &Graph, params: &GcnParams<T>) -> Result<Array2<T>> {
    Ok(gcn_forward_cached(x, graph, params)?.embeddings)
}

pub fn gcn_backward<T: Scalar>(cache: &GcnCache<T>, d_embeddings: ArrayView2<T>) -> Result<GcnParams<T>> {
    if d_embeddings.dim() != cache.embeddings.dim() {
        return Err(Error::Shape("embedding gradient shape mismatch".into()));
    }
    let mut d_pre = d_embeddings.to_owned();
    d_pre.zip_mut_with(&cache.pre_activation, |d, &p| {
        if p <= T::zero() {
            *d = T::zero();
        }
    });
    Ok(GcnParams {
        w: d_pre.t().dot(&cache.aggregated).as_standard_layout().into_owned(),
    })
}
