use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{leaky_relu, leaky_relu_grad, Graph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One attention head: projection `w` (h x d_in) and attention vector `a` (2h),
/// whose first half scores the receiving node and second half the sender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatHead<T> {
    pub w: Array2<T>,
    pub a: Array1<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParams<T> {
    pub heads: Vec<GatHead<T>>,
}

impl<T: Scalar> GatParams<T> {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w.nrows())
    }

    pub fn input_width(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w.ncols())
    }
}

/// Per-head raw logits `e_ij` and normalized coefficients `alpha_ij`, one
/// column per neighbourhood slot of the graph they were computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits<T> {
    pub graph: Graph,
    /// heads x slots
    pub logits: Array2<T>,
    /// heads x slots
    pub alpha: Array2<T>,
}

impl<T: Scalar> AttentionLogits<T> {
    /// `(source, per-head logits)` for each member of node `i`'s neighbourhood.
    pub fn node_logits(&self, i: usize) -> Vec<(usize, Vec<T>)> {
        self.graph
            .slots(i)
            .map(|k| (self.graph.sources()[k], self.logits.column(k).to_vec()))
            .collect()
    }

    pub fn node_alpha(&self, i: usize, head: usize) -> Vec<(usize, T)> {
        self.graph
            .slots(i)
            .map(|k| (self.graph.sources()[k], self.alpha[[head, k]]))
            .collect()
    }
}

/// Forward intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct GatCache<T> {
    /// Projected features per head, n x h.
    pub projected: Vec<Array2<T>>,
    /// Pre-activation scores per head and slot.
    pub scores: Array2<T>,
    pub attention: AttentionLogits<T>,
    pub embeddings: Array2<T>,
}

fn check_input<T: Scalar>(x: &ArrayView2<T>, graph: &Graph, params: &GatParams<T>) -> Result<()> {
    if params.heads.is_empty() {
        return Err(Error::Shape("attention layer has no heads".into()));
    }
    if x.nrows() != graph.num_nodes() {
        return Err(Error::Shape(format!("{} feature rows for {} nodes", x.nrows(), graph.num_nodes())));
    }
    let (h, d) = (params.hidden(), params.input_width());
    for (m, head) in params.heads.iter().enumerate() {
        if head.w.dim() != (h, d) || head.a.len() != 2 * h {
            return Err(Error::Shape(format!("head {m} has inconsistent shapes")));
        }
    }
    if x.ncols() != d {
        return Err(Error::Shape(format!("input width {} but weights expect {d}", x.ncols())));
    }
    Ok(())
}

/// Multi-head graph attention with the intermediates needed for backprop.
///
/// Per head: `z = W x`, `e_ij = LeakyReLU(a . [z_i || z_j])`, `alpha_ij` is the
/// softmax of `e_ij` over the neighbourhood of `i`, and the head output is
/// `sum_j alpha_ij z_j`. Head outputs are concatenated.
pub fn gat_forward_cached<T: Scalar>(x: ArrayView2<T>, graph: &Graph, params: &GatParams<T>) -> Result<GatCache<T>> {
    check_input(&x, graph, params)?;
    let n = graph.num_nodes();
    let h = params.hidden();
    let n_heads = params.num_heads();
    let slots = graph.num_slots();
    let sources = graph.sources();

    let mut projected = Vec::with_capacity(n_heads);
    let mut scores = Array2::zeros((n_heads, slots));
    let mut logits = Array2::zeros((n_heads, slots));
    let mut alpha = Array2::zeros((n_heads, slots));
    let mut embeddings = Array2::zeros((n, n_heads * h));

    for (m, head) in params.heads.iter().enumerate() {
        let z = x.dot(&head.w.t());
        let score_dst = z.dot(&head.a.slice(s![..h]));
        let score_src = z.dot(&head.a.slice(s![h..]));
        let mut out = embeddings.slice_mut(s![.., m * h..(m + 1) * h]);
        for i in 0..n {
            let range = graph.slots(i);
            let mut max = T::neg_infinity();
            for k in range.clone() {
                let pre = score_dst[i] + score_src[sources[k]];
                let e = leaky_relu(pre);
                scores[[m, k]] = pre;
                logits[[m, k]] = e;
                if e > max {
                    max = e;
                }
            }
            let mut total = T::zero();
            for k in range.clone() {
                let v = (logits[[m, k]] - max).exp();
                alpha[[m, k]] = v;
                total += v;
            }
            let mut row = out.row_mut(i);
            for k in range {
                let a = alpha[[m, k]] / total;
                alpha[[m, k]] = a;
                row.scaled_add(a, &z.row(sources[k]));
            }
        }
        projected.push(z);
    }

    Ok(GatCache {
        projected,
        scores,
        attention: AttentionLogits {
            graph: graph.clone(),
            logits,
            alpha,
        },
        embeddings,
    })
}

/// Node embeddings (concatenated heads) and the attention logits that produced them.
///
/// The layer has no stochastic component, so `training` only exists to keep the
/// call shape uniform with the other layers.
pub fn gat_forward<T: Scalar>(
    x: ArrayView2<T>,
    graph: &Graph,
    params: &GatParams<T>,
    _training: bool,
) -> Result<(Array2<T>, AttentionLogits<T>)> {
    let cache = gat_forward_cached(x, graph, params)?;
    Ok((cache.embeddings, cache.attention))
}

/// Gradients of every head's `w` and `a` given the upstream gradient on the
/// embeddings. The input is treated as a constant.
pub fn gat_backward<T: Scalar>(
    x: ArrayView2<T>,
    params: &GatParams<T>,
    cache: &GatCache<T>,
    d_embeddings: ArrayView2<T>,
) -> Result<GatParams<T>> {
    let graph = &cache.attention.graph;
    let alpha = &cache.attention.alpha;
    let n = graph.num_nodes();
    let h = params.hidden();
    if d_embeddings.dim() != cache.embeddings.dim() {
        return Err(Error::Shape("embedding gradient shape mismatch".into()));
    }
    let sources = graph.sources();
    let mut grads = Vec::with_capacity(params.num_heads());

    for (m, head) in params.heads.iter().enumerate() {
        let z = &cache.projected[m];
        let d_out = d_embeddings.slice(s![.., m * h..(m + 1) * h]);
        let mut d_z: Array2<T> = Array2::zeros((n, h));
        let mut d_dst: Array1<T> = Array1::zeros(n);
        let mut d_src: Array1<T> = Array1::zeros(n);
        let mut d_alpha: Vec<T> = Vec::new();

        for i in 0..n {
            let range = graph.slots(i);
            let d_oi = d_out.row(i);
            d_alpha.clear();
            let mut weighted = T::zero();
            for k in range.clone() {
                let j = sources[k];
                let da = d_oi.dot(&z.row(j));
                weighted += alpha[[m, k]] * da;
                d_alpha.push(da);
                d_z.row_mut(j).scaled_add(alpha[[m, k]], &d_oi);
            }
            for (k, &da) in range.zip(&d_alpha) {
                let d_e = alpha[[m, k]] * (da - weighted);
                let d_pre = d_e * leaky_relu_grad(cache.scores[[m, k]]);
                d_dst[i] += d_pre;
                d_src[sources[k]] += d_pre;
            }
        }

        let a_dst = head.a.slice(s![..h]);
        let a_src = head.a.slice(s![h..]);
        let mut d_a = Array1::zeros(2 * h);
        d_a.slice_mut(s![..h]).assign(&z.t().dot(&d_dst));
        d_a.slice_mut(s![h..]).assign(&z.t().dot(&d_src));
        d_z += &d_dst
            .view()
            .insert_axis(Axis(1))
            .dot(&a_dst.insert_axis(Axis(0)));
        d_z += &d_src
            .view()
            .insert_axis(Axis(1))
            .dot(&a_src.insert_axis(Axis(0)));
        let d_w = d_z.t().dot(&x).as_standard_layout().into_owned();
        grads.push(GatHead { w: d_w, a: d_a });
    }
    Ok(GatParams { heads: grads })
}
