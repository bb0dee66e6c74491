use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Graph-free baseline: `p = sigmoid(w . x + b)` on a node's own features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams<T> {
    pub w: Array1<T>,
    pub b: T,
}

/// Returns `(logits, probabilities)`.
pub fn logistic_forward<T: Scalar>(x: ArrayView2<T>, params: &LogisticParams<T>) -> Result<(Array1<T>, Array1<T>)> {
    if x.ncols() != params.w.len() {
        return Err(Error::Shape(format!("input width {} vs {} weights", x.ncols(), params.w.len())));
    }
    let logits = x.dot(&params.w) + params.b;
    let probs = logits.mapv(sigmoid);
    Ok((logits, probs))
}

pub fn logistic_backward<T: Scalar>(x: ArrayView2<T>, d_logits: ArrayView1<T>) -> LogisticParams<T> {
    LogisticParams {
        w: x.t().dot(&d_logits),
        b: d_logits.sum(),
    }
}
