use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two-layer head: `p = sigmoid(w2 . dropout(ReLU(W1^T e + b1)) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    /// in x hidden
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: T,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub pre_hidden: Array2<T>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`); `None` at inference.
    pub mask: Option<Array2<T>>,
    pub hidden: Array2<T>,
    pub logits: Array1<T>,
    pub probs: Array1<T>,
}

pub fn mlp_forward_cached<T: Scalar>(
    emb: ArrayView2<T>,
    params: &MlpParams<T>,
    training: bool,
    seed: u64,
) -> Result<MlpCache<T>> {
    if emb.ncols() != params.w1.nrows() {
        return Err(Error::Shape(format!(
            "embedding width {} vs head input {}",
            emb.ncols(),
            params.w1.nrows()
        )));
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding entering the MLP head".into()));
    }
    let pre_hidden = emb.dot(&params.w1) + &params.b1;
    let mut hidden = pre_hidden.mapv(|v| v.max(T::zero()));
    let mask = if training && params.dropout > 0.0 {
        let keep = 1.0 - params.dropout;
        let scale = T::lit(1.0 / keep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = Array2::from_shape_simple_fn(hidden.dim(), || {
            if rng.random_bool(keep) {
                scale
            } else {
                T::zero()
            }
        });
        hidden *= &mask;
        Some(mask)
    } else {
        None
    };
    let logits = hidden.dot(&params.w2) + params.b2;
    let probs = logits.mapv(sigmoid);
    Ok(MlpCache {
        pre_hidden,
        mask,
        hidden,
        logits,
        probs,
    })
}

/// Per-node probabilities. Dropout is only active when `training` is set,
/// and then its mask is a pure function of `seed`.
pub fn mlp_forward<T: Scalar>(emb: ArrayView2<T>, params: &MlpParams<T>, training: bool, seed: u64) -> Result<Array1<T>> {
    Ok(mlp_forward_cached(emb, params, training, seed)?.probs)
}

/// Parameter gradients and the gradient flowing back into the embeddings.
pub fn mlp_backward<T: Scalar>(
    emb: ArrayView2<T>,
    params: &MlpParams<T>,
    cache: &MlpCache<T>,
    d_logits: ArrayView1<T>,
) -> (MlpParams<T>, Array2<T>) {
    let d_w2 = cache.hidden.t().dot(&d_logits);
    let d_b2 = d_logits.sum();
    let mut d_hidden = d_logits
        .insert_axis(Axis(1))
        .dot(&params.w2.view().insert_axis(Axis(0)));
    if let Some(mask) = &cache.mask {
        d_hidden *= mask;
    }
    d_hidden.zip_mut_with(&cache.pre_hidden, |d, &p| {
        if p <= T::zero() {
            *d = T::zero();
        }
    });
    let d_w1 = emb.t().dot(&d_hidden).as_standard_layout().into_owned();
    let d_b1 = d_hidden.sum_axis(Axis(0));
    let d_emb = d_hidden.dot(&params.w1.t());
    (
        MlpParams {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
            dropout: params.dropout,
        },
        d_emb,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_weights_give_one_half() {
        let p = MlpParams {
            w1: Array2::<f64>::zeros((3, 4)),
            b1: Array1::zeros(4),
            w2: Array1::zeros(4),
            b2: 0.0,
            dropout: 0.1,
        };
        let emb = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
        let probs = mlp_forward(emb.view(), &p, true, 9).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn inference_is_repeatable_and_dropout_is_seeded() {
        let p = MlpParams {
            w1: array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.5]],
            b1: array![0.1, 0.0, -0.1],
            w2: array![1.0, -2.0, 0.5],
            b2: 0.2,
            dropout: 0.5,
        };
        let emb = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let a = mlp_forward(emb.view(), &p, false, 1).unwrap();
        let b = mlp_forward(emb.view(), &p, false, 2).unwrap();
        assert_eq!(a, b);
        let c = mlp_forward(emb.view(), &p, true, 7).unwrap();
        let d = mlp_forward(emb.view(), &p, true, 7).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn one_dimensional_hand_case() {
        let p = MlpParams {
            w1: array![[2.0f64]],
            b1: array![0.0],
            w2: array![1.0],
            b2: -1.0,
            dropout: 0.1,
        };
        let probs = mlp_forward(array![[1.0]].view(), &p, false, 0).unwrap();
        assert!((probs[0] - 0.7310585786300049).abs() < 1e-12);
    }
}
