//! Differentiable kernels for the three model families.
//!
//! Every layer has a forward pass that keeps what its reverse pass needs and a
//! hand-written backward pass producing gradients for all of its parameters.
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! inference and `f64` for training and gradient checks.

mod checkpoint;
mod gat;
mod gcn;
mod logistic;
mod mlp;
mod model;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::snapshot::{Edge, NUM_FEATURES};

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use gat::{gat_backward, gat_forward, gat_forward_cached, AttentionLogits, GatCache, GatHead, GatParams};
pub use gcn::{gcn_backward, gcn_forward, gcn_forward_cached, GcnCache, GcnParams};
pub use logistic::{logistic_backward, logistic_forward, LogisticParams};
pub use mlp::{mlp_backward, mlp_forward, mlp_forward_cached, MlpCache, MlpParams};
pub use model::{
    compute_gradients, forward, temporal_concat, Batch, ForwardPass, LossFn, PriorState, QuadraticLoss,
};

pub const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn leaky_relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::lit(LEAKY_SLOPE)
    }
}

pub(crate) fn leaky_relu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Receiving-node adjacency. Neighbourhoods list the node itself first when
/// self-loops are enabled, then its in-neighbours in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    self_loops: bool,
}

impl Graph {
    pub fn new(n: usize, edges: &[Edge], self_loops: bool) -> Result<Self> {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Shape(format!("edge {e:?} outside {n} nodes")));
            }
            if e.src != e.dst {
                nbrs[e.dst].push(e.src);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::with_capacity(edges.len() + n);
        offsets.push(0);
        for (i, list) in nbrs.into_iter().enumerate() {
            if self_loops {
                sources.push(i);
            } else if list.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "node {i} has no in-neighbours and self-loops are disabled"
                )));
            }
            sources.extend(list);
            offsets.push(sources.len());
        }
        Ok(Graph {
            n,
            offsets,
            sources,
            self_loops,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Number of (source, receiver) slots, self-loops included.
    pub fn num_slots(&self) -> usize {
        self.sources.len()
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    /// Slot range of node `i` into [`Graph::sources`] and per-slot arrays.
    pub fn slots(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.sources[self.slots(i)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Gcn,
    Tgat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Gcn, ModelKind::Tgat];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Gcn => "gcn",
            ModelKind::Tgat => "tgat",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Lr => "LR (no graph)",
            ModelKind::Gcn => "GCN (static graph)",
            ModelKind::Tgat => "TGAT (graph + attention)",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelKind::Lr),
            "gcn" => Ok(ModelKind::Gcn),
            "tgat" => Ok(ModelKind::Tgat),
            other => Err(Error::InvalidInput(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters. `base_features` is the raw feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    #[serde(default = "default_base")]
    pub base_features: usize,
}

fn default_base() -> usize {
    NUM_FEATURES
}

impl ModelConfig {
    pub fn new(kind: ModelKind, hidden: usize, heads: usize) -> Self {
        ModelConfig {
            kind,
            hidden,
            heads,
            mlp_hidden: 128,
            dropout: 0.1,
            base_features: NUM_FEATURES,
        }
    }

    /// Width of the concatenated head outputs.
    pub fn embedding_width(&self) -> usize {
        match self.kind {
            ModelKind::Tgat => self.heads * self.hidden,
            ModelKind::Gcn => self.hidden,
            ModelKind::Lr => 0,
        }
    }

    /// Input width seen by the first layer. TGAT reserves room for the prior embedding.
    pub fn input_width(&self) -> usize {
        match self.kind {
            ModelKind::Tgat => self.base_features + self.embedding_width(),
            _ => self.base_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_features == 0 {
            return Err(Error::InvalidInput("base feature width must be positive".into()));
        }
        if self.kind != ModelKind::Lr && (self.hidden == 0 || self.mlp_hidden == 0) {
            return Err(Error::InvalidInput("hidden widths must be positive".into()));
        }
        if self.kind == ModelKind::Tgat && self.heads == 0 {
            return Err(Error::InvalidInput("need at least one attention head".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Learnable weights of one model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<T> {
    Logistic(LogisticParams<T>),
    Gcn { gcn: GcnParams<T>, head: MlpParams<T> },
    Tgat { gat: GatParams<T>, head: MlpParams<T> },
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-bound..bound)))
}

fn glorot_vec<T: Scalar>(len: usize, fan: usize, rng: &mut ChaCha8Rng) -> Array1<T> {
    let bound = (6.0 / (len + fan) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || T::lit(rng.random_range(-bound..bound)))
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = cfg.input_width();
        let head = |rng: &mut ChaCha8Rng, width: usize| MlpParams {
            w1: glorot(width, cfg.mlp_hidden, rng),
            b1: Array1::zeros(cfg.mlp_hidden),
            w2: glorot_vec(cfg.mlp_hidden, 1, rng),
            b2: T::zero(),
            dropout: cfg.dropout,
        };
        Ok(match cfg.kind {
            ModelKind::Lr => ModelParams::Logistic(LogisticParams {
                w: glorot_vec(d_in, 1, &mut rng),
                b: T::zero(),
            }),
            ModelKind::Gcn => {
                let gcn = GcnParams {
                    w: glorot(cfg.hidden, d_in, &mut rng),
                };
                ModelParams::Gcn {
                    gcn,
                    head: head(&mut rng, cfg.embedding_width()),
                }
            }
            ModelKind::Tgat => {
                // Prior-state columns start at zero: the untrained layer ignores
                // history, and the day-to-day recurrence starts with zero gain.
                let heads = (0..cfg.heads)
                    .map(|_| {
                        let base: Array2<T> = glorot(cfg.hidden, cfg.base_features, &mut rng);
                        let w = Array2::from_shape_fn((cfg.hidden, d_in), |(r, c)| {
                            if c < cfg.base_features {
                                base[[r, c]]
                            } else {
                                T::zero()
                            }
                        });
                        GatHead {
                            w,
                            a: glorot_vec(2 * cfg.hidden, 1, &mut rng),
                        }
                    })
                    .collect();
                ModelParams::Tgat {
                    gat: GatParams { heads },
                    head: head(&mut rng, cfg.embedding_width()),
                }
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Logistic(_) => ModelKind::Lr,
            ModelParams::Gcn { .. } => ModelKind::Gcn,
            ModelParams::Tgat { .. } => ModelKind::Tgat,
        }
    }

    /// Same structure, all entries zero. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every parameter tensor as `(name, shape, flat data)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        fn mat<T>(name: String, a: &Array2<T>) -> (String, Vec<usize>, &[T]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn vec<T>(name: String, a: &Array1<T>) -> (String, Vec<usize>, &[T]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn mlp<'a, T>(out: &mut Vec<(String, Vec<usize>, &'a [T])>, h: &'a MlpParams<T>) {
            out.push(mat("head.w1".into(), &h.w1));
            out.push(vec("head.b1".into(), &h.b1));
            out.push(vec("head.w2".into(), &h.w2));
            out.push(("head.b2".into(), vec![], std::slice::from_ref(&h.b2)));
        }
        let mut out = Vec::new();
        match self {
            ModelParams::Logistic(p) => {
                out.push(vec("lr.w".into(), &p.w));
                out.push(("lr.b".into(), vec![], std::slice::from_ref(&p.b)));
            }
            ModelParams::Gcn { gcn, head } => {
                out.push(mat("gcn.w".into(), &gcn.w));
                mlp(&mut out, head);
            }
            ModelParams::Tgat { gat, head } => {
                for (m, hd) in gat.heads.iter().enumerate() {
                    out.push(mat(format!("gat.{m}.w"), &hd.w));
                    out.push(vec(format!("gat.{m}.a"), &hd.a));
                }
                mlp(&mut out, head);
            }
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        fn mlp<'a, T>(out: &mut Vec<(String, &'a mut [T])>, h: &'a mut MlpParams<T>) {
            out.push(("head.w1".into(), h.w1.as_slice_mut().expect("standard layout")));
            out.push(("head.b1".into(), h.b1.as_slice_mut().expect("standard layout")));
            out.push(("head.w2".into(), h.w2.as_slice_mut().expect("standard layout")));
            out.push(("head.b2".into(), std::slice::from_mut(&mut h.b2)));
        }
        let mut out = Vec::new();
        match self {
            ModelParams::Logistic(p) => {
                out.push(("lr.w".into(), p.w.as_slice_mut().expect("standard layout")));
                out.push(("lr.b".into(), std::slice::from_mut(&mut p.b)));
            }
            ModelParams::Gcn { gcn, head } => {
                out.push(("gcn.w".into(), gcn.w.as_slice_mut().expect("standard layout")));
                mlp(&mut out, head);
            }
            ModelParams::Tgat { gat, head } => {
                for (m, hd) in gat.heads.iter_mut().enumerate() {
                    out.push((format!("gat.{m}.w"), hd.w.as_slice_mut().expect("standard layout")));
                    out.push((format!("gat.{m}.a"), hd.a.as_slice_mut().expect("standard layout")));
                }
                mlp(&mut out, head);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Convert element type, e.g. a trained `f64` model to `f32` for inference.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv2 = |a: &Array2<T>| a.mapv(|v| U::from(v).expect("castable"));
        let conv1 = |a: &Array1<T>| a.mapv(|v| U::from(v).expect("castable"));
        let conv = |v: T| U::from(v).expect("castable");
        let mlp = |h: &MlpParams<T>| MlpParams {
            w1: conv2(&h.w1),
            b1: conv1(&h.b1),
            w2: conv1(&h.w2),
            b2: conv(h.b2),
            dropout: h.dropout,
        };
        match self {
            ModelParams::Logistic(p) => ModelParams::Logistic(LogisticParams {
                w: conv1(&p.w),
                b: conv(p.b),
            }),
            ModelParams::Gcn { gcn, head } => ModelParams::Gcn {
                gcn: GcnParams { w: conv2(&gcn.w) },
                head: mlp(head),
            },
            ModelParams::Tgat { gat, head } => ModelParams::Tgat {
                gat: GatParams {
                    heads: gat
                        .heads
                        .iter()
                        .map(|h| GatHead {
                            w: conv2(&h.w),
                            a: conv1(&h.a),
                        })
                        .collect(),
                },
                head: mlp(head),
            },
        }
    }
}
