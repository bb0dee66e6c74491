//! Core numerics and data pipeline for next-day congestion-risk escalation
//! on a gridded maritime region.
//!
//! The crate covers the path from raw AIS broadcasts to per-node evidence:
//!
//! * [`ingest`]: NOAA MarineCadastre CSV parsing, region/window filtering and grid cells.
//! * [`synth`]: deterministic synthetic AIS traffic with planted congestion dynamics.
//! * [`snapshot`]: daily cell features, escalation labels, z-scores, kNN edges,
//!   chronological splits and point-biserial correlations.
//! * [`nn`]: graph attention, graph convolution, MLP head and logistic regression
//!   with hand-written reverse passes, generic over the scalar type.
//! * [`train`]: weighted BCE, Adam, best-validation checkpointing, threshold choice.
//! * [`metrics`]: ROC-AUC, average precision and thresholded scores.
//! * [`evidence`]: feature drivers and attention-proxy neighbour weights per node.
//!
//! Models are generic over [`Scalar`]; the pipeline itself runs in `f64` and the
//! aliases below name the concrete instantiations it uses.

// `!(x > 0.0)` is how validators here reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evidence;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod snapshot;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Graph attention parameters in double precision.
pub type GatParams = nn::GatParams<f64>;
/// Graph convolution parameters in double precision.
pub type GcnParams = nn::GcnParams<f64>;
/// MLP head parameters in double precision.
pub type MlpParams = nn::MlpParams<f64>;
/// Logistic-regression parameters in double precision.
pub type LogisticParams = nn::LogisticParams<f64>;
/// Any of the three trainable models in double precision.
pub type ModelParams = nn::ModelParams<f64>;
/// Single-precision model, handy for inference-only use.
pub type ModelParamsF32 = nn::ModelParams<f32>;
/// Training outcome for the double-precision pipeline.
pub type TrainedModel = train::TrainedModel<f64>;
