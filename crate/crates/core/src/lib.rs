//! Hot-embedding training layout toolkit.
//!
//! Recommendation-model embedding tables see heavily skewed access: a small
//! set of "hot" rows absorbs most lookups. This crate profiles that skew from
//! a sampled slice of the training data, statistically sizes a hot set to a
//! device-memory budget, packs inputs into all-hot / all-cold mini-batches,
//! schedules the two queues with loss feedback, trains a desk-scale proxy
//! model with explicit host/device embedding copies, and converts schedule
//! traces into training-time and transfer breakdowns under a cost model.
//!
//! Pipeline stages map to modules:
//!
//! - [`dataset`]: ingest or synthesize training data, draw the profile sample
//! - [`profiler`]: per-table access logs and chunk-sampled hot-count estimates
//! - [`calibrator`]: threshold search against a byte budget
//! - [`classifier`]: hot/cold tagging, batch packing, the packed file format
//! - [`scheduler`]: rate-adaptive hot/cold interleaving
//! - [`trainer`]: proxy model with split host/device embedding state
//! - [`simulator`]: cost-model evaluation of schedule traces
//!
//! Every stage is deterministic given its seeds, independent of worker count.

pub mod calibrator;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod hash;
pub mod profiler;
pub mod scalar;
pub mod schema;
pub mod scheduler;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

/// Scalar used by the CLI and acceptance paths.
pub type DefaultReal = f64;

/// Proxy model in the on-device element width implied by 4-byte embeddings.
pub type ProxyModelF32 = trainer::ProxyModel<f32>;
/// Proxy model in full precision, used by gradient checks.
pub type ProxyModelF64 = trainer::ProxyModel<f64>;
/// Split host/device training state, f32 elements.
pub type SplitStateF32 = trainer::SplitState<f32>;
/// Split host/device training state, f64 elements.
pub type SplitStateF64 = trainer::SplitState<f64>;
