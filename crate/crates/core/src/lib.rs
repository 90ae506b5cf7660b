//! Runtime key pruning for query-based transformer decoders.
//!
//! The crate contains a small multi-layer decoder with cross-attention, the
//! classification-guided key pruner (`tggbc`), a bipartite token-merging
//! baseline, a closed-form FLOPs model and the synthetic workloads used to
//! exercise all of them.
//!
//! Everything numeric is generic over [`numerics::Scalar`]; the aliases at the
//! crate root fix the element type to `f32`, which is what the harness runs.

pub mod error;
pub mod numerics;

pub mod decoder;
pub mod pruner;
pub mod tome;

pub mod flops;
pub mod workload;

pub mod compare;

pub use error::{Error, Result};

pub type Matrix = numerics::Mat<f32>;
pub type Decoder = decoder::Decoder<f32>;
pub type DecoderOutput = decoder::DecoderOutput<f32>;
pub type Workload = workload::Workload<f32>;
pub type Scenario = workload::Scenario<f32>;

