//! Federated learning simulation with quadratic-programming-guided mutation.
//!
//! The crate implements three server strategies over a shared round loop:
//!
//! * **FedAvg**: dispatch the global model, average the local models.
//! * **FedMut**: dispatch a pool of mutated models, each built by adding a
//!   randomly signed copy of the global gradient to every layer.
//! * **FedQP**: as FedMut, but every layer's mutation is, with probability
//!   `p`, projected onto the halfspace of directions that make an acute angle
//!   with the global gradient ([`mutation::qp_correct`]).
//!
//! The companion book under `book/` walks through each piece; its code
//! listings are compiled as doctests of this crate.

pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod mutation;
pub mod params;
pub mod rng;

pub use data::{
    heterogeneity_report, partition, ClientPartition, Dataset, PartitionMode, PartitionSpec, SyntheticSpec,
};
pub use engine::{
    aggregate, compute_global_gradient, run_experiment, run_round, select_clients, AggregationWeighting, EngineConfig,
    FederatedData, RoundMetrics, ServerState, Strategy,
};
pub use error::{Error, Result};
pub use model::{Architecture, ModelSpec, TrainConfig};
pub use mutation::{
    generate_raw_mutation, mutate_model, qp_correct, ConstraintScope, MutationBase, MutationConfig,
    MutationDistribution, QpResult,
};
pub use params::{axpy, dot, norm_sq, Layer, LayeredParams};
pub use rng::RandomSource;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/parameters.md")]
    mod parameters {}
    #[doc = include_str!("../../../book/src/qp-correction.md")]
    mod qp_correction {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/round-loop.md")]
    mod round_loop {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
