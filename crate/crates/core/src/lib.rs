//! Trace-driven throughput prediction for asynchronous SGD with parameter
//! servers.
//!
//! A single-worker profile ([`trace_model`]) is preprocessed for a target
//! bandwidth ([`preprocess`]), replayed for many workers by a discrete-event
//! simulation ([`sim_engine`]) whose links multiplex streams as modeled in
//! [`link_scheduler`], and summarized by [`metrics`].

pub mod cli;
pub mod link_scheduler;
pub mod metrics;
pub mod preprocess;
pub mod sim_engine;
pub mod trace_model;

pub use link_scheduler::SchedulerPolicy;
pub use preprocess::{preprocess, OverheadModel, SimProfile};
pub use sim_engine::{generate_trace, simulate, ClusterConfig, SyntheticTrace};
pub use trace_model::{load_profile, ProfileBundle, ResourceKind};

pub(crate) fn serialize_display<T: std::fmt::Display, S: serde::Serializer>(
    value: &T,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    serializer.collect_str(value)
}
