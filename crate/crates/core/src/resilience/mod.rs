//! Self-healing building blocks: leader election, erasure-coded registry
//! mirroring, and the checkpoint-interval policy with job recovery
//! accounting. All logic here is pure; the simulation drives it through
//! message-timed events.

pub mod checkpoint;
pub mod election;
pub mod erasure;

pub use checkpoint::{next_interval, CheckpointPolicy, FailureHistory};
pub use election::{bully_message_count, elect, elect_superpeer};
pub use erasure::{decode_registry, encode_registry, ErasureParams, Share};
