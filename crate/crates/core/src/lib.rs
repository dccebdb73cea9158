//! Deterministic grid simulator: two-tier super-peer discovery, decentralized
//! resource brokering (NCDA / FLOPS-rank / round-robin), failure injection,
//! self-healing overlays and checkpoint-restart policy, plus a seeded
//! experiment harness that emits per-job CSV and summary statistics.

pub mod broker;
pub mod discovery;
pub mod error;
pub mod experiment;
pub mod model;
pub mod resilience;
pub mod sim;
pub mod simkernel;

pub use error::GridError;
