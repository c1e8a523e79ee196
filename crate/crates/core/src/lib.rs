//! Hierarchical heterogeneous horizontal federated learning for EEG data
//! recorded on different headsets.
//!
//! Each device kind gets its own projector network into a shared
//! 10-dimensional embedding space; one classifier works on that space.
//! Training minimizes cross-entropy plus pairwise MMD² between device
//! embedding distributions, and a simulated server averages projectors within
//! each device group and the classifier over all clients.

pub mod error;
pub mod federation;
pub mod harness;
pub mod ingest;
pub mod mmd;
pub mod models;
pub mod numerics;
pub mod seed;

pub use error::{Error, Result};
