//! Desk-scale simulator of federated continual learning under shifting data.
//!
//! A population of clients trains a shared model over a sequence of tasks.
//! Each client sees its own slice of the data, skewed by demographic makeup,
//! class imbalance, and a task schedule that changes what arrives over time.
//! Everything downstream of a seed is reproducible bit for bit.

pub mod data;
pub mod error;
pub mod federation;
pub mod learner;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
