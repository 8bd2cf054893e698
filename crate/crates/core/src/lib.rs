//! Sensor rate allocation for Kalman fusion over rate-limited links.

pub mod ccp;
pub mod convex_engine;
pub mod dc_program;
pub mod ecdq;
pub mod error;
pub mod info_cost;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod network;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testkit;
