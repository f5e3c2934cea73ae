//! Multi-horizon chunked critics with advantage-based chunk-size selection,
//! plus exact tabular oracles for checking the selection rule.

pub mod critics;
pub mod envs;
pub mod harness;
pub mod error;
pub mod mdp;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};
