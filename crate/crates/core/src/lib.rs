//! Train, prune and probe small fully-connected networks: iterative magnitude
//! pruning with rewinding, receptive-field localization of the resulting
//! masks, preactivation kurtosis, and per-weight cavity attribution.

pub mod binio;
pub mod cavity;
pub mod data;
pub mod decomp;
pub mod error;
pub mod experiment;
pub mod localization;
pub mod matrix;
pub mod nn;
pub mod pruning;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
