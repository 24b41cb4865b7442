//! Deterministic simulator for autonomous dozer grading: height-map terrain
//! with Gaussian sand piles, blade-soil dynamics, a hierarchical waypoint
//! MDP, the SnP rule-based oracle, bit-exact episode recording and a batch
//! evaluation harness with a length-prefixed wire protocol.

// `!(x > 0.0)` on purpose: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod config;
pub mod dynamics;
pub mod episode;
pub mod error;
pub mod heightmap;
pub mod harness;
pub mod hmap;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod protocol;
pub mod render;
pub mod rng;
pub mod scenario;

pub use config::Config;
pub use error::{Error, Result};
