//! Meta-aware RL post-training at desk scale.
//!
//! Self-alignment rewards for meta predictions, GRPO/DAPO optimization,
//! predictive gating with early cutoff and notion hints, expert behavior
//! cloning, and a simulated policy and task universe to drive them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod expert;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod rewards;
pub mod textmeta;
pub mod types;

pub use error::{MasaError, Result};
pub use types::*;
