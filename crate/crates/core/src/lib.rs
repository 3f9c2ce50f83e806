//! Hierarchical slow feature analysis (hSFA) for visual self-localization.
//!
//! The crate bundles the whole pipeline: numerical primitives, linear and
//! quadratic SFA, the patch-wise hierarchical network, a small raycast
//! navigation simulator, representation diagnostics and a PPO agent that
//! consumes extracted features.

pub mod agent;
pub mod analysis;
pub mod error;
pub mod hsfa;
pub mod numcore;
pub mod sfa;
pub mod worldsim;

pub use error::{Error, Result};
