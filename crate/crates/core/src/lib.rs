//! Residual-based anomaly detection for linear feedback loops under
//! moment-only noise knowledge: distributionally robust threshold tuning,
//! zero-alarm attack simulation, and SDP-based outer bounds on the states an
//! undetected attacker can reach.

pub mod ambiguity;
pub mod attack;
pub mod cli;
pub mod detector;
pub mod error;
pub mod matcore;
pub mod reachset;
pub mod sdp;
pub mod special;
pub mod system;

pub use error::{Error, Result};
