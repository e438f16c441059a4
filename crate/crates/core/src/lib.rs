//! Semantic clustering for deep reinforcement learning.
//!
//! A PPO agent whose state features are mapped to 2D by a small network
//! trained with a pairwise Student-t similarity loss, while a vector
//! quantization codebook clusters the 2D points online. The cluster code is
//! fed back into the policy. Includes the toy MiniRun platformer, the
//! training loop and the cluster analysis tools.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod analysis;
pub mod diffmath;
pub mod env;
mod error;
pub mod semantic;
pub mod trainer;

pub use error::{Error, Result};
