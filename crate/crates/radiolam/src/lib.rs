//! Fine-grained 3D radio map estimation from ultra-sparse RSS samples.
//!
//! The pipeline has three blocks: sample projection onto the target plane
//! ([`augment`]), diffusion-based candidate generation with a mixture of
//! experts ([`generation`]), and propagation-guided candidate election
//! ([`election`]). [`scene`] provides the synthetic environment model,
//! [`baselines`] the 3D interpolation baselines, and [`metrics`] the map
//! quality metrics. The `radiolam` binary exposes the whole pipeline as
//! subcommands; `examples/` demonstrates each capability in isolation.

pub mod augment;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod election;
pub mod error;
pub mod generation;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod rmt;
pub mod scene;

pub use error::{Error, Result};
