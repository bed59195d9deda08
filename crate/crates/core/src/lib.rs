//! Open-set recognition with the open margin cosine loss.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]),
//! the cosine-head model with margin, threshold channel, learnable scale and
//! sphere-sampled open-space descriptors ([`model`]), open-set metrics
//! ([`metrics`]), dataset ingestion and the K-trial split protocol
//! ([`data`]), the training/evaluation harness ([`trainer`]) and the
//! command-line front end ([`cli`]).

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;
