//! Multiscale implicit neural representation of images and volumes.
//!
//! Fits a signal as a Laplacian pyramid in which every scale is tiled by
//! disjoint blocks, each represented by a tiny sinusoidal MLP. Training runs
//! coarse to fine; blocks whose residue is already small are pruned before
//! optimization, and blocks that converge are frozen early. The result
//! decodes at any scale (level of detail) and round-trips through a compact
//! binary format.

pub mod blocks;
pub mod cli;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod pyramid;
pub mod trainer;
pub mod tinynet;

pub use error::{MinerError, Result};
