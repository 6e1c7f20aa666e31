//! Grid-based simulator for congested tumor growth with nutrients.
//!
//! The density `rho` evolves under a hard congestion constraint `rho <= 1`
//! realized by Wasserstein projections (one per time step), while the
//! nutrient `n` diffuses and is absorbed by the tumor. The crate provides
//! the two time-stepping schemes, patch-boundary geometry (distance
//! transforms, Hausdorff distance), and a diagnostics layer that turns the
//! model's provable bounds into executable checks.

pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod field;
pub mod geometry;
pub mod nutrient;
pub mod projection;
pub(crate) mod spectral;

pub use field::{FieldRole, Grid2D, ScalarField};
