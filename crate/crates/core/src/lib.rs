//! Volumetric feature-separation analysis for time-dependent multiphase flow.
//!
//! Particles seeded inside a feature at an initial time are advected through
//! a time series of cell-centred velocity and volume-fraction fields. Their
//! feature labels at a later time partition the initial feature into
//! volumetric contributions, whose closed boundaries and time-stamped open
//! separation surfaces are extracted as triangle meshes.

// `!(x > 0.0)` deliberately treats NaN as failing the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advect;
pub mod dataset_io;
pub mod error;
pub mod extract;
pub mod grid;
pub mod labeling;
pub mod plic;
pub mod runtime;
pub mod segment;

pub use error::{Error, Result};
pub use grid::{CellIndex, RectilinearGrid, TimeSeriesDataset, TimeStep, Vec3};
