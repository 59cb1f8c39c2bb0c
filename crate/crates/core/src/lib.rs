//! Control barrier functions synthesized from binary occupancy grids.
//!
//! Obstacles are held at `-a`, cells at least `delta` away from any obstacle
//! (and everything beyond the map edge) at `b`, and the band in between is
//! filled with the discrete harmonic interpolant. The resulting raster is a
//! barrier function whose gradient drives a closed-form CBF-QP safety filter.

pub mod bench;
pub mod cbf_field;
pub mod error;
pub mod geometry;
pub mod krylov;
pub mod laplace_system;
pub mod mapgen;
pub mod ogm;
pub mod robot_models;
pub mod safety_filter;
pub mod sim_harness;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Cell, Point2};
