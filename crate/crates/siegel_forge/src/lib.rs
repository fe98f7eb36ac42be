//! Renormalization towers whose Siegel disks have pseudo-circle boundaries.
//!
//! Modules follow the construction bottom-up: cylinder arithmetic and the
//! normal form of periodic entire maps, circular chains and crookedness,
//! conformal maps onto crooked domains, Runge approximation, the tower
//! itself, and verification/rendering.

pub mod chains;
pub mod conformal;
pub mod cylinder;
pub mod geom;
pub mod runge;
pub mod tower;
pub mod verify;

pub use cylinder::{eval_e, CylPoint, PeriodicEntireMap, C64};
