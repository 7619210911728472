//! Projection-based discrete-time consensus on products of unit spheres.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod parametric;
pub mod rng;
pub mod sphere;
pub mod stability;
pub mod weights;

pub use error::{Error, Result};
