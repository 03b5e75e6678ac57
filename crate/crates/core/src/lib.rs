//! Location encoders for points on the sphere.
//!
//! A location encoder is a positional embedding followed by a small neural
//! network. This crate provides spherical-harmonic and double-Fourier-sphere
//! embeddings, Linear/FcNet/SirenNet heads with hand-written gradients, the
//! checkerboard, land-ocean and gridded-regression benchmarks, and the
//! runner behind the `geoharm` binary.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod dfs;
pub mod encoder;
pub mod error;
pub mod geom;
pub mod grammar;
pub mod legendre;
pub mod matrix;
pub mod net;
pub mod sphharm;
pub mod train;

pub use error::{GeoError, Result};
