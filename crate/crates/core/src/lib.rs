//! Finite element eigenfunction networks.
//!
//! A Laplacian eigenbasis precomputed on the geometry replaces a learned trunk
//! network; a single affine branch layer maps sensor values of the input
//! function to spectral coordinates, and time dependence enters through the
//! exact modal decay.

pub mod cli;
pub mod container;
pub mod eig;
pub mod fem;
pub mod grf;
pub mod learn;
pub mod mesh;
pub mod metrics;
pub mod sim;
pub mod spectral;
pub mod vtk;
