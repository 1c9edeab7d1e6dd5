//! Numerical laboratory for the inverse spectral problem of the magnetic
//! Schrodinger operator on simple surfaces.
//!
//! The crate builds the full constructive chain at desk scale:
//! boundary spectral data (Dirichlet eigenvalues plus Neumann traces of the
//! eigenfunctions), geodesic ray transforms with regularized normal-operator
//! inversion, geometric-optics probe solutions of the wave equation, the
//! elliptic-to-hyperbolic Dirichlet-to-Neumann bridge, and end-to-end
//! recovery of the solenoidal magnetic potential and the electric potential
//! with empirical stability-exponent fits.
//!
//! Everything lives on a triangulated disk `M` of radius 1 inside a slightly
//! larger disk `M1`; the metric is Euclidean or conformally Euclidean.
//!
//! ```
//! use magspec::geometry::Metric;
//! use magspec::mesh::DiskMesh;
//!
//! let metric = Metric::euclidean(1.0, 1.2);
//! let mesh = DiskMesh::standard(24, &metric);
//! assert!(mesh.num_nodes() > 1000);
//! ```

pub mod boundary;
pub mod cli;
pub mod config;
pub mod dtn;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod go;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod raytransform;
pub mod reconstruct;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
