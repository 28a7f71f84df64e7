//! Reconstruction of a spatially varying dielectric coefficient from
//! backscattered time-domain wave data.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! machinery: structured field grids and piecewise-constant coefficient
//! meshes, an explicit wave solver with its discrete adjoint, the
//! pseudo-frequency (Laplace-domain) pipeline, the layer-stripping
//! reconstruction, adjoint-based Tikhonov refinement on adaptively refined
//! coefficient meshes, data preprocessing and synthetic scenarios.
//!
//! File formats, configuration and the command-line driver live in the
//! companion `cipwave` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod carleman;
pub mod error;
pub mod geometry;
pub mod laplace;
pub mod linsolve;
pub mod mesh;
pub mod pipeline;
pub mod preprocess;
pub mod scenario;
pub mod stage1;
pub mod stage2;
pub mod wave;

pub use error::{Error, Result};
pub use geometry::{BoundaryRegion, BoundaryTag, Layout, RectDomain, SubGrid, TimeAxis, UniformGrid};
pub use mesh::{CoeffCell, QuadtreeCoeffMesh};

/// Reconstructed coefficients are confined to `[EPS_MIN, b]`.
pub const EPS_MIN: f64 = 1.0;
/// Default upper clamp for the coefficient (appearing dielectric constant of metals).
pub const DEFAULT_EPS_MAX: f64 = 25.0;
