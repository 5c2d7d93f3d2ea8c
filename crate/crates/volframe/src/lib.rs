//! Volumetric octahedral and odeco frame fields on tetrahedral meshes.
//!
//! Frames are stored as spherical-harmonic coefficient vectors: unit vectors
//! in `R⁹` on the octahedral variety, or vectors in `R¹⁵` on the odeco variety.
//! Projections onto the varieties are computed exactly through semidefinite
//! relaxations, and smooth fields are found with a Riemannian trust-region
//! solver or with diffusion-generated (MBO) iterations.

pub mod error;
pub mod mesh;
pub mod optim;
pub mod projection;
pub mod quartic;
pub mod sdp;
pub mod so3;
pub mod sparse;
pub mod varieties;

pub use error::{Error, Result};
