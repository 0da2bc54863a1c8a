//! Particle-mesh transfer and hybridized DG solvers for advection-diffusion
//! and incompressible flow on 2D triangulations.
//!
//! Particles carry the advected state. Each step moves them, projects their
//! payloads onto a discontinuous mesh field (optionally under a discrete
//! conservation constraint), runs an Eulerian diffusion or Stokes step on the
//! mesh and maps the mesh increment back onto the particles.

pub mod condense;
pub mod error;
pub mod hdg;
pub mod mesh;
pub mod particles;
pub mod projection;
pub mod spaces;

pub use error::{Error, Result};
pub use mesh::{BoundaryMarker, CellLocation, Diagonal, Point, Triangulation};
pub use spaces::{DiscreteField, DofLayout, LayoutKind};
