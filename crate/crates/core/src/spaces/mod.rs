//! Lagrange bases, quadrature, degree-of-freedom layouts and discrete fields.

mod basis;
mod field;
mod layout;
mod quadrature;

pub use basis::{reference_basis, BasisTable, LagrangeBasis, SegmentBasis};
pub use field::{integrate, l2_error, l2_error_vector, DiscreteField};
pub use layout::{DofLayout, LayoutKind};
pub use quadrature::{gauss_legendre, quadrature_rule, Domain, QuadratureRule};

/// Largest polynomial degree supported by the bases.
pub const MAX_DEGREE: usize = 4;

/// Number of scalar P_k basis functions on a triangle.
pub const fn triangle_dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}
