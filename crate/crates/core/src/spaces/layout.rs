use std::ops::Range;

use super::{triangle_dim, LagrangeBasis, SegmentBasis};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryMarker, Triangulation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayoutKind {
    /// P_k per cell, no continuity.
    CellDiscontinuous,
    /// P_k per facet, single-valued; periodic pairs share one dof block.
    Facet,
}

/// Degree-of-freedom map. Vector components are interleaved per scalar dof:
/// global index = `offset(entity) + i * components + comp`.
#[derive(Clone, Debug)]
pub struct DofLayout {
    kind: LayoutKind,
    degree: usize,
    components: usize,
    scalar_per_entity: usize,
    offsets: Vec<usize>,
    n_dofs: usize,
    constrained: Vec<bool>,
    cell_basis: Option<LagrangeBasis>,
    facet_basis: Option<SegmentBasis>,
}

impl PartialEq for DofLayout {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.degree == other.degree
            && self.components == other.components
            && self.offsets == other.offsets
    }
}

impl DofLayout {
    /// Facets carrying a marker in `dirichlet` have their dofs flagged as
    /// constrained (facet layouts only).
    pub fn build(
        tri: &Triangulation,
        kind: LayoutKind,
        degree: usize,
        components: usize,
        dirichlet: &[BoundaryMarker],
    ) -> Result<Self> {
        if !(1..=2).contains(&components) {
            return Err(Error::Layout(format!("{components} components")));
        }
        match kind {
            LayoutKind::CellDiscontinuous => {
                let scalar = triangle_dim(degree);
                let per = scalar * components;
                let offsets = (0..tri.n_cells()).map(|c| c * per).collect();
                Ok(Self {
                    kind,
                    degree,
                    components,
                    scalar_per_entity: scalar,
                    offsets,
                    n_dofs: per * tri.n_cells(),
                    constrained: vec![false; per * tri.n_cells()],
                    cell_basis: Some(LagrangeBasis::new(degree)?),
                    facet_basis: None,
                })
            }
            LayoutKind::Facet => {
                let scalar = degree + 1;
                let per = scalar * components;
                let mut offsets = vec![usize::MAX; tri.n_facets()];
                let mut next = 0;
                for f in 0..tri.n_facets() {
                    if offsets[f] != usize::MAX {
                        continue;
                    }
                    offsets[f] = next;
                    if let Some(img) = tri.periodic_image(f) {
                        offsets[img.facet] = next;
                    }
                    next += per;
                }
                let mut constrained = vec![false; next];
                for f in 0..tri.n_facets() {
                    if tri.is_boundary(f)
                        && tri
                            .boundary_marker(f)
                            .is_some_and(|m| dirichlet.contains(&m))
                    {
                        constrained[offsets[f]..offsets[f] + per].fill(true);
                    }
                }
                Ok(Self {
                    kind,
                    degree,
                    components,
                    scalar_per_entity: scalar,
                    offsets,
                    n_dofs: next,
                    constrained,
                    cell_basis: None,
                    facet_basis: Some(SegmentBasis::new(degree)?),
                })
            }
        }
    }

    pub fn cell(tri: &Triangulation, degree: usize, components: usize) -> Result<Self> {
        Self::build(tri, LayoutKind::CellDiscontinuous, degree, components, &[])
    }

    pub fn facet(
        tri: &Triangulation,
        degree: usize,
        components: usize,
        dirichlet: &[BoundaryMarker],
    ) -> Result<Self> {
        Self::build(tri, LayoutKind::Facet, degree, components, dirichlet)
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Scalar basis functions per cell or facet.
    pub fn scalar_dofs_per_entity(&self) -> usize {
        self.scalar_per_entity
    }

    pub fn dofs_per_entity(&self) -> usize {
        self.scalar_per_entity * self.components
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_entities(&self) -> usize {
        self.offsets.len()
    }

    pub fn offset(&self, entity: usize) -> usize {
        self.offsets[entity]
    }

    pub fn dof(&self, entity: usize, scalar: usize, comp: usize) -> usize {
        self.offsets[entity] + scalar * self.components + comp
    }

    pub fn entity_dofs(&self, entity: usize) -> Range<usize> {
        let o = self.offsets[entity];
        o..o + self.dofs_per_entity()
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    pub fn cell_basis(&self) -> Result<&LagrangeBasis> {
        self.cell_basis
            .as_ref()
            .ok_or_else(|| Error::Layout("facet layout has no cell basis".into()))
    }

    pub fn facet_basis(&self) -> Result<&SegmentBasis> {
        self.facet_basis
            .as_ref()
            .ok_or_else(|| Error::Layout("cell layout has no facet basis".into()))
    }
}
