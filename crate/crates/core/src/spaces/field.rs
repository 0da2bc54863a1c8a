use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{quadrature_rule, reference_basis, DofLayout, Domain, LayoutKind};
use crate::error::{Error, Result};
use crate::mesh::{CellLocation, Point, Triangulation};

/// Coefficient vector over a layout. Values are returned as `[f64; 2]`;
/// scalar fields use only the first entry.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    layout: Arc<DofLayout>,
    pub coefficients: Vec<f64>,
    pub time: Option<f64>,
}

impl DiscreteField {
    pub fn zeros(layout: Arc<DofLayout>) -> Self {
        let n = layout.n_dofs();
        Self {
            layout,
            coefficients: vec![0.0; n],
            time: None,
        }
    }

    pub fn from_coefficients(layout: Arc<DofLayout>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != layout.n_dofs() {
            return Err(Error::Layout(format!(
                "{} coefficients for {} dofs",
                coefficients.len(),
                layout.n_dofs()
            )));
        }
        Ok(Self {
            layout,
            coefficients,
            time: None,
        })
    }

    pub fn layout(&self) -> &Arc<DofLayout> {
        &self.layout
    }

    pub fn components(&self) -> usize {
        self.layout.components()
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout {
            Ok(())
        } else {
            Err(Error::Layout("fields live on different layouts".into()))
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.coefficients.iter_mut().zip(&other.coefficients) {
            *x += a * y;
        }
        Ok(())
    }

    /// Coefficients belonging to cell or facet `entity`.
    pub fn entity_values(&self, entity: usize) -> &[f64] {
        &self.coefficients[self.layout.entity_dofs(entity)]
    }

    fn require_cell(&self) -> Result<()> {
        match self.layout.kind() {
            LayoutKind::CellDiscontinuous => Ok(()),
            LayoutKind::Facet => Err(Error::Layout(
                "facet field cannot be evaluated in a cell interior".into(),
            )),
        }
    }

    pub fn evaluate(&self, loc: &CellLocation) -> Result<[f64; 2]> {
        self.require_cell()?;
        let basis = self.layout.cell_basis()?;
        let mut n = [0.0; 15];
        let n = &mut n[..basis.dim()];
        basis.eval(loc.reference(), n);
        Ok(self.combine(loc.cell, n))
    }

    /// Physical gradient: `grad[comp][direction]`.
    pub fn evaluate_gradient(
        &self,
        tri: &Triangulation,
        loc: &CellLocation,
    ) -> Result<[[f64; 2]; 2]> {
        self.require_cell()?;
        let basis = self.layout.cell_basis()?;
        let mut g = [[0.0; 2]; 15];
        let g = &mut g[..basis.dim()];
        basis.eval_grad(loc.reference(), g);
        let inv = tri.geometry(loc.cell).inverse;
        let vals = self.entity_values(loc.cell);
        let nc = self.components();
        let mut out = [[0.0; 2]; 2];
        for (i, gi) in g.iter().enumerate() {
            let gx = inv[(0, 0)] * gi[0] + inv[(1, 0)] * gi[1];
            let gy = inv[(0, 1)] * gi[0] + inv[(1, 1)] * gi[1];
            for c in 0..nc {
                out[c][0] += vals[i * nc + c] * gx;
                out[c][1] += vals[i * nc + c] * gy;
            }
        }
        Ok(out)
    }

    /// Value on facet `f` at parameter `s` along its global orientation.
    pub fn evaluate_facet(&self, f: usize, s: f64) -> Result<[f64; 2]> {
        let basis = self.layout.facet_basis()?;
        let mut m = [0.0; 5];
        let m = &mut m[..basis.dim()];
        basis.eval(s, m);
        Ok(self.combine(f, m))
    }

    /// `sum_i values[i] * coefficient(entity, i, comp)` per component.
    pub fn combine(&self, entity: usize, values: &[f64]) -> [f64; 2] {
        let vals = self.entity_values(entity);
        let nc = self.components();
        let mut out = [0.0; 2];
        for (i, v) in values.iter().enumerate() {
            for c in 0..nc {
                out[c] += vals[i * nc + c] * v;
            }
        }
        out
    }

    /// Nodal interpolation of `f`.
    pub fn interpolate(
        layout: Arc<DofLayout>,
        tri: &Triangulation,
        f: impl Fn(&Point) -> [f64; 2],
    ) -> Result<Self> {
        let mut field = Self::zeros(layout.clone());
        let nc = layout.components();
        match layout.kind() {
            LayoutKind::CellDiscontinuous => {
                let basis = layout.cell_basis()?;
                for c in 0..tri.n_cells() {
                    let geo = tri.geometry(c);
                    for (i, &xi) in basis.nodes().iter().enumerate() {
                        let v = f(&geo.to_physical(xi));
                        for comp in 0..nc {
                            field.coefficients[layout.dof(c, i, comp)] = v[comp];
                        }
                    }
                }
            }
            LayoutKind::Facet => {
                let basis = layout.facet_basis()?;
                for e in 0..tri.n_facets() {
                    for (j, &s) in basis.nodes().iter().enumerate() {
                        let v = f(&tri.facet_point(e, s));
                        for comp in 0..nc {
                            field.coefficients[layout.dof(e, j, comp)] = v[comp];
                        }
                    }
                }
            }
        }
        Ok(field)
    }

    /// Cellwise L² projection of `f` (cell layouts only).
    pub fn project(
        layout: Arc<DofLayout>,
        tri: &Triangulation,
        f: impl Fn(&Point) -> [f64; 2] + Sync,
        quad_degree: usize,
    ) -> Result<Self> {
        if layout.kind() != LayoutKind::CellDiscontinuous {
            return Err(Error::Layout("L² projection needs a cell layout".into()));
        }
        let rule = quadrature_rule(Domain::Triangle, quad_degree.max(2 * layout.degree()))?;
        let table = reference_basis(layout.degree(), &rule.points)?;
        let n = layout.scalar_dofs_per_entity();
        let nc = layout.components();
        let mut mass = DMatrix::zeros(n, n);
        for (q, w) in rule.weights.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    mass[(i, j)] += w * table.values[(q, i)] * table.values[(q, j)];
                }
            }
        }
        let chol = mass
            .cholesky()
            .ok_or_else(|| Error::Layout("reference mass matrix not SPD".into()))?;
        let blocks: Vec<Vec<f64>> = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| {
                let geo = tri.geometry(c);
                let mut rhs = DMatrix::zeros(n, nc);
                for (q, (xi, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
                    let v = f(&geo.to_physical(*xi));
                    for i in 0..n {
                        for comp in 0..nc {
                            rhs[(i, comp)] += w * table.values[(q, i)] * v[comp];
                        }
                    }
                }
                let x = chol.solve(&rhs);
                let mut out = vec![0.0; n * nc];
                for i in 0..n {
                    for comp in 0..nc {
                        out[i * nc + comp] = x[(i, comp)];
                    }
                }
                out
            })
            .collect();
        let mut field = Self::zeros(layout.clone());
        for (c, b) in blocks.into_iter().enumerate() {
            field.coefficients[layout.entity_dofs(c)].copy_from_slice(&b);
        }
        Ok(field)
    }
}

/// Integral of each component over the domain.
pub fn integrate(field: &DiscreteField, tri: &Triangulation) -> Result<[f64; 2]> {
    field.require_cell()?;
    let rule = quadrature_rule(Domain::Triangle, field.layout.degree())?;
    let table = reference_basis(field.layout.degree(), &rule.points)?;
    let n = field.layout.scalar_dofs_per_entity();
    // Basis integrals on the reference cell; exact for P_k.
    let ref_int: Vec<f64> = (0..n)
        .map(|i| {
            (0..rule.len())
                .map(|q| rule.weights[q] * table.values[(q, i)])
                .sum()
        })
        .collect();
    let mut total = [0.0; 2];
    for c in 0..tri.n_cells() {
        let v = field.combine(c, &ref_int);
        let det = tri.geometry(c).det;
        total[0] += det * v[0];
        total[1] += det * v[1];
    }
    Ok(total)
}

/// `||f - exact||_{L²}` for a scalar field.
pub fn l2_error(
    field: &DiscreteField,
    tri: &Triangulation,
    exact: impl Fn(&Point) -> f64 + Sync,
    quad_degree: usize,
) -> Result<f64> {
    l2_error_vector(field, tri, |p| [exact(p), 0.0], quad_degree)
}

/// `||u - exact||_{L²}` summed over the field's components.
pub fn l2_error_vector(
    field: &DiscreteField,
    tri: &Triangulation,
    exact: impl Fn(&Point) -> [f64; 2] + Sync,
    quad_degree: usize,
) -> Result<f64> {
    field.require_cell()?;
    let rule = quadrature_rule(Domain::Triangle, quad_degree)?;
    let table = reference_basis(field.layout.degree(), &rule.points)?;
    let n = field.layout.scalar_dofs_per_entity();
    let nc = field.components();
    let per_cell: Vec<f64> = (0..tri.n_cells())
        .into_par_iter()
        .map(|c| {
            let geo = tri.geometry(c);
            let mut acc = 0.0;
            let mut row = vec![0.0; n];
            for (q, (xi, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
                for (i, r) in row.iter_mut().enumerate() {
                    *r = table.values[(q, i)];
                }
                let uh = field.combine(c, &row);
                let ue = exact(&geo.to_physical(*xi));
                for comp in 0..nc {
                    acc += w * (uh[comp] - ue[comp]).powi(2);
                }
            }
            acc * geo.det
        })
        .collect();
    Ok(per_cell.iter().sum::<f64>().sqrt())
}
