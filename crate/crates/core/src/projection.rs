//! Particle-to-mesh and mesh-to-particle transfers.
//!
//! The constrained projection fits a discontinuous P_k field to particle
//! payloads in the least-squares sense, subject to a discrete advection
//! balance enforced by a P_l multiplier. A single-valued facet field acts
//! both as control and as the numerical flux, which makes the projection
//! locally conservative. The optimality system is condensed onto the facet
//! unknowns.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::condense::{back_substitute, condense, Constraints, LocalSystem};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryMarker, Point, Triangulation};
use crate::particles::{CellBins, ParticleSet};
use crate::spaces::{
    quadrature_rule, DiscreteField, DofLayout, Domain, LayoutKind, QuadratureRule,
};

/// Condition estimate above which a particle mass matrix is rejected.
pub const UNISOLVENCY_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeScheme {
    pub dt: f64,
    /// Weight of the new state in the constraint, in [1/2, 1].
    pub theta: f64,
    /// Weight of the new increment in the particle update, in [1/2, 1].
    pub theta_l: f64,
    /// Facet jump penalty.
    pub beta: f64,
    /// Degree `l` of the multiplier space, 0 or 1.
    pub multiplier_degree: usize,
}

impl TimeScheme {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            theta: 0.5,
            theta_l: 0.5,
            beta: 1e-6,
            multiplier_degree: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.5..=1.0;
        if !(self.dt > 0.0) {
            return Err(Error::Parameter(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !unit.contains(&self.theta) || !unit.contains(&self.theta_l) {
            return Err(Error::Parameter(
                "theta and theta_L must lie in [1/2, 1]".into(),
            ));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Parameter("beta must be positive".into()));
        }
        if self.multiplier_degree > 1 {
            return Err(Error::Parameter("multiplier degree must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Transport velocity seen by the constraint.
#[derive(Clone, Copy)]
pub enum Advection<'a> {
    Analytic(&'a (dyn Fn(&Point) -> Point + Sync)),
    /// Cell velocity `u` and single-valued facet velocity `ubar`.
    Mesh {
        u: &'a DiscreteField,
        ubar: &'a DiscreteField,
    },
}

impl Advection<'_> {
    fn cell_velocity(&self, c: usize, x: &Point, xi: [f64; 2]) -> Result<Point> {
        match self {
            Self::Analytic(a) => Ok(a(x)),
            Self::Mesh { u, .. } => {
                let basis = u.layout().cell_basis()?;
                let mut n = [0.0; 15];
                basis.eval(xi, &mut n[..basis.dim()]);
                let v = u.combine(c, &n[..basis.dim()]);
                Ok(Point::new(v[0], v[1]))
            }
        }
    }

    /// Single-valued normal flux velocity on facet `f` at parameter `s`.
    fn facet_normal_velocity(&self, f: usize, s: f64, x: &Point, n: &Point) -> Result<f64> {
        match self {
            Self::Analytic(a) => Ok(a(x).dot(n)),
            Self::Mesh { ubar, .. } => {
                let v = ubar.evaluate_facet(f, s)?;
                Ok(v[0] * n.x + v[1] * n.y)
            }
        }
    }
}

/// Boundary data for the projection: Dirichlet values for the control on
/// Dirichlet facets and the inflow flux `h_a(x, n)` on Neumann facets.
pub struct ProjectionBc<'a> {
    pub g: &'a (dyn Fn(&Point) -> [f64; 2] + Sync),
    pub h_a: &'a (dyn Fn(&Point, &Point) -> [f64; 2] + Sync),
}

impl ProjectionBc<'static> {
    pub fn homogeneous() -> Self {
        Self {
            g: &|_| [0.0; 2],
            h_a: &|_, _| [0.0; 2],
        }
    }
}

/// Unknown spaces (W_h, T_h, W̄_h) of one projection.
#[derive(Clone, Debug)]
pub struct ProjectionSpaces {
    pub state: Arc<DofLayout>,
    pub multiplier: Arc<DofLayout>,
    pub control: Arc<DofLayout>,
}

impl ProjectionSpaces {
    pub fn new(tri: &Triangulation, k: usize, l: usize, components: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Degree(k));
        }
        Ok(Self {
            state: Arc::new(DofLayout::cell(tri, k, components)?),
            multiplier: Arc::new(DofLayout::cell(tri, l, components)?),
            control: Arc::new(DofLayout::facet(
                tri,
                k,
                components,
                &[
                    BoundaryMarker::DirichletFull,
                    BoundaryMarker::DirichletInflowOnly,
                ],
            )?),
        })
    }

    pub fn components(&self) -> usize {
        self.state.components()
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub state: DiscreteField,
    pub multiplier: DiscreteField,
    pub control: DiscreteField,
}

/// Role of a facet in the constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetRole {
    Interior,
    Dirichlet,
    Neumann,
}

/// Classifies facets: `DirichletInflowOnly` facets are Dirichlet where the
/// mean normal velocity enters the domain and Neumann (free outflow) elsewhere.
pub fn facet_roles(tri: &Triangulation, advection: &Advection) -> Result<Vec<FacetRole>> {
    let rule = quadrature_rule(Domain::Segment, 4)?;
    (0..tri.n_facets())
        .map(|f| {
            if !tri.is_boundary(f) {
                return Ok(FacetRole::Interior);
            }
            Ok(match tri.boundary_marker(f) {
                Some(BoundaryMarker::DirichletFull) => FacetRole::Dirichlet,
                Some(BoundaryMarker::DirichletInflowOnly) => {
                    let (c, i) = tri.facet_adjacency(f)[0];
                    let (n, _) = tri.facet_normal(c, i);
                    let mut flux = 0.0;
                    for (p, w) in rule.points.iter().zip(&rule.weights) {
                        let x = tri.facet_point(f, p[0]);
                        flux += w * advection.facet_normal_velocity(f, p[0], &x, &n)?;
                    }
                    if flux < 0.0 {
                        FacetRole::Dirichlet
                    } else {
                        FacetRole::Neumann
                    }
                }
                Some(BoundaryMarker::Neumann) | None => FacetRole::Neumann,
                Some(BoundaryMarker::Periodic) => FacetRole::Interior,
            })
        })
        .collect()
}

fn payload(set: &ParticleSet, components: usize) -> Result<Vec<[f64; 2]>> {
    match components {
        1 => set
            .scalar
            .as_ref()
            .map(|s| s.iter().map(|&v| [v, 0.0]).collect())
            .ok_or_else(|| Error::Layout("particles carry no scalar payload".into())),
        _ => set
            .vector
            .clone()
            .ok_or_else(|| Error::Layout("particles carry no vector payload".into())),
    }
}

/// Particle mass matrix and right-hand sides for one cell.
fn particle_blocks(
    tri: &Triangulation,
    layout: &DofLayout,
    set: &ParticleSet,
    values: &[[f64; 2]],
    bins: &CellBins,
    c: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let basis = layout.cell_basis()?;
    let nk = basis.dim();
    let nc = layout.components();
    let mut m = DMatrix::zeros(nk, nk);
    let mut b = DMatrix::zeros(nk, nc);
    let mut n = [0.0; 15];
    let n = &mut n[..nk];
    let geo = tri.geometry(c);
    for &p in bins.cell(c) {
        basis.eval(geo.to_reference(&set.positions[p]), n);
        for i in 0..nk {
            for j in 0..nk {
                m[(i, j)] += n[i] * n[j];
            }
            for comp in 0..nc {
                b[(i, comp)] += values[p][comp] * n[i];
            }
        }
    }
    let particles = bins.count(c);
    let condition = condition_estimate(&m);
    if particles == 0 || condition > UNISOLVENCY_LIMIT {
        return Err(Error::Unisolvency {
            cell: c,
            particles,
            condition,
        });
    }
    Ok((m, b))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cellwise least-squares fit of the particle payloads.
pub fn l2_project(
    tri: &Triangulation,
    set: &ParticleSet,
    layout: Arc<DofLayout>,
) -> Result<DiscreteField> {
    if layout.kind() != LayoutKind::CellDiscontinuous {
        return Err(Error::Layout(
            "projection target must be a cell layout".into(),
        ));
    }
    let values = payload(set, layout.components())?;
    let bins = set.bins(tri.n_cells());
    let nc = layout.components();
    let blocks: Vec<Vec<f64>> = (0..tri.n_cells())
        .into_par_iter()
        .map(|c| {
            let (m, b) = particle_blocks(tri, &layout, set, &values, &bins, c)?;
            let x = m
                .cholesky()
                .map(|ch| ch.solve(&b))
                .ok_or(Error::Unisolvency {
                    cell: c,
                    particles: bins.count(c),
                    condition: f64::INFINITY,
                })?;
            let nk = x.nrows();
            Ok((0..nk * nc).map(|d| x[(d / nc, d % nc)]).collect())
        })
        .collect::<Result<_>>()?;
    let mut field = DiscreteField::zeros(layout.clone());
    for (c, b) in blocks.into_iter().enumerate() {
        field.coefficients[layout.entity_dofs(c)].copy_from_slice(&b);
    }
    Ok(field)
}

/// `psi_n + dt ((1 - theta_L) incr_nm1 + theta_L incr_n)`.
pub fn intermediate_field(
    psi_n: &DiscreteField,
    incr_nm1: &DiscreteField,
    incr_n: &DiscreteField,
    ts: &TimeScheme,
) -> Result<DiscreteField> {
    let mut out = psi_n.clone();
    out.add_scaled(ts.dt * (1.0 - ts.theta_l), incr_nm1)?;
    out.add_scaled(ts.dt * ts.theta_l, incr_n)?;
    Ok(out)
}

/// `(phi_m - phi_star) / dt`.
pub fn field_increment(
    phi_m: &DiscreteField,
    phi_star: &DiscreteField,
    dt: f64,
) -> Result<DiscreteField> {
    let mut out = phi_m.clone();
    out.add_scaled(-1.0, phi_star)?;
    out.coefficients.iter_mut().for_each(|v| *v /= dt);
    Ok(out)
}

/// `psi_p += dt ((1 - theta_L) incr_n(x_p^old) + theta_L incr_np1(x_p))`,
/// applied to the payload matching the increment's component count.
pub fn mesh_particle_update(
    set: &mut ParticleSet,
    tri: &Triangulation,
    incr_n: &DiscreteField,
    incr_np1: &DiscreteField,
    dt: f64,
    theta_l: f64,
) -> Result<()> {
    incr_n.check_compatible(incr_np1)?;
    let nc = incr_n.components();
    let deltas: Vec<[f64; 2]> = (0..set.len())
        .into_par_iter()
        .map(|p| {
            if !set.alive[p] {
                return Ok([0.0; 2]);
            }
            let old_cell = set.previous_host[p];
            if old_cell >= tri.n_cells() {
                return Err(Error::Lost(p));
            }
            let old = crate::mesh::CellLocation {
                cell: old_cell,
                barycentric: tri.barycentric(old_cell, &set.previous_positions[p]),
            };
            let new = crate::mesh::CellLocation {
                cell: set.host[p],
                barycentric: tri.barycentric(set.host[p], &set.positions[p]),
            };
            let a = incr_n.evaluate(&old)?;
            let b = incr_np1.evaluate(&new)?;
            Ok([
                dt * ((1.0 - theta_l) * a[0] + theta_l * b[0]),
                dt * ((1.0 - theta_l) * a[1] + theta_l * b[1]),
            ])
        })
        .collect::<Result<_>>()?;
    match nc {
        1 => {
            let s = set
                .scalar
                .as_mut()
                .ok_or_else(|| Error::Layout("particles carry no scalar payload".into()))?;
            for (v, d) in s.iter_mut().zip(&deltas) {
                *v += d[0];
            }
        }
        _ => {
            let s = set
                .vector
                .as_mut()
                .ok_or_else(|| Error::Layout("particles carry no vector payload".into()))?;
            for (v, d) in s.iter_mut().zip(&deltas) {
                v[0] += d[0];
                v[1] += d[1];
            }
        }
    }
    Ok(())
}

/// Assembled optimality system before condensation. The constraint operator
/// is shared by all payload components; each component is one right-hand
/// side.
pub struct ProjectionSystem {
    pub locals: Vec<LocalSystem>,
    pub constraints: Constraints,
    pub n_local: usize,
    pub n_facet: usize,
}

struct Rules {
    cell: QuadratureRule,
    facet: QuadratureRule,
}

impl Rules {
    fn new(k: usize) -> Result<Self> {
        Ok(Self {
            cell: quadrature_rule(Domain::Triangle, 2 * k + 2)?,
            facet: quadrature_rule(Domain::Segment, 2 * k + 2)?,
        })
    }
}

/// Scalar index of cell/facet dof `i` in an interleaved layout.
fn scalar_dof(layout: &DofLayout, entity: usize, i: usize) -> usize {
    layout.offset(entity) / layout.components() + i
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_projection(
    tri: &Triangulation,
    set: &ParticleSet,
    spaces: &ProjectionSpaces,
    psi_star: &DiscreteField,
    advection: &Advection,
    bc: &ProjectionBc,
    ts: &TimeScheme,
) -> Result<ProjectionSystem> {
    ts.validate()?;
    if spaces.multiplier.degree() != ts.multiplier_degree {
        return Err(Error::Parameter(
            "multiplier space degree differs from the time scheme".into(),
        ));
    }
    if *psi_star.layout().as_ref() != *spaces.state {
        return Err(Error::Layout(
            "intermediate field is not on the state layout".into(),
        ));
    }
    let nc = spaces.components();
    let values = payload(set, nc)?;
    let bins = set.bins(tri.n_cells());
    let roles = facet_roles(tri, advection)?;
    let rules = Rules::new(spaces.state.degree())?;
    let n_state = spaces.state.n_dofs() / nc;
    let n_local = n_state + spaces.multiplier.n_dofs() / nc;
    let n_facet = spaces.control.n_dofs() / nc;

    let locals = (0..tri.n_cells())
        .into_par_iter()
        .map(|c| {
            assemble_cell(
                tri, spaces, set, &values, &bins, psi_star, advection, bc, ts, &roles, &rules, c,
                n_state,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut constraints = Constraints::new();
    let fb = spaces.control.facet_basis()?;
    for f in 0..tri.n_facets() {
        if roles[f] == FacetRole::Dirichlet {
            for (j, g) in fb
                .l2_fit(|s| (bc.g)(&tri.facet_point(f, s)))?
                .into_iter()
                .enumerate()
            {
                constraints.insert_columns(scalar_dof(&spaces.control, f, j), g[..nc].to_vec());
            }
        }
    }
    Ok(ProjectionSystem {
        locals,
        constraints,
        n_local,
        n_facet,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble_cell(
    tri: &Triangulation,
    spaces: &ProjectionSpaces,
    set: &ParticleSet,
    values: &[[f64; 2]],
    bins: &CellBins,
    psi_star: &DiscreteField,
    advection: &Advection,
    bc: &ProjectionBc,
    ts: &TimeScheme,
    roles: &[FacetRole],
    rules: &Rules,
    c: usize,
    n_state: usize,
) -> Result<LocalSystem> {
    let bk = spaces.state.cell_basis()?;
    let bl = spaces.multiplier.cell_basis()?;
    let bf = spaces.control.facet_basis()?;
    let (nk, nl, nfb) = (bk.dim(), bl.dim(), bf.dim());
    let nf = 3 * nfb;
    let nc = spaces.components();
    let geo = tri.geometry(c);
    let inv = geo.inverse;
    let (theta, dt, beta) = (ts.theta, ts.dt, ts.beta);

    let mut a_ll = DMatrix::zeros(nk + nl, nk + nl);
    let mut a_lg = DMatrix::zeros(nk + nl, nf);
    let mut a_gg = DMatrix::zeros(nf, nf);
    let mut b_l = DMatrix::zeros(nk + nl, nc);

    let (m, b) = particle_blocks(tri, &spaces.state, set, values, bins, c)?;
    a_ll.view_mut((0, 0), (nk, nk)).copy_from(&m);
    b_l.view_mut((0, 0), (nk, nc)).copy_from(&b);

    let mut n = vec![0.0; nk];
    let mut lv = vec![0.0; nl];
    let mut lg = vec![[0.0; 2]; nl];
    let mut mv = vec![0.0; nfb];

    for (xi, wq) in rules.cell.points.iter().zip(&rules.cell.weights) {
        let w = wq * geo.det;
        let x = geo.to_physical(*xi);
        bk.eval(*xi, &mut n);
        bl.eval(*xi, &mut lv);
        bl.eval_grad(*xi, &mut lg);
        let a = advection.cell_velocity(c, &x, *xi)?;
        let star = psi_star.combine(c, &n);
        for j in 0..nl {
            let gx = inv[(0, 0)] * lg[j][0] + inv[(1, 0)] * lg[j][1];
            let gy = inv[(0, 1)] * lg[j][0] + inv[(1, 1)] * lg[j][1];
            let a_grad = a.x * gx + a.y * gy;
            for i in 0..nk {
                let v = w * (n[i] * lv[j] / dt - theta * a_grad * n[i]);
                a_ll[(i, nk + j)] += v;
                a_ll[(nk + j, i)] += v;
            }
            for comp in 0..nc {
                b_l[(nk + j, comp)] +=
                    w * (star[comp] * lv[j] / dt + (1.0 - theta) * star[comp] * a_grad);
            }
        }
    }

    let mut facet_dofs = Vec::with_capacity(nf);
    for lf in 0..3 {
        let f = tri.cell_facets(c)[lf];
        let (normal, len) = tri.facet_normal(c, lf);
        facet_dofs.extend((0..nfb).map(|j| scalar_dof(&spaces.control, f, j)));
        let off = lf * nfb;
        for (sp, wq) in rules.facet.points.iter().zip(&rules.facet.weights) {
            let s = sp[0];
            let w = wq * len;
            let x = tri.facet_point(f, s);
            let xi = geo.to_reference(&x);
            bk.eval(xi, &mut n);
            bl.eval(xi, &mut lv);
            bf.eval(s, &mut mv);
            for i in 0..nk {
                for j in 0..nk {
                    a_ll[(i, j)] += beta * w * n[i] * n[j];
                }
                for m in 0..nfb {
                    a_lg[(i, off + m)] -= beta * w * n[i] * mv[m];
                }
            }
            for m in 0..nfb {
                for mm in 0..nfb {
                    a_gg[(off + m, off + mm)] += beta * w * mv[m] * mv[mm];
                }
            }
            match roles[f] {
                FacetRole::Interior | FacetRole::Dirichlet => {
                    let an = advection.facet_normal_velocity(f, s, &x, &normal)?;
                    for j in 0..nl {
                        for m in 0..nfb {
                            a_lg[(nk + j, off + m)] += w * an * mv[m] * lv[j];
                        }
                    }
                }
                FacetRole::Neumann => {
                    let an = advection.cell_velocity(c, &x, xi)?.dot(&normal);
                    if an < 0.0 {
                        let h = (bc.h_a)(&x, &normal);
                        for j in 0..nl {
                            for comp in 0..nc {
                                b_l[(nk + j, comp)] -= w * h[comp] * lv[j];
                            }
                        }
                    } else {
                        let star = psi_star.combine(c, &n);
                        for j in 0..nl {
                            for i in 0..nk {
                                let v = theta * w * an * lv[j] * n[i];
                                a_ll[(i, nk + j)] += v;
                                a_ll[(nk + j, i)] += v;
                            }
                            for comp in 0..nc {
                                b_l[(nk + j, comp)] -= (1.0 - theta) * w * an * star[comp] * lv[j];
                            }
                        }
                    }
                }
            }
        }
    }

    let local_dofs = (0..nk)
        .map(|i| scalar_dof(&spaces.state, c, i))
        .chain((0..nl).map(|j| n_state + scalar_dof(&spaces.multiplier, c, j)))
        .collect();
    Ok(LocalSystem {
        cell: c,
        a_gl: a_lg.transpose(),
        a_ll,
        a_lg,
        a_gg,
        b_l,
        b_g: DMatrix::zeros(nf, nc),
        local_dofs,
        facet_dofs,
    })
}

/// Condenses, solves and scatters a projection system into fields.
pub fn solve_projection(
    system: ProjectionSystem,
    spaces: &ProjectionSpaces,
) -> Result<ProjectionResult> {
    let nc = spaces.components();
    let n_state = spaces.state.n_dofs() / nc;
    let sys = condense(
        system.locals,
        system.n_local,
        system.n_facet,
        &system.constraints,
    )?;
    let facet = crate::condense::solve_global(&sys)?;
    let local = back_substitute(&sys, &facet)?;
    let interleave = |layout: &Arc<DofLayout>, src: &DMatrix<f64>, start: usize| {
        let mut out = DiscreteField::zeros(layout.clone());
        for (d, v) in out.coefficients.iter_mut().enumerate() {
            *v = src[(start + d / nc, d % nc)];
        }
        out
    };
    Ok(ProjectionResult {
        state: interleave(&spaces.state, &local, 0),
        multiplier: interleave(&spaces.multiplier, &local, n_state),
        control: interleave(&spaces.control, &facet, 0),
    })
}

/// PDE-constrained projection of scalar particle payloads.
#[allow(clippy::too_many_arguments)]
pub fn constrained_project_scalar(
    tri: &Triangulation,
    set: &ParticleSet,
    spaces: &ProjectionSpaces,
    psi_star: &DiscreteField,
    advection: &Advection,
    bc: &ProjectionBc,
    ts: &TimeScheme,
) -> Result<ProjectionResult> {
    if spaces.components() != 1 {
        return Err(Error::Layout(
            "scalar projection needs scalar spaces".into(),
        ));
    }
    let system = assemble_projection(tri, set, spaces, psi_star, advection, bc, ts)?;
    solve_projection(system, spaces)
}

/// PDE-constrained projection of particle momenta, transported by the mesh
/// velocity `(u_n, ubar_n)`. Both components share one factorization.
#[allow(clippy::too_many_arguments)]
pub fn constrained_project_vector(
    tri: &Triangulation,
    set: &ParticleSet,
    spaces: &ProjectionSpaces,
    v_star: &DiscreteField,
    u_n: &DiscreteField,
    ubar_n: &DiscreteField,
    bc: &ProjectionBc,
    ts: &TimeScheme,
) -> Result<ProjectionResult> {
    if spaces.components() != 2 {
        return Err(Error::Layout(
            "vector projection needs vector spaces".into(),
        ));
    }
    let advection = Advection::Mesh {
        u: u_n,
        ubar: ubar_n,
    };
    let system = assemble_projection(tri, set, spaces, v_star, &advection, bc, ts)?;
    solve_projection(system, spaces)
}

/// Residual of the discrete balance tested with the indicator of each cell:
/// `∫_K (psi - psi*)/dt + ∮ a·n psibar` (plus the Neumann-facet terms).
/// Vanishes to round-off for a solved constrained projection.
#[allow(clippy::too_many_arguments)]
pub fn conservation_residuals(
    tri: &Triangulation,
    result: &ProjectionResult,
    psi_star: &DiscreteField,
    advection: &Advection,
    bc: &ProjectionBc,
    ts: &TimeScheme,
) -> Result<Vec<[f64; 2]>> {
    let k = result.state.layout().degree();
    let rules = Rules::new(k)?;
    let roles = facet_roles(tri, advection)?;
    let bk = result.state.layout().cell_basis()?;
    let nc = result.state.components();
    (0..tri.n_cells())
        .into_par_iter()
        .map(|c| {
            let geo = tri.geometry(c);
            let mut n = vec![0.0; bk.dim()];
            let mut r = [0.0; 2];
            for (xi, wq) in rules.cell.points.iter().zip(&rules.cell.weights) {
                bk.eval(*xi, &mut n);
                let a = result.state.combine(c, &n);
                let b = psi_star.combine(c, &n);
                for comp in 0..nc {
                    r[comp] += wq * geo.det * (a[comp] - b[comp]) / ts.dt;
                }
            }
            for lf in 0..3 {
                let f = tri.cell_facets(c)[lf];
                let (normal, len) = tri.facet_normal(c, lf);
                for (sp, wq) in rules.facet.points.iter().zip(&rules.facet.weights) {
                    let s = sp[0];
                    let w = wq * len;
                    let x = tri.facet_point(f, s);
                    match roles[f] {
                        FacetRole::Interior | FacetRole::Dirichlet => {
                            let an = advection.facet_normal_velocity(f, s, &x, &normal)?;
                            let pb = result.control.evaluate_facet(f, s)?;
                            for comp in 0..nc {
                                r[comp] += w * an * pb[comp];
                            }
                        }
                        FacetRole::Neumann => {
                            let xi = geo.to_reference(&x);
                            let an = advection.cell_velocity(c, &x, xi)?.dot(&normal);
                            bk.eval(xi, &mut n);
                            if an < 0.0 {
                                let h = (bc.h_a)(&x, &normal);
                                for comp in 0..nc {
                                    r[comp] += w * h[comp];
                                }
                            } else {
                                let a = result.state.combine(c, &n);
                                let b = psi_star.combine(c, &n);
                                for comp in 0..nc {
                                    r[comp] +=
                                        w * an * (ts.theta * a[comp] + (1.0 - ts.theta) * b[comp]);
                                }
                            }
                        }
                    }
                }
            }
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::monolithic_oracle_solve;
    use crate::mesh::{generate_disk, generate_periodic_rectangle, generate_rectangle, Diagonal};
    use crate::particles::{seed, SeedingConfig, SeedingMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(n: usize) -> Triangulation {
        generate_rectangle(
            n,
            n,
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
        )
        .unwrap()
    }

    fn particles(
        tri: &Triangulation,
        n: usize,
        s: Option<&dyn Fn(&Point) -> f64>,
        v: Option<&dyn Fn(&Point) -> [f64; 2]>,
    ) -> ParticleSet {
        let cfg = SeedingConfig {
            mode: SeedingMode::Random,
            target_per_cell: n,
            rng_seed: 7,
        };
        seed(tri, &cfg, s, v).unwrap()
    }

    /// Random global polynomial of total degree `k`.
    fn random_polynomial(k: usize, rng: &mut ChaCha8Rng) -> impl Fn(&Point) -> f64 + Sync {
        let terms: Vec<(i32, i32, f64)> = (0..=k as i32)
            .flat_map(|i| (0..=k as i32 - i).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, rng.gen_range(-1.0..1.0)))
            .collect();
        move |p: &Point| {
            terms
                .iter()
                .map(|(i, j, c)| c * p.x.powi(*i) * p.y.powi(*j))
                .sum()
        }
    }

    fn rotation(p: &Point) -> Point {
        Point::new(-p.y, p.x)
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn l2_project_reproduces_constants_and_linears() {
        let m = unit_square(3);
        let s = particles(&m, 20, Some(&|_| 5.0), None);
        for k in 1..=3 {
            let f = l2_project(&m, &s, Arc::new(DofLayout::cell(&m, k, 1).unwrap())).unwrap();
            assert!(
                f.coefficients.iter().all(|c| (c - 5.0).abs() < 1e-12),
                "k = {k}"
            );
        }
        let s = particles(&m, 3, Some(&|p| p.x), None);
        let layout = Arc::new(DofLayout::cell(&m, 1, 1).unwrap());
        let f = l2_project(&m, &s, layout.clone()).unwrap();
        let exact = DiscreteField::interpolate(layout, &m, |p| [p.x, 0.0]).unwrap();
        for (a, b) in f.coefficients.iter().zip(&exact.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn five_particles_cannot_carry_quadratics() {
        let m = unit_square(1);
        let s = particles(&m, 5, Some(&|_| 1.0), None);
        let err = l2_project(&m, &s, Arc::new(DofLayout::cell(&m, 2, 1).unwrap())).unwrap_err();
        assert!(matches!(err, Error::Unisolvency { particles: 5, .. }));
    }

    #[test]
    fn intermediate_field_and_increment_arithmetic() {
        let m = unit_square(2);
        let layout = Arc::new(DofLayout::cell(&m, 1, 1).unwrap());
        let constant =
            |v: f64| DiscreteField::interpolate(layout.clone(), &m, move |_| [v, 0.0]).unwrap();
        let mut ts = TimeScheme::new(0.1);
        let psi = constant(2.0);
        let zero = constant(0.0);
        assert_eq!(
            intermediate_field(&psi, &zero, &zero, &ts)
                .unwrap()
                .coefficients,
            psi.coefficients
        );
        let out = intermediate_field(&psi, &constant(1.0), &constant(3.0), &ts).unwrap();
        assert!(out.coefficients.iter().all(|c| (c - 2.2).abs() < 1e-14));
        ts.theta_l = 1.0;
        let out = intermediate_field(&psi, &constant(1.0), &constant(3.0), &ts).unwrap();
        assert!(out.coefficients.iter().all(|c| (c - 2.3).abs() < 1e-14));

        assert!(field_increment(&psi, &psi, 0.3)
            .unwrap()
            .coefficients
            .iter()
            .all(|&c| c == 0.0));
        let inc = field_increment(&constant(1.5), &constant(1.0), 0.25).unwrap();
        assert!(inc.coefficients.iter().all(|c| (c - 2.0).abs() < 1e-14));
    }

    #[test]
    fn mesh_particle_update_limits() {
        let m = unit_square(2);
        let mut s = particles(&m, 4, Some(&|p| p.x), None);
        let before = s.scalar.clone().unwrap();
        let layout = Arc::new(DofLayout::cell(&m, 2, 1).unwrap());
        let zero = DiscreteField::zeros(layout.clone());
        mesh_particle_update(&mut s, &m, &zero, &zero, 0.1, 0.5).unwrap();
        assert_eq!(s.scalar.as_ref().unwrap(), &before);
        let c = DiscreteField::interpolate(layout, &m, |_| [3.0, 0.0]).unwrap();
        mesh_particle_update(&mut s, &m, &zero, &c, 0.1, 1.0).unwrap();
        for (a, b) in s.scalar.as_ref().unwrap().iter().zip(&before) {
            assert!((a - b - 0.3).abs() < 1e-14);
        }
        s.previous_host[0] = usize::MAX;
        assert!(mesh_particle_update(&mut s, &m, &zero, &c, 0.1, 1.0).is_err());
    }

    #[test]
    fn round_trip_has_zero_multiplier() {
        let m = unit_square(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = TimeScheme::new(0.05);
        for trial in 0..10 {
            let k = 1 + trial % 3;
            let poly = random_polynomial(k, &mut rng);
            let spaces = ProjectionSpaces::new(&m, k, 0, 1).unwrap();
            let exact =
                DiscreteField::interpolate(spaces.state.clone(), &m, |p| [poly(p), 0.0]).unwrap();
            let s = particles(
                &m,
                2 * spaces.state.scalar_dofs_per_entity(),
                Some(&poly),
                None,
            );
            let bc = ProjectionBc {
                g: &|p| [poly(p), 0.0],
                h_a: &|_, _| [0.0; 2],
            };
            let zero = |_: &Point| Point::zeros();
            let r = constrained_project_scalar(
                &m,
                &s,
                &spaces,
                &exact,
                &Advection::Analytic(&zero),
                &bc,
                &ts,
            )
            .unwrap();
            assert!(max_abs(&r.multiplier.coefficients) < 1e-12, "trial {trial}");
            for (a, b) in r.state.coefficients.iter().zip(&exact.coefficients) {
                assert!((a - b).abs() < 1e-12, "trial {trial}");
            }
        }
    }

    #[test]
    fn vector_round_trip_has_zero_multiplier() {
        let m = unit_square(3);
        let f = |p: &Point| [p.x * p.y - 0.5 * p.x * p.x, 1.0 + 0.3 * p.y];
        let spaces = ProjectionSpaces::new(&m, 2, 0, 2).unwrap();
        let exact = DiscreteField::interpolate(spaces.state.clone(), &m, f).unwrap();
        let s = particles(&m, 12, None, Some(&f));
        let zero_u = DiscreteField::zeros(spaces.state.clone());
        let zero_ubar = DiscreteField::zeros(spaces.control.clone());
        let ts = TimeScheme::new(0.1);
        let bc = ProjectionBc {
            g: &f,
            h_a: &|_, _| [0.0; 2],
        };
        let r = constrained_project_vector(&m, &s, &spaces, &exact, &zero_u, &zero_ubar, &bc, &ts)
            .unwrap();
        assert!(max_abs(&r.multiplier.coefficients) < 1e-12);
        for (a, b) in r.state.coefficients.iter().zip(&exact.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }

        let m = generate_periodic_rectangle(
            4,
            4,
            Point::new(-1.0, -1.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
            [true, true],
        )
        .unwrap();
        let spaces = ProjectionSpaces::new(&m, 2, 0, 2).unwrap();
        let zero_u = DiscreteField::zeros(spaces.state.clone());
        let zero_ubar = DiscreteField::zeros(spaces.control.clone());
        let bc = ProjectionBc::homogeneous();
        let s = particles(&m, 12, None, Some(&|_| [0.25, -2.0]));
        let c = DiscreteField::interpolate(spaces.state.clone(), &m, |_| [0.25, -2.0]).unwrap();
        let r =
            constrained_project_vector(&m, &s, &spaces, &c, &zero_u, &zero_ubar, &bc, &ts).unwrap();
        assert!(max_abs(&r.multiplier.coefficients) < 1e-12);
        for (a, b) in r.state.coefficients.iter().zip(&c.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
        for (d, v) in r.control.coefficients.iter().enumerate() {
            assert!((v - [0.25, -2.0][d % 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_intermediate_field_scales_multiplier() {
        let m = unit_square(2);
        let spaces = ProjectionSpaces::new(&m, 1, 0, 1).unwrap();
        let s = particles(&m, 6, Some(&|p| p.x + p.y), None);
        let ts = TimeScheme::new(0.1);
        let bc = ProjectionBc {
            g: &|p| [p.x + p.y, 0.0],
            h_a: &|_, _| [0.0; 2],
        };
        let zero = |_: &Point| Point::zeros();
        let norms: Vec<f64> = [1e-3, 2e-3]
            .iter()
            .map(|&eps| {
                let star = DiscreteField::interpolate(spaces.state.clone(), &m, |p| {
                    [p.x + p.y + eps, 0.0]
                })
                .unwrap();
                let r = constrained_project_scalar(
                    &m,
                    &s,
                    &spaces,
                    &star,
                    &Advection::Analytic(&zero),
                    &bc,
                    &ts,
                )
                .unwrap();
                max_abs(&r.multiplier.coefficients)
            })
            .collect();
        assert!(norms[0] > 1e-8);
        assert!((norms[1] / norms[0] - 2.0).abs() < 1e-6);
    }

    fn hump(p: &Point) -> f64 {
        (-((p.x - 0.15).powi(2) + (p.y - 0.15).powi(2)) / (2.0 * 0.05f64.powi(2))).exp()
    }

    fn rotating_system(
        theta: f64,
        l: usize,
        tri: &Triangulation,
    ) -> (ProjectionSystem, ProjectionSpaces) {
        let spaces = ProjectionSpaces::new(tri, 2, l, 1).unwrap();
        let s = particles(tri, 12, Some(&hump), None);
        let star = l2_project(tri, &s, spaces.state.clone()).unwrap();
        let ts = TimeScheme {
            theta,
            multiplier_degree: l,
            ..TimeScheme::new(0.02)
        };
        let sys = assemble_projection(
            tri,
            &s,
            &spaces,
            &star,
            &Advection::Analytic(&rotation),
            &ProjectionBc::homogeneous(),
            &ts,
        )
        .unwrap();
        (sys, spaces)
    }

    #[test]
    fn zero_degree_multiplier_is_theta_independent() {
        let m = generate_disk(0.5f64.sqrt(), 3).unwrap();
        let (a, _) = rotating_system(0.5, 0, &m);
        let (b, _) = rotating_system(1.0, 0, &m);
        let ca = condense(a.locals, a.n_local, a.n_facet, &a.constraints).unwrap();
        let cb = condense(b.locals, b.n_local, b.n_facet, &b.constraints).unwrap();
        let (ma, mb) = (ca.matrix_dense(), cb.matrix_dense());
        assert!(ma
            .iter()
            .zip(mb.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(ca
            .rhs()
            .iter()
            .zip(cb.rhs().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));

        let (c, _) = rotating_system(0.5, 1, &m);
        let (d, _) = rotating_system(1.0, 1, &m);
        let cc = condense(c.locals, c.n_local, c.n_facet, &c.constraints).unwrap();
        let cd = condense(d.locals, d.n_local, d.n_facet, &d.constraints).unwrap();
        assert!((cc.matrix_dense() - cd.matrix_dense()).amax() > 1e-8);
    }

    #[test]
    fn condensed_projection_matches_monolithic_oracle() {
        let m = generate_rectangle(
            2,
            2,
            Point::new(-0.5, -0.5),
            Point::new(0.5, 0.5),
            Diagonal::Right,
        )
        .unwrap()
        .with_boundary_markers(|_, _| BoundaryMarker::DirichletInflowOnly);
        assert!(m.n_cells() <= 16);
        for l in [0, 1] {
            let (sys, _) = rotating_system(0.5, l, &m);
            let (lo, fo) =
                monolithic_oracle_solve(&sys.locals, sys.n_local, sys.n_facet, &sys.constraints)
                    .unwrap();
            let c = condense(sys.locals, sys.n_local, sys.n_facet, &sys.constraints).unwrap();
            let facet = crate::condense::solve_global(&c).unwrap();
            let local = back_substitute(&c, &facet).unwrap();
            assert!((facet - fo).amax() < 1e-9);
            assert!((local - lo).amax() < 1e-9);
        }
    }

    #[test]
    fn local_conservation_with_inflow_and_outflow() {
        let m = generate_rectangle(
            5,
            5,
            Point::new(-0.5, -0.5),
            Point::new(0.5, 0.5),
            Diagonal::Left,
        )
        .unwrap()
        .with_boundary_markers(|_, _| BoundaryMarker::DirichletInflowOnly);
        let skew = |_: &Point| Point::new(1.0, 0.4);
        let roles = facet_roles(&m, &Advection::Analytic(&skew)).unwrap();
        assert!(roles.contains(&FacetRole::Neumann) && roles.contains(&FacetRole::Dirichlet));
        let spaces = ProjectionSpaces::new(&m, 2, 0, 1).unwrap();
        let f = |p: &Point| (3.0 * p.x).sin() * p.y + 1.0;
        let s = particles(&m, 15, Some(&f), None);
        let star = DiscreteField::interpolate(spaces.state.clone(), &m, |p| {
            [f(&(p - Point::new(0.02, 0.008))), 0.0]
        })
        .unwrap();
        let bc = ProjectionBc {
            g: &|p| [f(p), 0.0],
            h_a: &|p, n| [f(p) * Point::new(1.0, 0.4).dot(n), 0.0],
        };
        for theta in [0.5, 1.0] {
            let ts = TimeScheme {
                theta,
                ..TimeScheme::new(0.02)
            };
            let adv = Advection::Analytic(&skew);
            let r = constrained_project_scalar(&m, &s, &spaces, &star, &adv, &bc, &ts).unwrap();
            let res = conservation_residuals(&m, &r, &star, &adv, &bc, &ts).unwrap();
            let worst = res.iter().fold(0.0f64, |w, r| w.max(r[0].abs()));
            assert!(worst < 1e-12, "theta {theta}: {worst}");
            let err = crate::spaces::l2_error(&r.state, &m, f, 8).unwrap();
            assert!(err < 0.05, "{err}");
        }
    }

    #[test]
    fn mesh_advection_conserves_momentum_locally() {
        let m = generate_periodic_rectangle(
            4,
            4,
            Point::new(-1.0, -1.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
            [true, true],
        )
        .unwrap();
        let spaces = ProjectionSpaces::new(&m, 2, 0, 2).unwrap();
        let tg = |p: &Point| {
            let pi = std::f64::consts::PI;
            [
                -(pi * p.x).cos() * (pi * p.y).sin(),
                (pi * p.x).sin() * (pi * p.y).cos(),
            ]
        };
        let u = DiscreteField::interpolate(spaces.state.clone(), &m, tg).unwrap();
        let ubar = DiscreteField::interpolate(spaces.control.clone(), &m, tg).unwrap();
        let s = particles(
            &m,
            12,
            None,
            Some(&|p| {
                let v = tg(p);
                [v[0] * 1.01, v[1]]
            }),
        );
        let ts = TimeScheme::new(0.1);
        let bc = ProjectionBc::homogeneous();
        let r = constrained_project_vector(&m, &s, &spaces, &u, &u, &ubar, &bc, &ts).unwrap();
        let adv = Advection::Mesh { u: &u, ubar: &ubar };
        let res = conservation_residuals(&m, &r, &u, &adv, &bc, &ts).unwrap();
        let worst = res
            .iter()
            .fold(0.0f64, |w, r| w.max(r[0].abs()).max(r[1].abs()));
        assert!(worst < 1e-12, "{worst}");
        let total = crate::spaces::integrate(&r.state, &m).unwrap();
        let before = crate::spaces::integrate(&u, &m).unwrap();
        assert!((total[0] - before[0]).abs() < 1e-12 && (total[1] - before[1]).abs() < 1e-12);
    }

    #[test]
    fn parameters_are_validated() {
        let mut ts = TimeScheme::new(0.1);
        assert!(ts.validate().is_ok());
        ts.theta = 0.4;
        assert!(ts.validate().is_err());
        ts = TimeScheme {
            beta: 0.0,
            ..TimeScheme::new(0.1)
        };
        assert!(ts.validate().is_err());
        ts = TimeScheme {
            multiplier_degree: 2,
            ..TimeScheme::new(0.1)
        };
        assert!(ts.validate().is_err());
    }
}
