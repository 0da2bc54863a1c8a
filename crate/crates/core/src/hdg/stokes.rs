use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{eval_physical, ProblemSpec, DIRICHLET_MARKERS};
use crate::condense::{
    back_substitute, condense, CondensedSystem, Constraints, Factorization, LocalSystem,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryMarker, Triangulation};
use crate::spaces::{quadrature_rule, DiscreteField, DofLayout, Domain, QuadratureRule};

/// Spaces (W_h, W̄_h, Q_h, Q̄_h) of the Stokes step: P_k² cell velocity,
/// P_k² facet velocity, P_{k-1} cell pressure and P_k facet pressure.
#[derive(Clone, Debug)]
pub struct StokesSpaces {
    pub u: Arc<DofLayout>,
    pub ubar: Arc<DofLayout>,
    pub p: Arc<DofLayout>,
    pub pbar: Arc<DofLayout>,
}

impl StokesSpaces {
    pub fn new(tri: &Triangulation, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Degree(k));
        }
        Ok(Self {
            u: Arc::new(DofLayout::cell(tri, k, 2)?),
            ubar: Arc::new(DofLayout::facet(tri, k, 2, &DIRICHLET_MARKERS)?),
            p: Arc::new(DofLayout::cell(tri, k - 1, 1)?),
            pbar: Arc::new(DofLayout::facet(tri, k, 1, &[])?),
        })
    }
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: DiscreteField,
    pub ubar: DiscreteField,
    pub p: DiscreteField,
    pub pbar: DiscreteField,
}

/// Backward Euler HDG Stokes step with the symmetric-gradient viscous form.
/// The operator depends only on the mesh, `nu`, `alpha` and `dt`, so it is
/// factored once and reused by every step.
pub struct StokesSolver {
    asm: Assembler,
    system: CondensedSystem,
    factor: Factorization,
}

struct Assembler {
    spec: ProblemSpec,
    dt: f64,
    alpha: f64,
    spaces: StokesSpaces,
    cell_rule: QuadratureRule,
    facet_rule: QuadratureRule,
    /// Pinned facet-pressure dof when no Neumann boundary fixes the pressure level.
    gauge: Option<usize>,
}

impl StokesSolver {
    pub fn new(tri: &Triangulation, k: usize, spec: ProblemSpec, dt: f64) -> Result<Self> {
        Self::build(tri, k, spec, dt, true)
    }

    /// Solver without a pressure gauge. Fails with [`Error::GaugeMissing`]
    /// when no Neumann boundary fixes the pressure level.
    pub fn without_gauge(
        tri: &Triangulation,
        k: usize,
        spec: ProblemSpec,
        dt: f64,
    ) -> Result<Self> {
        Self::build(tri, k, spec, dt, false)
    }

    fn build(
        tri: &Triangulation,
        k: usize,
        spec: ProblemSpec,
        dt: f64,
        gauge: bool,
    ) -> Result<Self> {
        if !(spec.nu > 0.0) {
            return Err(Error::Parameter(format!(
                "nu = {} must be positive",
                spec.nu
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("dt = {dt} must be positive")));
        }
        let alpha = spec.stokes_alpha(k)?;
        let spaces = StokesSpaces::new(tri, k)?;
        let has_neumann = (0..tri.n_facets())
            .any(|f| tri.is_boundary(f) && tri.boundary_marker(f) == Some(BoundaryMarker::Neumann));
        if !has_neumann && !gauge {
            return Err(Error::GaugeMissing);
        }
        let asm = Assembler {
            spec,
            dt,
            alpha,
            gauge: (!has_neumann).then_some(spaces.ubar.n_dofs()),
            spaces,
            cell_rule: quadrature_rule(Domain::Triangle, 2 * k + 2)?,
            facet_rule: quadrature_rule(Domain::Segment, 2 * k + 2)?,
        };
        let zero = DiscreteField::zeros(asm.spaces.u.clone());
        let locals = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| asm.local_system(tri, c, &zero, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let system = condense(
            locals,
            asm.n_local(),
            asm.n_facet(),
            &asm.constraints(tri, 0.0)?,
        )?;
        let factor = system.factor()?;
        Ok(Self {
            asm,
            system,
            factor,
        })
    }

    pub fn spaces(&self) -> &StokesSpaces {
        &self.asm.spaces
    }

    /// Condensed operator, exposed for diagnostics.
    pub fn condensed(&self) -> &CondensedSystem {
        &self.system
    }

    /// Uncondensed blocks for `u_star` at time `t` with their constraints
    /// and the local and facet dof counts.
    pub fn local_systems(
        &self,
        tri: &Triangulation,
        u_star: &DiscreteField,
        t: f64,
    ) -> Result<(Vec<LocalSystem>, Constraints, usize, usize)> {
        let locals = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| self.asm.local_system(tri, c, u_star, t))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            locals,
            self.asm.constraints(tri, t)?,
            self.asm.n_local(),
            self.asm.n_facet(),
        ))
    }

    /// Advances `u_star` by one step to time `t`.
    pub fn step(
        &mut self,
        tri: &Triangulation,
        u_star: &DiscreteField,
        t: f64,
    ) -> Result<StokesSolution> {
        if u_star.layout().as_ref() != self.asm.spaces.u.as_ref() {
            return Err(Error::Layout(
                "intermediate velocity is not on the Stokes layout".into(),
            ));
        }
        let loads = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| self.asm.loads(tri, c, u_star, t))
            .collect::<Result<Vec<_>>>()?;
        let constraints = self.asm.constraints(tri, t)?;
        self.system.set_constraint_values(&constraints)?;
        self.system.set_loads(loads)?;
        let facet = self.system.solve_with(&self.factor)?;
        let local = back_substitute(&self.system, &facet)?;
        let split = |layout: &Arc<DofLayout>, src: &DMatrix<f64>, start: usize| {
            DiscreteField::from_coefficients(
                layout.clone(),
                src.column(0)
                    .rows(start, layout.n_dofs())
                    .iter()
                    .copied()
                    .collect(),
            )
        };
        let n_u = self.asm.spaces.u.n_dofs();
        let n_ubar = self.asm.spaces.ubar.n_dofs();
        let mut sol = StokesSolution {
            u: split(&self.asm.spaces.u, &local, 0)?.with_time(t),
            ubar: split(&self.asm.spaces.ubar, &facet, 0)?.with_time(t),
            p: split(&self.asm.spaces.p, &local, n_u)?.with_time(t),
            pbar: split(&self.asm.spaces.pbar, &facet, n_ubar)?.with_time(t),
        };
        if self.asm.gauge.is_some() {
            let mean = crate::spaces::integrate(&sol.p, tri)?[0] / tri.total_area();
            sol.p.coefficients.iter_mut().for_each(|v| *v -= mean);
            sol.pbar.coefficients.iter_mut().for_each(|v| *v -= mean);
        }
        Ok(sol)
    }
}

impl Assembler {
    fn n_local(&self) -> usize {
        self.spaces.u.n_dofs() + self.spaces.p.n_dofs()
    }

    fn n_facet(&self) -> usize {
        self.spaces.ubar.n_dofs() + self.spaces.pbar.n_dofs()
    }

    fn constraints(&self, tri: &Triangulation, t: f64) -> Result<Constraints> {
        let basis = self.spaces.ubar.facet_basis()?;
        let mut out = Constraints::new();
        for f in 0..tri.n_facets() {
            if tri.is_boundary(f)
                && tri
                    .boundary_marker(f)
                    .is_some_and(|m| DIRICHLET_MARKERS.contains(&m))
            {
                for (j, g) in basis
                    .l2_fit(|s| (self.spec.dirichlet)(&tri.facet_point(f, s), t))?
                    .into_iter()
                    .enumerate()
                {
                    for comp in 0..2 {
                        out.insert(self.spaces.ubar.dof(f, j, comp), g[comp]);
                    }
                }
            }
        }
        if let Some(d) = self.gauge {
            out.insert(d, 0.0);
        }
        Ok(out)
    }

    fn local_system(
        &self,
        tri: &Triangulation,
        c: usize,
        u_star: &DiscreteField,
        t: f64,
    ) -> Result<LocalSystem> {
        let bu = self.spaces.u.cell_basis()?;
        let bp = self.spaces.p.cell_basis()?;
        let fb = self.spaces.ubar.facet_basis()?;
        let (nk, np, nfb) = (bu.dim(), bp.dim(), fb.dim());
        let nu_l = 2 * nk;
        let per_facet = 3 * nfb;
        let geo = tri.geometry(c);
        let nu = self.spec.nu;
        let pen = 2.0 * nu * self.alpha / tri.h(c);
        let mut a_ll = DMatrix::zeros(nu_l + np, nu_l + np);
        let mut a_lg = DMatrix::zeros(nu_l + np, 3 * per_facet);
        let mut a_gg = DMatrix::zeros(3 * per_facet, 3 * per_facet);
        let mut n = vec![0.0; nk];
        let mut g = vec![[0.0; 2]; nk];
        let mut q = vec![0.0; np];
        let mut m = vec![0.0; nfb];
        let ui = |i: usize, comp: usize| 2 * i + comp;

        for (xi, wq) in self.cell_rule.points.iter().zip(&self.cell_rule.weights) {
            let w = wq * geo.det;
            eval_physical(bu, geo, *xi, &mut n, &mut g);
            bp.eval(*xi, &mut q);
            for i in 0..nk {
                for j in 0..nk {
                    let dot = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                    for cc in 0..2 {
                        for d in 0..2 {
                            let delta = if cc == d { 1.0 } else { 0.0 };
                            a_ll[(ui(i, cc), ui(j, d))] += w
                                * (delta * n[i] * n[j] / self.dt
                                    + nu * (delta * dot + g[i][d] * g[j][cc]));
                        }
                    }
                }
                for (jp, qj) in q.iter().enumerate() {
                    for cc in 0..2 {
                        let v = -w * qj * g[i][cc];
                        a_ll[(ui(i, cc), nu_l + jp)] += v;
                        a_ll[(nu_l + jp, ui(i, cc))] += v;
                    }
                }
            }
        }

        let mut facet_dofs = Vec::with_capacity(3 * per_facet);
        let n_ubar = self.spaces.ubar.n_dofs();
        for lf in 0..3 {
            let f = tri.cell_facets(c)[lf];
            for j in 0..nfb {
                for comp in 0..2 {
                    facet_dofs.push(self.spaces.ubar.dof(f, j, comp));
                }
            }
            facet_dofs.extend((0..nfb).map(|j| n_ubar + self.spaces.pbar.dof(f, j, 0)));
            let fu = |a: usize, comp: usize| lf * per_facet + 2 * a + comp;
            let fp = |a: usize| lf * per_facet + 2 * nfb + a;
            let boundary = tri.is_boundary(f);
            let (normal, len) = tri.facet_normal(c, lf);
            let nv = [normal.x, normal.y];
            for (sp, wq) in self.facet_rule.points.iter().zip(&self.facet_rule.weights) {
                let w = wq * len;
                let xi = geo.to_reference(&tri.facet_point(f, sp[0]));
                eval_physical(bu, geo, xi, &mut n, &mut g);
                fb.eval(sp[0], &mut m);
                let dn: Vec<f64> = g.iter().map(|v| v[0] * nv[0] + v[1] * nv[1]).collect();
                for i in 0..nk {
                    for cc in 0..2 {
                        for j in 0..nk {
                            for d in 0..2 {
                                let delta = if cc == d { 1.0 } else { 0.0 };
                                // -2ν(∇ˢu n)·w - 2ν(∇ˢw n)·u + 2ν(α/h) u·w
                                let v = -nu * (delta * dn[j] + g[j][cc] * nv[d]) * n[i]
                                    - nu * (delta * dn[i] + g[i][d] * nv[cc]) * n[j]
                                    + pen * delta * n[i] * n[j];
                                a_ll[(ui(i, cc), ui(j, d))] += w * v;
                            }
                        }
                        for a in 0..nfb {
                            for d in 0..2 {
                                let delta = if cc == d { 1.0 } else { 0.0 };
                                let v = nu * (delta * dn[i] + g[i][d] * nv[cc]) * m[a]
                                    - pen * delta * n[i] * m[a];
                                a_lg[(ui(i, cc), fu(a, d))] += w * v;
                            }
                            a_lg[(ui(i, cc), fp(a))] += w * m[a] * n[i] * nv[cc];
                        }
                    }
                }
                for a in 0..nfb {
                    for b in 0..nfb {
                        for comp in 0..2 {
                            a_gg[(fu(a, comp), fu(b, comp))] += w * pen * m[a] * m[b];
                        }
                        if boundary {
                            for comp in 0..2 {
                                let v = -w * m[a] * m[b] * nv[comp];
                                a_gg[(fu(a, comp), fp(b))] += v;
                                a_gg[(fp(b), fu(a, comp))] += v;
                            }
                        }
                    }
                }
            }
        }
        let (b_l, b_g) = self.loads(tri, c, u_star, t)?;
        let local_dofs = self
            .spaces
            .u
            .entity_dofs(c)
            .chain(
                self.spaces
                    .p
                    .entity_dofs(c)
                    .map(|d| self.spaces.u.n_dofs() + d),
            )
            .collect();
        Ok(LocalSystem {
            cell: c,
            a_gl: a_lg.transpose(),
            a_ll,
            a_lg,
            a_gg,
            b_l,
            b_g,
            local_dofs,
            facet_dofs,
        })
    }

    fn loads(
        &self,
        tri: &Triangulation,
        c: usize,
        u_star: &DiscreteField,
        t: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let bu = self.spaces.u.cell_basis()?;
        let fb = self.spaces.ubar.facet_basis()?;
        let (nk, np, nfb) = (bu.dim(), self.spaces.p.scalar_dofs_per_entity(), fb.dim());
        let geo = tri.geometry(c);
        let mut b_l = DMatrix::zeros(2 * nk + np, 1);
        let mut b_g = DMatrix::zeros(9 * nfb, 1);
        let mut n = vec![0.0; nk];
        for (xi, wq) in self.cell_rule.points.iter().zip(&self.cell_rule.weights) {
            let w = wq * geo.det;
            bu.eval(*xi, &mut n);
            let f = (self.spec.source)(&geo.to_physical(*xi), t);
            let us = u_star.combine(c, &n);
            for i in 0..nk {
                for comp in 0..2 {
                    b_l[(2 * i + comp, 0)] += w * (f[comp] + us[comp] / self.dt) * n[i];
                }
            }
        }
        let mut m = vec![0.0; nfb];
        for lf in 0..3 {
            let f = tri.cell_facets(c)[lf];
            if !tri.is_boundary(f) || tri.boundary_marker(f) != Some(BoundaryMarker::Neumann) {
                continue;
            }
            let (normal, len) = tri.facet_normal(c, lf);
            for (sp, wq) in self.facet_rule.points.iter().zip(&self.facet_rule.weights) {
                let h = (self.spec.neumann)(&tri.facet_point(f, sp[0]), &normal, t);
                fb.eval(sp[0], &mut m);
                for a in 0..nfb {
                    for comp in 0..2 {
                        b_g[(lf * 3 * nfb + 2 * a + comp, 0)] -= wq * len * h[comp] * m[a];
                    }
                }
            }
        }
        Ok((b_l, b_g))
    }
}

/// One Stokes step from `u_star` to time `t`.
pub fn stokes_step(
    tri: &Triangulation,
    u_star: &DiscreteField,
    spec: &ProblemSpec,
    dt: f64,
    t: f64,
) -> Result<StokesSolution> {
    let k = u_star.layout().degree();
    StokesSolver::new(tri, k, spec.clone(), dt)?.step(tri, u_star, t)
}

/// Largest |∇·u| over the cell quadrature points.
pub fn divergence_infnorm(tri: &Triangulation, u: &DiscreteField) -> Result<f64> {
    if u.components() != 2 {
        return Err(Error::Layout("divergence needs a vector field".into()));
    }
    let rule = quadrature_rule(Domain::Triangle, 2 * u.layout().degree() + 2)?;
    (0..tri.n_cells())
        .into_par_iter()
        .map(|c| {
            rule.points.iter().try_fold(0.0f64, |acc, xi| {
                let loc = crate::mesh::CellLocation {
                    cell: c,
                    barycentric: [1.0 - xi[0] - xi[1], xi[0], xi[1]],
                };
                let g = u.evaluate_gradient(tri, &loc)?;
                Ok(acc.max((g[0][0] + g[1][1]).abs()))
            })
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Largest jump of the normal component of `u` across interior (and
/// periodic) facets, sampled at facet quadrature points.
pub fn normal_jump_infnorm(tri: &Triangulation, u: &DiscreteField) -> Result<f64> {
    if u.components() != 2 {
        return Err(Error::Layout("normal jump needs a vector field".into()));
    }
    let rule = quadrature_rule(Domain::Segment, 2 * u.layout().degree() + 2)?;
    let trace = |c: usize, lf: usize, f: usize, s: f64| -> Result<f64> {
        let x = tri.facet_point(f, s);
        let loc = crate::mesh::CellLocation {
            cell: c,
            barycentric: tri.barycentric(c, &x),
        };
        let v = u.evaluate(&loc)?;
        let (n, _) = tri.facet_normal(c, lf);
        Ok(v[0] * n.x + v[1] * n.y)
    };
    (0..tri.n_facets())
        .into_par_iter()
        .map(|f| {
            let (c0, l0) = tri.facet_adjacency(f)[0];
            let other = match (tri.facet_adjacency(f).get(1), tri.periodic_image(f)) {
                (Some(&pair), _) => pair,
                (None, Some(image)) => tri.facet_adjacency(image.facet)[0],
                (None, None) => return Ok(0.0),
            };
            let image_facet = tri.cell_facets(other.0)[other.1];
            rule.points.iter().try_fold(0.0f64, |acc, p| {
                let a = trace(c0, l0, f, p[0])?;
                let b = trace(other.0, other.1, image_facet, p[0])?;
                Ok(acc.max((a + b).abs()))
            })
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::monolithic_oracle_solve;
    use crate::mesh::{generate_periodic_rectangle, generate_rectangle, Diagonal, Point};
    use crate::spaces::{integrate, l2_error, l2_error_vector};
    use std::f64::consts::PI;

    fn square(n: usize) -> Triangulation {
        generate_rectangle(
            n,
            n,
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
        )
        .unwrap()
    }

    fn tg_box(n: usize) -> Triangulation {
        generate_periodic_rectangle(
            n,
            n,
            Point::new(-1.0, -1.0),
            Point::new(1.0, 1.0),
            Diagonal::Right,
            [true, true],
        )
        .unwrap()
    }

    fn taylor_green(p: &Point) -> [f64; 2] {
        [
            -(PI * p.x).cos() * (PI * p.y).sin(),
            (PI * p.x).sin() * (PI * p.y).cos(),
        ]
    }

    #[test]
    fn divergence_of_simple_fields() {
        let m = square(3);
        let layout = Arc::new(DofLayout::cell(&m, 2, 2).unwrap());
        let f =
            |g: fn(&Point) -> [f64; 2]| DiscreteField::interpolate(layout.clone(), &m, g).unwrap();
        assert!(divergence_infnorm(&m, &f(|_| [1.0, -2.0])).unwrap() < 1e-14);
        assert!(divergence_infnorm(&m, &f(|p| [p.x, -p.y])).unwrap() < 1e-12);
        assert!((divergence_infnorm(&m, &f(|p| [p.x, p.y])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = square(3);
        let mut solver = StokesSolver::new(&m, 2, ProblemSpec::stokes(0.1), 0.1).unwrap();
        let zero = DiscreteField::zeros(solver.spaces().u.clone());
        let s = solver.step(&m, &zero, 0.1).unwrap();
        for f in [&s.u, &s.ubar, &s.p, &s.pbar] {
            assert!(f.coefficients.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn missing_gauge_is_reported() {
        let m = tg_box(2);
        let err = StokesSolver::without_gauge(&m, 2, ProblemSpec::stokes(0.1), 0.1)
            .err()
            .unwrap();
        assert!(matches!(err, Error::GaugeMissing));
    }

    #[test]
    fn taylor_green_step_is_solenoidal_and_conservative() {
        let m = tg_box(8);
        let mut solver = StokesSolver::new(&m, 2, ProblemSpec::stokes(0.01), 0.1).unwrap();
        let star = DiscreteField::interpolate(solver.spaces().u.clone(), &m, taylor_green).unwrap();
        let s = solver.step(&m, &star, 0.1).unwrap();
        assert!(divergence_infnorm(&m, &s.u).unwrap() < 1e-10);
        assert!(normal_jump_infnorm(&m, &s.u).unwrap() < 1e-10);
        let (a, b) = (integrate(&s.u, &m).unwrap(), integrate(&star, &m).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        assert!(integrate(&s.p, &m).unwrap()[0].abs() < 1e-12);
        let decay = (-2.0 * 0.01 * PI * PI * 0.1f64).exp();
        let e = l2_error_vector(&s.u, &m, |p| taylor_green(p).map(|v| v * decay), 8).unwrap();
        assert!(e < 2e-2, "{e}");
    }

    /// Steady manufactured flow on the unit square with Dirichlet walls.
    fn manufactured(n: usize, k: usize) -> (f64, f64, f64) {
        let nu = 1.0;
        let psi_u = |p: &Point| {
            let (x, y) = (p.x, p.y);
            [
                x * x * (1.0 - x).powi(2) * (2.0 * y - 6.0 * y * y + 4.0 * y.powi(3)),
                -y * y * (1.0 - y).powi(2) * (2.0 * x - 6.0 * x * x + 4.0 * x.powi(3)),
            ]
        };
        let pressure = |p: &Point| p.x * p.y - 0.25;
        let source = move |p: &Point, _t: f64| {
            let (x, y) = (p.x, p.y);
            let lap_u = (2.0 - 12.0 * x + 12.0 * x * x) * (2.0 * y - 6.0 * y * y + 4.0 * y.powi(3))
                + x * x * (1.0 - x).powi(2) * (-12.0 + 24.0 * y);
            let lap_v = -(2.0 - 12.0 * y + 12.0 * y * y)
                * (2.0 * x - 6.0 * x * x + 4.0 * x.powi(3))
                - y * y * (1.0 - y).powi(2) * (-12.0 + 24.0 * x);
            [-nu * lap_u + y, -nu * lap_v + x]
        };
        let m = square(n);
        let dt = 1e3;
        let spec = ProblemSpec::stokes(nu)
            .with_source(source)
            .with_dirichlet(move |p, _| psi_u(p));
        let mut solver = StokesSolver::new(&m, k, spec, dt).unwrap();
        let star = DiscreteField::project(solver.spaces().u.clone(), &m, psi_u, 2 * k + 4).unwrap();
        let s = solver.step(&m, &star, dt).unwrap();
        let eu = l2_error_vector(&s.u, &m, psi_u, 2 * k + 4).unwrap();
        let ep = l2_error(&s.p, &m, pressure, 2 * k + 4).unwrap();
        let div = divergence_infnorm(&m, &s.u)
            .unwrap()
            .max(normal_jump_infnorm(&m, &s.u).unwrap());
        (eu, ep, div)
    }

    #[test]
    fn manufactured_flow_converges_optimally() {
        for k in [1, 2] {
            let runs: Vec<_> = [4, 8, 16].iter().map(|&n| manufactured(n, k)).collect();
            for r in &runs {
                assert!(r.2 < 1e-10, "{runs:?}");
            }
            for w in runs.windows(2) {
                let ru = (w[0].0 / w[1].0).log2();
                let rp = (w[0].1 / w[1].1).log2();
                assert!((ru - (k + 1) as f64).abs() < 0.4, "k = {k}: {runs:?}");
                assert!(rp > k as f64 - 0.4, "k = {k}: {runs:?}");
            }
        }
    }

    #[test]
    fn condensation_matches_monolithic_oracle() {
        let m = tg_box(2);
        let spec = ProblemSpec::stokes(0.05).with_source(|p, _| [p.y.sin(), 0.1]);
        let mut solver = StokesSolver::new(&m, 2, spec, 0.1).unwrap();
        let star = DiscreteField::interpolate(solver.spaces().u.clone(), &m, taylor_green).unwrap();
        let (locals, constraints, nl, nf) = solver.local_systems(&m, &star, 0.1).unwrap();
        assert!(m.n_cells() <= 16);
        let (lo, fo) = monolithic_oracle_solve(&locals, nl, nf, &constraints).unwrap();
        let c = condense(locals, nl, nf, &constraints).unwrap();
        let facet = c.solve_with(&c.factor().unwrap()).unwrap();
        let local = back_substitute(&c, &facet).unwrap();
        assert!((facet - &fo).amax() < 1e-9);
        assert!((local - &lo).amax() < 1e-9);
        // The solver additionally removes the mean pressure.
        let s = solver.step(&m, &star, 0.1).unwrap();
        for (a, b) in s.u.coefficients.iter().zip(lo.column(0).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn neumann_outlet_needs_no_gauge() {
        let m = generate_rectangle(
            4,
            2,
            Point::new(0.0, 0.0),
            Point::new(2.0, 1.0),
            Diagonal::Right,
        )
        .unwrap()
        .with_boundary_markers(|mid, _| {
            if (mid.x - 2.0).abs() < 1e-12 {
                BoundaryMarker::Neumann
            } else {
                BoundaryMarker::DirichletFull
            }
        });
        // Outlet traction (pI - 2∇ˢu)n of the exact flow with p = 4 - 2x.
        let spec = ProblemSpec::stokes(1.0)
            .with_dirichlet(|p, _| {
                if p.x < 1e-12 {
                    [p.y * (1.0 - p.y), 0.0]
                } else {
                    [0.0; 2]
                }
            })
            .with_neumann(|p, _, _| [0.0, -(1.0 - 2.0 * p.y)]);
        let mut solver = StokesSolver::without_gauge(&m, 2, spec, 1e6).unwrap();
        let zero = DiscreteField::zeros(solver.spaces().u.clone());
        let s = solver.step(&m, &zero, 1.0).unwrap();
        // Fully developed channel flow is reproduced exactly for k = 2.
        let e = l2_error_vector(&s.u, &m, |p| [p.y * (1.0 - p.y), 0.0], 8).unwrap();
        assert!(e < 1e-6, "{e}");
        let ep = l2_error(&s.p, &m, |p| 4.0 - 2.0 * p.x, 8).unwrap();
        assert!(ep < 1e-6, "{ep}");
        assert!(divergence_infnorm(&m, &s.u).unwrap() < 1e-10);
    }
}
