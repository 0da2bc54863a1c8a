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

/// Backward Euler HDG diffusion step with a factorization reused across
/// steps of equal size.
pub struct DiffusionSolver {
    spec: ProblemSpec,
    dt: f64,
    state: Arc<DofLayout>,
    control: Arc<DofLayout>,
    cell_rule: QuadratureRule,
    facet_rule: QuadratureRule,
    /// `None` when `kappa == 0`, in which case the step is the identity.
    system: Option<(CondensedSystem, Factorization)>,
}

impl DiffusionSolver {
    pub fn new(
        tri: &Triangulation,
        state: Arc<DofLayout>,
        spec: ProblemSpec,
        dt: f64,
    ) -> Result<Self> {
        if spec.kappa < 0.0 {
            return Err(Error::Parameter(format!(
                "kappa = {} must be non-negative",
                spec.kappa
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("dt = {dt} must be positive")));
        }
        if state.components() != 1 {
            return Err(Error::Layout("diffusion acts on scalar fields".into()));
        }
        let k = state.degree();
        let control = Arc::new(DofLayout::facet(tri, k, 1, &DIRICHLET_MARKERS)?);
        let mut solver = Self {
            dt,
            state,
            control,
            cell_rule: quadrature_rule(Domain::Triangle, 2 * k + 2)?,
            facet_rule: quadrature_rule(Domain::Segment, 2 * k + 2)?,
            system: None,
            spec,
        };
        if solver.spec.kappa > 0.0 {
            let alpha = solver.spec.diffusion_alpha(k)?;
            let zero = DiscreteField::zeros(solver.state.clone());
            let locals = (0..tri.n_cells())
                .into_par_iter()
                .map(|c| solver.local_system(tri, c, alpha, &zero, 0.0))
                .collect::<Result<Vec<_>>>()?;
            let sys = condense(
                locals,
                solver.state.n_dofs(),
                solver.control.n_dofs(),
                &solver.constraints(tri, 0.0)?,
            )?;
            let factor = sys.factor()?;
            solver.system = Some((sys, factor));
        }
        Ok(solver)
    }

    pub fn control_layout(&self) -> &Arc<DofLayout> {
        &self.control
    }

    /// Condensed operator; `None` for the identity step with `kappa == 0`.
    pub fn condensed(&self) -> Option<&CondensedSystem> {
        self.system.as_ref().map(|(s, _)| s)
    }

    /// Uncondensed blocks for `phi_star` at time `t` with their constraints
    /// and the local and facet dof counts.
    pub fn local_systems(
        &self,
        tri: &Triangulation,
        phi_star: &DiscreteField,
        t: f64,
    ) -> Result<(Vec<LocalSystem>, Constraints, usize, usize)> {
        let alpha = self.spec.diffusion_alpha(self.state.degree())?;
        let locals = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| self.local_system(tri, c, alpha, phi_star, t))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            locals,
            self.constraints(tri, t)?,
            self.state.n_dofs(),
            self.control.n_dofs(),
        ))
    }

    fn constraints(&self, tri: &Triangulation, t: f64) -> Result<Constraints> {
        let basis = self.control.facet_basis()?;
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
                    out.insert(self.control.dof(f, j, 0), g[0]);
                }
            }
        }
        Ok(out)
    }

    fn local_system(
        &self,
        tri: &Triangulation,
        c: usize,
        alpha: f64,
        phi_star: &DiscreteField,
        t: f64,
    ) -> Result<LocalSystem> {
        let basis = self.state.cell_basis()?;
        let fb = self.control.facet_basis()?;
        let (nk, nfb) = (basis.dim(), fb.dim());
        let nf = 3 * nfb;
        let geo = tri.geometry(c);
        let kappa = self.spec.kappa;
        let pen = kappa * alpha / tri.h(c);
        let mut a_ll = DMatrix::zeros(nk, nk);
        let mut a_lg = DMatrix::zeros(nk, nf);
        let mut a_gg = DMatrix::zeros(nf, nf);
        let mut n = vec![0.0; nk];
        let mut g = vec![[0.0; 2]; nk];
        let mut m = vec![0.0; nfb];
        for (xi, wq) in self.cell_rule.points.iter().zip(&self.cell_rule.weights) {
            let w = wq * geo.det;
            eval_physical(basis, geo, *xi, &mut n, &mut g);
            for i in 0..nk {
                for j in 0..nk {
                    a_ll[(i, j)] += w
                        * (n[i] * n[j] / self.dt + kappa * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                }
            }
        }
        let mut facet_dofs = Vec::with_capacity(nf);
        for lf in 0..3 {
            let f = tri.cell_facets(c)[lf];
            facet_dofs.extend((0..nfb).map(|j| self.control.dof(f, j, 0)));
            let (normal, len) = tri.facet_normal(c, lf);
            let off = lf * nfb;
            for (sp, wq) in self.facet_rule.points.iter().zip(&self.facet_rule.weights) {
                let w = wq * len;
                let xi = geo.to_reference(&tri.facet_point(f, sp[0]));
                eval_physical(basis, geo, xi, &mut n, &mut g);
                fb.eval(sp[0], &mut m);
                let dn: Vec<f64> = g
                    .iter()
                    .map(|v| v[0] * normal.x + v[1] * normal.y)
                    .collect();
                for i in 0..nk {
                    for j in 0..nk {
                        a_ll[(i, j)] +=
                            w * (-kappa * (dn[j] * n[i] + dn[i] * n[j]) + pen * n[i] * n[j]);
                    }
                    for a in 0..nfb {
                        a_lg[(i, off + a)] += w * (kappa * m[a] * dn[i] - pen * m[a] * n[i]);
                    }
                }
                for a in 0..nfb {
                    for b in 0..nfb {
                        a_gg[(off + a, off + b)] += w * pen * m[a] * m[b];
                    }
                }
            }
        }
        let (b_l, b_g) = self.loads(tri, c, phi_star, t)?;
        Ok(LocalSystem {
            cell: c,
            a_gl: a_lg.transpose(),
            a_ll,
            a_lg,
            a_gg,
            b_l,
            b_g,
            local_dofs: self.state.entity_dofs(c).collect(),
            facet_dofs,
        })
    }

    fn loads(
        &self,
        tri: &Triangulation,
        c: usize,
        phi_star: &DiscreteField,
        t: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let basis = self.state.cell_basis()?;
        let fb = self.control.facet_basis()?;
        let (nk, nfb) = (basis.dim(), fb.dim());
        let geo = tri.geometry(c);
        let mut b_l = DMatrix::zeros(nk, 1);
        let mut b_g = DMatrix::zeros(3 * nfb, 1);
        let mut n = vec![0.0; nk];
        for (xi, wq) in self.cell_rule.points.iter().zip(&self.cell_rule.weights) {
            let w = wq * geo.det;
            basis.eval(*xi, &mut n);
            let x = geo.to_physical(*xi);
            let rhs = (self.spec.source)(&x, t)[0] + phi_star.combine(c, &n)[0] / self.dt;
            for i in 0..nk {
                b_l[(i, 0)] += w * rhs * n[i];
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
                let x = tri.facet_point(f, sp[0]);
                fb.eval(sp[0], &mut m);
                let h = (self.spec.neumann)(&x, &normal, t)[0];
                for a in 0..nfb {
                    b_g[(lf * nfb + a, 0)] -= wq * len * h * m[a];
                }
            }
        }
        Ok((b_l, b_g))
    }

    /// Advances `phi_star` by one step to time `t`; returns `(phi, phibar)`.
    pub fn step(
        &mut self,
        tri: &Triangulation,
        phi_star: &DiscreteField,
        t: f64,
    ) -> Result<(DiscreteField, DiscreteField)> {
        if phi_star.layout().as_ref() != self.state.as_ref() {
            return Err(Error::Layout(
                "intermediate field is not on the diffusion layout".into(),
            ));
        }
        if self.system.is_none() {
            return Ok((
                phi_star.clone().with_time(t),
                facet_average(tri, phi_star, &self.control)?.with_time(t),
            ));
        }
        let loads = (0..tri.n_cells())
            .into_par_iter()
            .map(|c| self.loads(tri, c, phi_star, t))
            .collect::<Result<Vec<_>>>()?;
        let constraints = self.constraints(tri, t)?;
        let (sys, factor) = self.system.as_mut().expect("checked above");
        sys.set_constraint_values(&constraints)?;
        sys.set_loads(loads)?;
        let facet = sys.solve_with(factor)?;
        let local = back_substitute(sys, &facet)?;
        let phi = DiscreteField::from_coefficients(
            self.state.clone(),
            local.column(0).iter().copied().collect(),
        )?;
        let phibar = DiscreteField::from_coefficients(
            self.control.clone(),
            facet.column(0).iter().copied().collect(),
        )?;
        Ok((phi.with_time(t), phibar.with_time(t)))
    }
}

/// Facet field holding the mean of the adjacent cell traces.
fn facet_average(
    tri: &Triangulation,
    field: &DiscreteField,
    control: &Arc<DofLayout>,
) -> Result<DiscreteField> {
    let basis = field.layout().cell_basis()?;
    let fb = control.facet_basis()?;
    let mut out = DiscreteField::zeros(control.clone());
    let mut counts = vec![0.0; control.n_dofs()];
    let mut n = vec![0.0; basis.dim()];
    for f in 0..tri.n_facets() {
        for &(c, _) in tri.facet_adjacency(f) {
            let geo = tri.geometry(c);
            for (j, &s) in fb.nodes().iter().enumerate() {
                basis.eval(geo.to_reference(&tri.facet_point(f, s)), &mut n);
                let d = control.dof(f, j, 0);
                out.coefficients[d] += field.combine(c, &n)[0];
                counts[d] += 1.0;
            }
        }
    }
    for (v, k) in out.coefficients.iter_mut().zip(counts) {
        if k > 0.0 {
            *v /= k;
        }
    }
    Ok(out)
}

/// One diffusion step from `phi_star` to time `t`.
pub fn diffusion_step(
    tri: &Triangulation,
    phi_star: &DiscreteField,
    spec: &ProblemSpec,
    dt: f64,
    t: f64,
) -> Result<(DiscreteField, DiscreteField)> {
    DiffusionSolver::new(tri, phi_star.layout().clone(), spec.clone(), dt)?.step(tri, phi_star, t)
}
